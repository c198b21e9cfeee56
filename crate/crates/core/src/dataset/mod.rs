//! Random scenario generation and dataset splits.

mod profiles;
mod topology;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::{
    load_scenario, save_scenario, Device, DeviceKind, Flow, Hop, Link, Queue, Scenario, ScenarioError,
};

pub use profiles::{log_uniform, sample_profile, ProfileFamily, ProfileParams};
pub use topology::{erdos_renyi, line, random_tree, star, testbed_pool, RouterGraph, TopologyFamily};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("scenario {index}: {msg}")]
    Infeasible { index: usize, msg: String },
    #[error("empty dataset")]
    Empty,
    #[error("split ratios sum to {0}, expected 1")]
    Ratios(f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Generator settings. `node_range` counts forwarding routers; each router a
/// flow starts or ends at gets one endpoint attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub n_scenarios: usize,
    pub node_range: [usize; 2],
    pub topology_family: TopologyFamily,
    pub path_router_range: [usize; 2],
    pub flows_per_scenario: [usize; 2],
    pub profile_family: ProfileFamily,
    /// bits per second on every link
    pub bandwidth: f64,
    /// seconds on every link
    pub propagation_delay: f64,
    pub buffer_size: u32,
    pub packet_size_bytes: [u32; 2],
    /// Per-flow average rate band in bits per second, sampled log-uniformly.
    pub rate_band: [f64; 2],
    pub duration_s: f64,
    pub window_s: f64,
    /// train/val/test
    pub split: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenarios: 100,
            node_range: [5, 8],
            topology_family: TopologyFamily::Testbed,
            path_router_range: [3, 5],
            flows_per_scenario: [4, 10],
            profile_family: ProfileFamily::TrexMb,
            bandwidth: 10e6,
            propagation_delay: 1e-5,
            buffer_size: 32,
            packet_size_bytes: [500, 1500],
            rate_band: [0.2e6, 2e6],
            duration_s: 1.0,
            window_s: 0.1,
            split: [0.75, 0.15, 0.10],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidConfig(m));
        let [n_lo, n_hi] = self.node_range;
        let [p_lo, p_hi] = self.path_router_range;
        if !(3 <= n_lo && n_lo <= n_hi && n_hi <= 128) {
            return bad(format!("node_range {:?} must lie within [3, 128]", self.node_range));
        }
        if !(1 <= p_lo && p_lo <= p_hi && p_hi <= n_hi) {
            return bad(format!(
                "path_router_range {:?} must lie within [1, {n_hi}]",
                self.path_router_range
            ));
        }
        if self.flows_per_scenario[0] == 0 || self.flows_per_scenario[0] > self.flows_per_scenario[1] {
            return bad(format!("flows_per_scenario {:?}", self.flows_per_scenario));
        }
        if let TopologyFamily::ErdosRenyi { p } = self.topology_family {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("erdos_renyi p = {p} must be in (0, 1]"));
            }
        }
        let [s_lo, s_hi] = self.packet_size_bytes;
        if s_lo == 0 || s_lo > s_hi {
            return bad(format!("packet_size_bytes {:?}", self.packet_size_bytes));
        }
        let [r_lo, r_hi] = self.rate_band;
        if !(r_lo > 0.0 && r_lo <= r_hi) {
            return bad(format!("rate_band {:?}", self.rate_band));
        }
        if !(self.bandwidth > 0.0) || !(self.propagation_delay >= 0.0) || self.buffer_size == 0 {
            return bad("bandwidth, propagation_delay and buffer_size must be positive".into());
        }
        if !(self.window_s > 0.0 && self.duration_s >= self.window_s) {
            return bad(format!(
                "duration {} s with window {} s",
                self.duration_s, self.window_s
            ));
        }
        check_ratios(self.split)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn check_ratios(r: [f64; 3]) -> Result<(), DatasetError> {
    let sum: f64 = r.iter().sum();
    if r.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Ratios(sum));
    }
    Ok(())
}

/// Generator stream of scenario `index`; independent of thread count.
fn scenario_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn sample_topology(cfg: &GenConfig, rng: &mut impl Rng, index: usize) -> Result<RouterGraph, DatasetError> {
    let [lo, hi] = cfg.node_range;
    let n = rng.random_range(lo..=hi);
    Ok(match cfg.topology_family {
        TopologyFamily::Line => line(n),
        TopologyFamily::Star => star(n),
        TopologyFamily::Tree => random_tree(n, rng),
        TopologyFamily::ErdosRenyi { p } => erdos_renyi(n, p, 10_000, rng).ok_or_else(|| DatasetError::Infeasible {
            index,
            msg: format!("no connected G({n}, {p}) sample in 10000 draws"),
        })?,
        TopologyFamily::Testbed => {
            let pool: Vec<_> = testbed_pool()
                .into_iter()
                .filter(|g| (lo..=hi).contains(&g.n()))
                .collect();
            if pool.is_empty() {
                return Err(DatasetError::Infeasible {
                    index,
                    msg: format!("no testbed shape has {lo} to {hi} routers"),
                });
            }
            pool[rng.random_range(0..pool.len())].clone()
        }
    })
}

/// One scenario from its own RNG stream.
pub fn generate_scenario(cfg: &GenConfig, index: usize) -> Result<Scenario, DatasetError> {
    let mut rng = scenario_rng(cfg.seed, index);
    let graph = sample_topology(cfg, &mut rng, index)?;
    let paths = graph.shortest_paths();
    let [p_lo, p_hi] = cfg.path_router_range;
    let mut pairs = Vec::new();
    let mut longest = 0;
    for (a, row) in paths.iter().enumerate() {
        for (b, p) in row.iter().enumerate() {
            if let (true, Some(p)) = (a != b, p) {
                longest = longest.max(p.len());
                if (p_lo..=p_hi).contains(&p.len()) {
                    pairs.push((a, b));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(DatasetError::Infeasible {
            index,
            msg: format!(
                "path_router_range [{p_lo}, {p_hi}] is unreachable: the {}-router topology's longest shortest path visits {longest} routers",
                graph.n()
            ),
        });
    }

    let n_flows = rng.random_range(cfg.flows_per_scenario[0]..=cfg.flows_per_scenario[1]);
    let chosen: Vec<(usize, usize)> = (0..n_flows).map(|_| pairs[rng.random_range(0..pairs.len())]).collect();

    let n = graph.n();
    let mut devices: Vec<Device> = (0..n)
        .map(|i| Device {
            id: i as u64,
            kind: DeviceKind::Router,
        })
        .collect();
    let mut host = vec![None; n];
    for r in 0..n {
        if chosen.iter().any(|&(a, b)| a == r || b == r) {
            host[r] = Some(devices.len() as u64);
            devices.push(Device {
                id: devices.len() as u64,
                kind: DeviceKind::Endpoint,
            });
        }
    }

    let mut links = Vec::new();
    let mut link_of = std::collections::BTreeMap::new();
    let mut add = |a: u64, b: u64| {
        let id = links.len() as u64;
        links.push(Link {
            id,
            src_device: a,
            dst_device: b,
            bandwidth: cfg.bandwidth,
            propagation_delay: cfg.propagation_delay,
        });
        link_of.insert((a, b), id);
    };
    for (a, b) in graph.edges() {
        add(a as u64, b as u64);
        add(b as u64, a as u64);
    }
    for (r, h) in host.iter().enumerate() {
        if let Some(h) = *h {
            add(h, r as u64);
            add(r as u64, h);
        }
    }
    let queues = links
        .iter()
        .map(|l| Queue {
            id: l.id,
            device: l.src_device,
            out_link: l.id,
            buffer_size: cfg.buffer_size,
        })
        .collect();

    let flows = chosen
        .iter()
        .enumerate()
        .map(|(id, &(a, b))| {
            let (src, dst) = (host[a].expect("host"), host[b].expect("host"));
            let routers = paths[a][b].as_ref().expect("connected");
            let mut devs = vec![src];
            devs.extend(routers.iter().map(|&r| r as u64));
            devs.push(dst);
            let path = devs
                .windows(2)
                .map(|w| {
                    let l = link_of[&(w[0], w[1])];
                    Hop { link: l, queue: l }
                })
                .collect();
            let bytes = rng.random_range(cfg.packet_size_bytes[0]..=cfg.packet_size_bytes[1]);
            let dur = cfg.duration_s;
            let params = ProfileParams {
                avg_rate: log_uniform(&mut rng, cfg.rate_band[0], cfg.rate_band[1]),
                packet_size: f64::from(bytes * 8),
                start: rng.random_range(0.0..=0.3 * dur),
                stop: rng.random_range(0.7 * dur..=dur),
                duration: dur,
            };
            Flow {
                id: id as u64,
                src_device: src,
                dst_device: dst,
                path,
                packet_size: bytes * 8,
                profile: sample_profile(cfg.profile_family, &params, &mut rng),
            }
        })
        .collect();

    let s = Scenario {
        devices,
        links,
        queues,
        flows,
        duration_s: cfg.duration_s,
        window_s: cfg.window_s,
    };
    s.validate()?;
    Ok(s)
}

/// `cfg.n_scenarios` scenarios; identical for a given config whatever the thread count.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Vec<Scenario>, DatasetError> {
    cfg.validate()?;
    (0..cfg.n_scenarios)
        .into_par_iter()
        .map(|i| generate_scenario(cfg, i))
        .collect()
}

/// Part sizes by largest remainder; ties go to the earlier part.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - sizes[a] as f64, exact[b] - sizes[b] as f64);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

/// Seeded shuffle of `0..n`, cut into train/val/test.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3], DatasetError> {
    if n == 0 {
        return Err(DatasetError::Empty);
    }
    check_ratios(ratios)?;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    idx.shuffle(&mut rng);
    let [a, b, _] = split_sizes(n, ratios);
    let test = idx.split_off(a + b);
    let val = idx.split_off(a);
    Ok([idx, val, test])
}

pub fn split_dataset<T: Clone>(ds: &[T], ratios: [f64; 3], seed: u64) -> Result<[Vec<T>; 3], DatasetError> {
    let parts = split_indices(ds.len(), ratios, seed)?;
    Ok(parts.map(|p| p.iter().map(|&i| ds[i].clone()).collect()))
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: GenConfig,
    /// Scenario file names relative to the dataset directory, in generation order.
    pub scenarios: Vec<String>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn scenario_file_name(index: usize) -> String {
    format!("scenario_{index:05}.json")
}

/// Writes every scenario plus a manifest with the seeded split.
pub fn save_dataset(dir: &Path, cfg: &GenConfig, scenarios: &[Scenario]) -> Result<DatasetManifest, DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let names: Vec<String> = (0..scenarios.len()).map(scenario_file_name).collect();
    for (s, name) in scenarios.iter().zip(&names) {
        save_scenario(s, dir.join(name))?;
    }
    let [train, val, test] = split_dataset(&names, cfg.split, cfg.seed)?;
    let manifest = DatasetManifest {
        config: cfg.clone(),
        scenarios: names,
        train,
        val,
        test,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|source| DatasetError::Io { path, source })?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Manifest { path, source })
}

/// Loads the named scenarios of a dataset directory, in order.
pub fn load_scenarios(dir: &Path, names: &[String]) -> Result<Vec<Scenario>, DatasetError> {
    names
        .par_iter()
        .map(|n| load_scenario(dir.join(n)).map_err(DatasetError::from))
        .collect()
}
