//! Network scenarios: topology, explicit per-flow routing, traffic profiles
//! and the time-window grid, plus their JSON file format.

mod features;
mod traffic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{compute_window_features, FlowWindowFeatures, WindowFeatures};
pub use traffic::generate_packets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Router,
    Switch,
    Endpoint,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 3] = [DeviceKind::Router, DeviceKind::Switch, DeviceKind::Endpoint];

    pub fn one_hot(self) -> [f64; 3] {
        match self {
            DeviceKind::Router => [1.0, 0.0, 0.0],
            DeviceKind::Switch => [0.0, 1.0, 0.0],
            DeviceKind::Endpoint => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: u64,
    pub kind: DeviceKind,
}

/// Directed link; a physical cable is two of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: u64,
    pub src_device: u64,
    pub dst_device: u64,
    /// bits per second
    pub bandwidth: f64,
    /// seconds
    pub propagation_delay: f64,
}

/// Output queue feeding exactly one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Queue {
    pub id: u64,
    pub device: u64,
    pub out_link: u64,
    /// packets that may wait behind the one in service
    pub buffer_size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub link: u64,
    pub queue: u64,
}

/// Back-to-back emission at `rate` during `[start + k*period, start + k*period + burst_duration)`,
/// clipped to `[start, stop)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstSpec {
    /// bits per second while bursting
    pub rate: f64,
    pub burst_duration: f64,
    pub period: f64,
    pub start: f64,
    pub stop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrafficProfile {
    ConstantBurst(BurstSpec),
    /// Packets of every component, merged.
    MultiBurst {
        components: Vec<BurstSpec>,
    },
    /// Explicit generation times in seconds, ascending.
    TraceReplay {
        timestamps: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: u64,
    pub src_device: u64,
    pub dst_device: u64,
    pub path: Vec<Hop>,
    /// bits, constant for the flow
    pub packet_size: u32,
    pub profile: TrafficProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub devices: Vec<Device>,
    pub links: Vec<Link>,
    pub queues: Vec<Queue>,
    pub flows: Vec<Flow>,
    pub duration_s: f64,
    pub window_s: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at line {line}, column {column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("flow {flow}: unknown queue id {queue}")]
    UnknownQueue { flow: u64, queue: u64 },
    #[error("flow {flow}: unknown link id {link}")]
    UnknownLink { flow: u64, link: u64 },
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// Relative slack when checking that the duration is a whole number of windows.
const WINDOW_GRID_TOLERANCE: f64 = 1e-9;

impl Scenario {
    /// Number of windows `duration / window`.
    pub fn n_windows(&self) -> usize {
        (self.duration_s / self.window_s).round() as usize
    }

    /// Window index of a generation time (floor, clamped to the last window).
    pub fn window_of(&self, t: f64) -> usize {
        window_index(t, self.window_s, self.n_windows())
    }

    pub fn device(&self, id: u64) -> Option<&Device> {
        self.devices.get(id as usize).filter(|d| d.id == id)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (i, d) in self.devices.iter().enumerate() {
            if d.id != i as u64 {
                return Err(invalid(format!(
                    "device ids must be dense 0..N-1 in order; position {i} has id {}",
                    d.id
                )));
            }
        }

        let mut links = BTreeMap::new();
        for l in &self.links {
            if links.insert(l.id, l).is_some() {
                return Err(invalid(format!("duplicate link id {}", l.id)));
            }
            if self.device(l.src_device).is_none() || self.device(l.dst_device).is_none() {
                return Err(invalid(format!("link {} references an unknown device", l.id)));
            }
            if l.src_device == l.dst_device {
                return Err(invalid(format!("link {} is a self-loop", l.id)));
            }
            if !(l.bandwidth > 0.0 && l.bandwidth.is_finite()) {
                return Err(invalid(format!("link {} bandwidth must be > 0", l.id)));
            }
            if !(l.propagation_delay >= 0.0 && l.propagation_delay.is_finite()) {
                return Err(invalid(format!("link {} propagation_delay must be >= 0", l.id)));
            }
        }

        let mut queues = BTreeMap::new();
        let mut fed_links = BTreeSet::new();
        for q in &self.queues {
            if queues.insert(q.id, q).is_some() {
                return Err(invalid(format!("duplicate queue id {}", q.id)));
            }
            let Some(link) = links.get(&q.out_link) else {
                return Err(invalid(format!("queue {} feeds unknown link {}", q.id, q.out_link)));
            };
            if link.src_device != q.device {
                return Err(invalid(format!(
                    "queue {} sits on device {} but feeds link {} leaving device {}",
                    q.id, q.device, link.id, link.src_device
                )));
            }
            if q.buffer_size == 0 {
                return Err(invalid(format!("queue {} buffer_size must be > 0", q.id)));
            }
            if !fed_links.insert(q.out_link) {
                return Err(invalid(format!("link {} is fed by more than one queue", q.out_link)));
            }
        }
        if fed_links.len() != links.len() {
            return Err(invalid("every link needs exactly one queue"));
        }

        if self.flows.is_empty() {
            return Err(invalid("at least one flow is required"));
        }
        let mut flow_ids = BTreeSet::new();
        for f in &self.flows {
            if !flow_ids.insert(f.id) {
                return Err(invalid(format!("duplicate flow id {}", f.id)));
            }
            self.validate_flow(f, &links, &queues)?;
        }

        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(invalid("window_s must be > 0"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s must be > 0"));
        }
        let ratio = self.duration_s / self.window_s;
        if (ratio - ratio.round()).abs() > WINDOW_GRID_TOLERANCE * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(invalid(format!(
                "duration_s {} is not a positive integer multiple of window_s {}",
                self.duration_s, self.window_s
            )));
        }
        Ok(())
    }

    fn validate_flow(
        &self,
        f: &Flow,
        links: &BTreeMap<u64, &Link>,
        queues: &BTreeMap<u64, &Queue>,
    ) -> Result<(), ScenarioError> {
        for (end, id) in [("src", f.src_device), ("dst", f.dst_device)] {
            match self.device(id) {
                Some(d) if d.kind == DeviceKind::Endpoint => {}
                Some(_) => return Err(invalid(format!("flow {} {end} device {id} is not an endpoint", f.id))),
                None => return Err(invalid(format!("flow {} {end} device {id} does not exist", f.id))),
            }
        }
        if f.packet_size == 0 {
            return Err(invalid(format!("flow {} packet_size must be > 0", f.id)));
        }
        if f.path.is_empty() {
            return Err(invalid(format!("flow {} has an empty path", f.id)));
        }
        let mut at = f.src_device;
        for (pos, hop) in f.path.iter().enumerate() {
            let link = links.get(&hop.link).ok_or(ScenarioError::UnknownLink {
                flow: f.id,
                link: hop.link,
            })?;
            let queue = queues.get(&hop.queue).ok_or(ScenarioError::UnknownQueue {
                flow: f.id,
                queue: hop.queue,
            })?;
            if queue.out_link != link.id {
                return Err(invalid(format!(
                    "flow {} hop {pos}: queue {} does not feed link {}",
                    f.id, queue.id, link.id
                )));
            }
            if queue.device != at {
                return Err(invalid(format!(
                    "flow {} hop {pos}: path is not contiguous (at device {at}, queue on device {})",
                    f.id, queue.device
                )));
            }
            at = link.dst_device;
        }
        if at != f.dst_device {
            return Err(invalid(format!(
                "flow {} path ends at device {at}, not at dst {}",
                f.id, f.dst_device
            )));
        }
        validate_profile(f.id, &f.profile)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

fn validate_burst(flow: u64, b: &BurstSpec) -> Result<(), ScenarioError> {
    if !(b.rate > 0.0 && b.rate.is_finite()) {
        return Err(invalid(format!("flow {flow}: burst rate must be > 0")));
    }
    if !(b.period > 0.0) || !(b.burst_duration >= 0.0) || b.burst_duration > b.period {
        return Err(invalid(format!(
            "flow {flow}: need 0 <= burst_duration <= period and period > 0"
        )));
    }
    if !(b.start >= 0.0) || !(b.stop >= b.start) {
        return Err(invalid(format!("flow {flow}: need 0 <= start <= stop")));
    }
    Ok(())
}

fn validate_profile(flow: u64, p: &TrafficProfile) -> Result<(), ScenarioError> {
    match p {
        TrafficProfile::ConstantBurst(b) => validate_burst(flow, b),
        TrafficProfile::MultiBurst { components } => {
            if components.is_empty() {
                return Err(invalid(format!("flow {flow}: multi-burst needs components")));
            }
            components.iter().try_for_each(|b| validate_burst(flow, b))
        }
        TrafficProfile::TraceReplay { timestamps } => {
            if timestamps.iter().any(|t| !t.is_finite()) {
                return Err(invalid(format!("flow {flow}: non-finite trace timestamp")));
            }
            if timestamps.windows(2).any(|w| w[1] < w[0]) {
                return Err(invalid(format!("flow {flow}: trace timestamps must be ascending")));
            }
            Ok(())
        }
    }
}

pub(crate) fn window_index(t: f64, window: f64, n_windows: usize) -> usize {
    let w = (t / window).floor();
    if w <= 0.0 {
        0
    } else {
        (w as usize).min(n_windows.saturating_sub(1))
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text, &path.display().to_string())
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    fs::write(path, s.to_json()).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}
