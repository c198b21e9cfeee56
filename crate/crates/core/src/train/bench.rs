use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{check_window, infer, Checkpoint, ModelError, PreparedScenario};
use crate::scenario::{compute_window_features, generate_packets, Scenario, TrafficProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub packets: usize,
    pub devices: usize,
    pub flows: usize,
    pub windows: usize,
    pub reps: usize,
    /// graph construction plus forward pass, seconds
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// window feature extraction, seconds (median)
    pub feature_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times inference on each scenario `reps` times on the calling thread.
pub fn bench_inference(
    ckpt: &Checkpoint,
    cases: &[(String, Scenario)],
    reps: usize,
) -> Result<Vec<BenchRow>, ModelError> {
    let reps = reps.max(3);
    cases
        .iter()
        .map(|(label, s)| {
            check_window(ckpt, s)?;
            let (mut model_t, mut feat_t) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
            for _ in 0..reps {
                let t0 = Instant::now();
                let features = compute_window_features(s);
                let t1 = Instant::now();
                let prep = PreparedScenario::from_features(s, &features, &ckpt.normalizer, &ckpt.config)?;
                let p = infer(&ckpt.blocks, &ckpt.config, &prep.graph, &prep.inputs)?;
                let t2 = Instant::now();
                std::hint::black_box(&p);
                feat_t.push((t1 - t0).as_secs_f64());
                model_t.push((t2 - t1).as_secs_f64());
            }
            Ok(BenchRow {
                label: label.clone(),
                packets: s.flows.iter().map(|f| generate_packets(f, s.duration_s).len()).sum(),
                devices: s.devices.len(),
                flows: s.flows.len(),
                windows: s.n_windows(),
                reps,
                min_s: model_t.iter().copied().fold(f64::INFINITY, f64::min),
                max_s: model_t.iter().copied().fold(0.0, f64::max),
                median_s: median(model_t),
                feature_s: median(feat_t),
            })
        })
        .collect()
}

/// Same scenario with every flow emitting exactly `k` times as many packets:
/// each burst train or trace timestamp is repeated `k` times.
pub fn scale_traffic(s: &Scenario, k: usize) -> Scenario {
    let mut out = s.clone();
    for f in &mut out.flows {
        f.profile = match &f.profile {
            TrafficProfile::ConstantBurst(b) => TrafficProfile::MultiBurst {
                components: vec![b.clone(); k],
            },
            TrafficProfile::MultiBurst { components } => TrafficProfile::MultiBurst {
                components: components
                    .iter()
                    .flat_map(|c| std::iter::repeat_n(c.clone(), k))
                    .collect(),
            },
            TrafficProfile::TraceReplay { timestamps } => TrafficProfile::TraceReplay {
                timestamps: timestamps.iter().flat_map(|&t| std::iter::repeat_n(t, k)).collect(),
            },
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use crate::nn::Normalizer;
    use crate::scenario::tests::three_node;

    #[test]
    fn scaling_multiplies_packet_counts_exactly() {
        let s = three_node();
        let base: usize = s.flows.iter().map(|f| generate_packets(f, 1.0).len()).sum();
        let big = scale_traffic(&s, 10);
        let n: usize = big.flows.iter().map(|f| generate_packets(f, 1.0).len()).sum();
        assert_eq!(n, 10 * base);
        big.validate().unwrap();
    }

    #[test]
    fn bench_reports_one_row_per_case() {
        let s = three_node();
        let cfg = ModelConfig::desk();
        let f = compute_window_features(&s);
        let ckpt = Checkpoint::new(cfg.clone(), 0.1, Normalizer::fit([&f]), ModelParams::init(&cfg, 0));
        let cases: Vec<_> = [1, 10]
            .iter()
            .map(|&k| (format!("{k}x"), scale_traffic(&s, k)))
            .collect();
        let rows = bench_inference(&ckpt, &cases, 3).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].packets, 10 * rows[0].packets);
        assert!(rows.iter().all(|r| r.min_s <= r.median_s && r.median_s <= r.max_s));
    }
}
