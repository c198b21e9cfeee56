use serde::{Deserialize, Serialize};

use crate::scenario::WindowFeatures;

/// Population z-score statistics of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    /// Zero-variance (or empty) input gets `std = 1`.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut sum) = (0usize, 0.0);
        let values: Vec<f64> = values.into_iter().collect();
        for v in &values {
            n += 1;
            sum += v;
        }
        if n == 0 {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = sum / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Z-scores for the flow average load and packet rate; every other feature
/// passes through untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub avg_load: ZScore,
    pub packet_rate: ZScore,
}

impl Normalizer {
    /// Fits over every (flow, window) sample of the training features.
    pub fn fit<'a>(training: impl IntoIterator<Item = &'a WindowFeatures>) -> Self {
        let mut loads = Vec::new();
        let mut rates = Vec::new();
        for wf in training {
            for f in &wf.flows {
                loads.extend_from_slice(&f.avg_load);
                rates.extend_from_slice(&f.packet_rate);
            }
        }
        Self {
            avg_load: ZScore::fit(loads),
            packet_rate: ZScore::fit(rates),
        }
    }

    pub fn apply(&self, wf: &WindowFeatures) -> WindowFeatures {
        let mut out = wf.clone();
        for f in &mut out.flows {
            f.avg_load.iter_mut().for_each(|x| *x = self.avg_load.apply(*x));
            f.packet_rate.iter_mut().for_each(|x| *x = self.packet_rate.apply(*x));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::FlowWindowFeatures;

    #[test]
    fn closed_form_population_stats() {
        let z = ZScore::fit([1.0, 2.0, 3.0]);
        assert_eq!(z.mean, 2.0);
        assert!((z.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((z.apply(3.0) - 1.224_744_871_391_589).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_gets_unit_std() {
        let z = ZScore::fit([4.0; 5]);
        assert_eq!(z.std, 1.0);
        assert_eq!(z.apply(4.0), 0.0);
    }

    #[test]
    fn normalizing_fit_set_gives_zero_mean_unit_std() {
        let wf = WindowFeatures {
            window_s: 0.1,
            n_windows: 4,
            flows: vec![
                FlowWindowFeatures {
                    flow_id: 0,
                    packet_size: 8000.0,
                    avg_load: vec![1e6, 2e6, 0.0, 5e5],
                    packet_rate: vec![100.0, 250.0, 0.0, 50.0],
                },
                FlowWindowFeatures {
                    flow_id: 1,
                    packet_size: 4000.0,
                    avg_load: vec![3e6, 3e6, 1e6, 0.0],
                    packet_rate: vec![750.0, 750.0, 250.0, 0.0],
                },
            ],
            link_ids: vec![0],
            link_load: vec![vec![0.5; 4]],
            queue_ids: vec![0],
            queue_kind: vec![[1.0, 0.0, 0.0]],
        };
        let n = Normalizer::fit([&wf]);
        let out = n.apply(&wf);
        let loads: Vec<f64> = out.flows.iter().flat_map(|f| f.avg_load.clone()).collect();
        let rates: Vec<f64> = out.flows.iter().flat_map(|f| f.packet_rate.clone()).collect();
        for v in [loads, rates] {
            let z = ZScore::fit(v);
            assert!(z.mean.abs() < 1e-12);
            assert!((z.std - 1.0).abs() < 1e-12);
        }
        assert_eq!(out.flows[1].packet_size, 4000.0);
        assert_eq!(out.link_load, wf.link_load);
    }
}
