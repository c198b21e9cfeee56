//! Traffic presets for generated flows.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::scenario::{BurstSpec, TrafficProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileFamily {
    /// Regular short bursts, each under 1 ms.
    TrexS,
    /// Sum of 2 to 5 burst trains of differing intensity and spacing.
    TrexMb,
    /// Poisson arrivals whose rate changes every 100 ms, replayed as a trace.
    Trace,
}

/// Inputs shared by every preset.
#[derive(Debug, Clone, Copy)]
pub struct ProfileParams {
    /// average bits per second over the active interval
    pub avg_rate: f64,
    pub packet_size: f64,
    pub start: f64,
    pub stop: f64,
    pub duration: f64,
}

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

pub fn sample_profile(family: ProfileFamily, p: &ProfileParams, rng: &mut impl Rng) -> TrafficProfile {
    match family {
        ProfileFamily::TrexS => {
            let period = rng.random_range(1e-3..10e-3);
            let burst = rng.random_range(0.1e-3..0.9e-3);
            TrafficProfile::ConstantBurst(BurstSpec {
                rate: p.avg_rate * period / burst,
                burst_duration: burst,
                period,
                start: p.start,
                stop: p.stop,
            })
        }
        ProfileFamily::TrexMb => {
            let k = rng.random_range(2..=5);
            let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let components = weights
                .iter()
                .map(|w| {
                    let duty = rng.random_range(0.2..0.8);
                    let burst = rng.random_range(2e-3..40e-3);
                    let period = burst / duty;
                    BurstSpec {
                        rate: p.avg_rate * w / total / duty,
                        burst_duration: burst,
                        period,
                        start: p.start + rng.random_range(0.0..period),
                        stop: p.stop,
                    }
                })
                .collect();
            TrafficProfile::MultiBurst { components }
        }
        ProfileFamily::Trace => {
            let mut timestamps = Vec::new();
            let segment = 0.1;
            let mut seg_start = p.start;
            while seg_start < p.stop {
                let seg_end = (seg_start + segment).min(p.stop);
                let pps = p.avg_rate * log_uniform(rng, 0.25, 4.0) / p.packet_size;
                let gap = Exp::new(pps).expect("positive rate");
                let mut t = seg_start + gap.sample(rng);
                while t < seg_end {
                    timestamps.push(t);
                    t += gap.sample(rng);
                }
                seg_start = seg_end;
            }
            timestamps.retain(|&t| t < p.duration);
            TrafficProfile::TraceReplay { timestamps }
        }
    }
}
