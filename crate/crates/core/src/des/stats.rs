use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PacketRecord;
use crate::scenario::window_index;

/// Five summary statistics of a sample, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub avg: f64,
    pub median: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

impl Stats {
    pub const NAMES: [&'static str; 5] = ["avg", "median", "p90", "p95", "p99"];

    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let avg = (sorted.iter().sum::<f64>() / sorted.len() as f64).clamp(lo, hi);
        Some(Self {
            avg,
            median: percentile(&sorted, 0.5),
            p90: percentile(&sorted, 0.9),
            p95: percentile(&sorted, 0.95),
            p99: percentile(&sorted, 0.99),
        })
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.avg, self.median, self.p90, self.p95, self.p99]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            avg: v[0],
            median: v[1],
            p90: v[2],
            p95: v[3],
            p99: v[4],
        }
    }
}

/// Linear interpolation between order statistics of an ascending sample
/// (`h = (n - 1) q`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "percentile of an empty sample");
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Statistics of the packets generated by one flow within one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    /// delivered packets
    pub packet_count: u64,
    pub drop_count: u64,
    pub delay: Option<Stats>,
    pub jitter: Option<Stats>,
}

impl WindowStats {
    /// Delay statistics followed by jitter statistics; `None` where absent.
    pub fn targets(&self) -> [Option<f64>; 10] {
        let mut out = [None; 10];
        if let Some(d) = &self.delay {
            for (o, v) in out[..5].iter_mut().zip(d.to_array()) {
                *o = Some(v);
            }
        }
        if let Some(j) = &self.jitter {
            for (o, v) in out[5..].iter_mut().zip(j.to_array()) {
                *o = Some(v);
            }
        }
        out
    }
}

/// Per-flow, per-window statistics keyed by flow id then window index.
/// Windows in which a flow generated nothing have no entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth {
    pub flows: BTreeMap<u64, BTreeMap<usize, WindowStats>>,
}

impl GroundTruth {
    pub fn get(&self, flow: u64, window: usize) -> Option<&WindowStats> {
        self.flows.get(&flow).and_then(|w| w.get(&window))
    }
}

/// Groups records by (flow, generation window). Jitter is the absolute
/// difference between consecutive delivered packets' delays, attributed to
/// the window of the later packet. Drops are counted but excluded from
/// statistics.
pub fn aggregate(records: &[PacketRecord], window_s: f64, n_windows: usize) -> GroundTruth {
    let mut by_flow: BTreeMap<u64, Vec<&PacketRecord>> = BTreeMap::new();
    for r in records {
        by_flow.entry(r.flow).or_default().push(r);
    }

    let mut flows = BTreeMap::new();
    for (flow, mut recs) in by_flow {
        recs.sort_by_key(|r| r.seq);
        let mut delays: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut jitters: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut drops: BTreeMap<usize, u64> = BTreeMap::new();
        let mut prev: Option<f64> = None;
        for r in recs {
            let w = window_index(r.gen_time, window_s, n_windows);
            match r.delay {
                Some(d) => {
                    delays.entry(w).or_default().push(d);
                    if let Some(p) = prev {
                        jitters.entry(w).or_default().push((d - p).abs());
                    }
                    prev = Some(d);
                }
                None => *drops.entry(w).or_default() += 1,
            }
        }
        let windows: std::collections::BTreeSet<usize> = delays.keys().chain(drops.keys()).copied().collect();
        let per_window = windows
            .into_iter()
            .map(|w| {
                let d = delays.get(&w).map(Vec::as_slice).unwrap_or(&[]);
                let j = jitters.get(&w).map(Vec::as_slice).unwrap_or(&[]);
                (
                    w,
                    WindowStats {
                        packet_count: d.len() as u64,
                        drop_count: drops.get(&w).copied().unwrap_or(0),
                        delay: Stats::of(d),
                        jitter: Stats::of(j),
                    },
                )
            })
            .collect();
        flows.insert(flow, per_window);
    }
    GroundTruth { flows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seq: u64, gen_time: f64, delay: Option<f64>) -> PacketRecord {
        PacketRecord {
            flow: 3,
            seq,
            gen_time,
            delay,
        }
    }

    #[test]
    fn order_statistics_of_one_to_ten() {
        let us: Vec<f64> = (1..=10).map(|i| i as f64 * 1e-6).collect();
        let s = Stats::of(&us).unwrap();
        assert!((s.median - 5.5e-6).abs() < 1e-18);
        assert!((s.p90 - 9.1e-6).abs() < 1e-18);
        assert!((s.avg - 5.5e-6).abs() < 1e-18);
        assert!(s.p90 <= s.p95 && s.p95 <= s.p99);
    }

    #[test]
    fn single_packet_has_no_jitter() {
        let gt = aggregate(&[rec(0, 0.01, Some(2e-5))], 0.1, 10);
        let w = gt.get(3, 0).unwrap();
        assert_eq!(w.packet_count, 1);
        assert!(w.delay.is_some());
        assert!(w.jitter.is_none());
    }

    #[test]
    fn two_packets_give_one_jitter_sample() {
        let gt = aggregate(&[rec(0, 0.01, Some(10e-6)), rec(1, 0.02, Some(14e-6))], 0.1, 10);
        let j = gt.get(3, 0).unwrap().jitter.unwrap();
        for v in j.to_array() {
            assert!((v - 4e-6).abs() < 1e-18);
        }
    }

    #[test]
    fn drops_are_counted_not_measured() {
        let gt = aggregate(
            &[rec(0, 0.01, Some(1e-3)), rec(1, 0.02, None), rec(2, 0.25, None)],
            0.1,
            10,
        );
        let w0 = gt.get(3, 0).unwrap();
        assert_eq!((w0.packet_count, w0.drop_count), (1, 1));
        let w2 = gt.get(3, 2).unwrap();
        assert_eq!((w2.packet_count, w2.drop_count), (0, 1));
        assert!(w2.delay.is_none());
        assert!(gt.get(3, 1).is_none());
    }

    #[test]
    fn jitter_crosses_window_boundaries() {
        let gt = aggregate(&[rec(0, 0.05, Some(1e-3)), rec(1, 0.15, Some(3e-3))], 0.1, 10);
        assert!(gt.get(3, 0).unwrap().jitter.is_none());
        let j = gt.get(3, 1).unwrap().jitter.unwrap();
        assert!((j.avg - 2e-3).abs() < 1e-18);
    }

    #[test]
    fn json_is_keyed_by_flow_then_window() {
        let gt = aggregate(&[rec(0, 0.15, Some(1e-3))], 0.1, 10);
        let v: serde_json::Value = serde_json::to_value(&gt).unwrap();
        assert!(v["3"]["1"]["delay"]["p99"].is_number());
        let back: GroundTruth = serde_json::from_value(v).unwrap();
        assert_eq!(back, gt);
    }
}
