use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{generate_packets, window_index, Scenario};

/// Per-window inputs of one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowWindowFeatures {
    pub flow_id: u64,
    /// bits
    pub packet_size: f64,
    /// bits per second, per window
    pub avg_load: Vec<f64>,
    /// packets per second, per window
    pub packet_rate: Vec<f64>,
}

/// Time-varying model inputs. Every list is in ascending-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub window_s: f64,
    pub n_windows: usize,
    pub flows: Vec<FlowWindowFeatures>,
    pub link_ids: Vec<u64>,
    /// Offered load over bandwidth, per link then per window. Not clamped.
    pub link_load: Vec<Vec<f64>>,
    pub queue_ids: Vec<u64>,
    /// Device-type one-hot of the device owning each queue.
    pub queue_kind: Vec<[f64; 3]>,
}

/// Derives per-window features from the packets each flow generates.
pub fn compute_window_features(s: &Scenario) -> WindowFeatures {
    let n_windows = s.n_windows();
    let dt = s.window_s;

    let mut flows: Vec<_> = s.flows.iter().collect();
    flows.sort_by_key(|f| f.id);
    let flow_feats: Vec<FlowWindowFeatures> = flows
        .iter()
        .map(|f| {
            let mut counts = vec![0u64; n_windows];
            for t in generate_packets(f, s.duration_s) {
                counts[window_index(t, dt, n_windows)] += 1;
            }
            let size = f64::from(f.packet_size);
            FlowWindowFeatures {
                flow_id: f.id,
                packet_size: size,
                avg_load: counts.iter().map(|&c| c as f64 * size / dt).collect(),
                packet_rate: counts.iter().map(|&c| c as f64 / dt).collect(),
            }
        })
        .collect();

    let mut links: Vec<_> = s.links.iter().collect();
    links.sort_by_key(|l| l.id);
    let link_pos: BTreeMap<u64, usize> = links.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
    let mut offered = vec![vec![0.0; n_windows]; links.len()];
    for (f, ff) in flows.iter().zip(&flow_feats) {
        for hop in &f.path {
            let row = &mut offered[link_pos[&hop.link]];
            for (o, load) in row.iter_mut().zip(&ff.avg_load) {
                *o += load;
            }
        }
    }
    let link_load = offered
        .into_iter()
        .zip(&links)
        .map(|(row, l)| row.into_iter().map(|x| x / l.bandwidth).collect())
        .collect();

    let mut queues: Vec<_> = s.queues.iter().collect();
    queues.sort_by_key(|q| q.id);
    let queue_kind = queues
        .iter()
        .map(|q| s.devices[q.device as usize].kind.one_hot())
        .collect();

    WindowFeatures {
        window_s: dt,
        n_windows,
        flows: flow_feats,
        link_ids: links.iter().map(|l| l.id).collect(),
        link_load,
        queue_ids: queues.iter().map(|q| q.id).collect(),
        queue_kind,
    }
}
