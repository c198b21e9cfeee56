//! Packet-level discrete-event simulator used as the ground-truth oracle.
//!
//! Store-and-forward, output-queued, FIFO drop-tail. The clock is an integer
//! count of femtoseconds, so simultaneous events compare exactly equal and
//! per-packet delays carry no accumulated rounding.

mod stats;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::scenario::{generate_packets, Scenario};

pub use stats::{aggregate, percentile, GroundTruth, Stats, WindowStats};

const FS_PER_S: f64 = 1e15;

fn to_fs(seconds: f64) -> u128 {
    (seconds * FS_PER_S).round() as u128
}

/// Fate of one generated packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub flow: u64,
    /// per-flow index in generation order
    pub seq: u64,
    pub gen_time: f64,
    /// end-to-end delay in seconds; `None` when dropped
    pub delay: Option<f64>,
}

impl PacketRecord {
    pub fn delivery_time(&self) -> Option<f64> {
        self.delay.map(|d| self.gen_time + d)
    }

    pub fn dropped(&self) -> bool {
        self.delay.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Arrival,
    ServiceDone,
}

/// Heap entry. Total order: time, arrivals before service completions,
/// flow id, sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: u128,
    kind: Kind,
    flow_id: u64,
    seq: u64,
    packet: usize,
    queue: usize,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let rank = |k: Kind| match k {
            Kind::Arrival => 0u8,
            Kind::ServiceDone => 1,
        };
        (self.time, rank(self.kind), self.flow_id, self.seq).cmp(&(
            other.time,
            rank(other.kind),
            other.flow_id,
            other.seq,
        ))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct HopPlan {
    queue: usize,
    tx: u128,
    prop: u128,
}

struct Packet {
    flow: usize,
    seq: u64,
    hop: usize,
    gen_fs: u128,
}

#[derive(Default)]
struct QueueState {
    capacity: usize,
    waiting: VecDeque<usize>,
    in_service: Option<usize>,
}

/// Runs the scenario to completion and returns one record per generated
/// packet, ordered by (flow id, seq).
pub fn simulate(s: &Scenario) -> Vec<PacketRecord> {
    let links: BTreeMap<u64, _> = s.links.iter().map(|l| (l.id, l)).collect();
    let queue_index: BTreeMap<u64, usize> = s.queues.iter().enumerate().map(|(i, q)| (q.id, i)).collect();
    let mut queues: Vec<QueueState> = s
        .queues
        .iter()
        .map(|q| QueueState {
            capacity: q.buffer_size as usize,
            ..Default::default()
        })
        .collect();

    let mut flows: Vec<_> = s.flows.iter().collect();
    flows.sort_by_key(|f| f.id);
    let plans: Vec<Vec<HopPlan>> = flows
        .iter()
        .map(|f| {
            f.path
                .iter()
                .map(|h| {
                    let l = links[&h.link];
                    HopPlan {
                        queue: queue_index[&h.queue],
                        tx: to_fs(f64::from(f.packet_size) / l.bandwidth),
                        prop: to_fs(l.propagation_delay),
                    }
                })
                .collect()
        })
        .collect();

    let mut packets = Vec::new();
    let mut records = Vec::new();
    let mut heap = BinaryHeap::new();
    for (fi, f) in flows.iter().enumerate() {
        for (seq, t) in generate_packets(f, s.duration_s).into_iter().enumerate() {
            let gen_fs = to_fs(t);
            let packet = packets.len();
            packets.push(Packet {
                flow: fi,
                seq: seq as u64,
                hop: 0,
                gen_fs,
            });
            records.push(PacketRecord {
                flow: f.id,
                seq: seq as u64,
                gen_time: t,
                delay: None,
            });
            heap.push(Reverse(Event {
                time: gen_fs,
                kind: Kind::Arrival,
                flow_id: f.id,
                seq: seq as u64,
                packet,
                queue: plans[fi][0].queue,
            }));
        }
    }

    while let Some(Reverse(ev)) = heap.pop() {
        let now = ev.time;
        match ev.kind {
            Kind::Arrival => {
                let q = &mut queues[ev.queue];
                if q.in_service.is_none() {
                    q.in_service = Some(ev.packet);
                    let p = &packets[ev.packet];
                    heap.push(Reverse(Event {
                        time: now + plans[p.flow][p.hop].tx,
                        kind: Kind::ServiceDone,
                        ..ev
                    }));
                } else if q.waiting.len() < q.capacity {
                    q.waiting.push_back(ev.packet);
                }
                // otherwise tail-dropped: the record keeps `delay: None`
            }
            Kind::ServiceDone => {
                let p = &mut packets[ev.packet];
                let plan = &plans[p.flow][p.hop];
                let reach = now + plan.prop;
                if p.hop + 1 == plans[p.flow].len() {
                    records[ev.packet].delay = Some((reach - p.gen_fs) as f64 / FS_PER_S);
                } else {
                    p.hop += 1;
                    heap.push(Reverse(Event {
                        time: reach,
                        kind: Kind::Arrival,
                        queue: plans[p.flow][p.hop].queue,
                        ..ev
                    }));
                }
                let q = &mut queues[ev.queue];
                q.in_service = q.waiting.pop_front();
                if let Some(next) = q.in_service {
                    let np = &packets[next];
                    heap.push(Reverse(Event {
                        time: now + plans[np.flow][np.hop].tx,
                        kind: Kind::ServiceDone,
                        flow_id: flows[np.flow].id,
                        seq: np.seq,
                        packet: next,
                        queue: ev.queue,
                    }));
                }
            }
        }
    }
    records
}

/// `flow,seq,gen_time,delivery_time,dropped`; delivery_time is empty for drops.
pub fn write_packets_csv(records: &[PacketRecord], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "flow,seq,gen_time,delivery_time,dropped")?;
    for r in records {
        match r.delivery_time() {
            Some(d) => writeln!(out, "{},{},{},{},false", r.flow, r.seq, r.gen_time, d)?,
            None => writeln!(out, "{},{},{},,true", r.flow, r.seq, r.gen_time)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::tests::three_node;
    use crate::scenario::{Hop, TrafficProfile};

    #[test]
    fn two_hops_without_queueing() {
        let mut s = three_node();
        s.flows[0].profile = TrafficProfile::TraceReplay { timestamps: vec![0.0] };
        let r = simulate(&s);
        assert_eq!(r.len(), 1);
        assert!((r[0].delay.unwrap() - 0.016).abs() < 1e-15);
    }

    #[test]
    fn simultaneous_pair_queues_behind_each_other() {
        let mut s = three_node();
        s.flows[0].path.truncate(1);
        s.flows[0].dst_device = 1;
        s.devices[1].kind = crate::scenario::DeviceKind::Endpoint;
        s.flows[0].profile = TrafficProfile::TraceReplay {
            timestamps: vec![0.0, 0.0],
        };
        s.validate().unwrap();
        let r = simulate(&s);
        assert!((r[0].delay.unwrap() - 0.008).abs() < 1e-15);
        assert!((r[1].delay.unwrap() - 0.016).abs() < 1e-15);
    }

    #[test]
    fn drop_tail_with_unit_buffer() {
        let mut s = three_node();
        s.queues[0].buffer_size = 1;
        s.flows[0].profile = TrafficProfile::TraceReplay {
            timestamps: vec![0.0, 0.0, 0.0],
        };
        let r = simulate(&s);
        assert_eq!(r.iter().filter(|p| p.dropped()).count(), 1);
        assert!(r[2].dropped());
    }

    #[test]
    fn tie_break_prefers_lower_flow_id() {
        let mut s = three_node();
        let mut other = s.flows[0].clone();
        other.id = 5;
        s.flows.insert(0, other);
        for f in &mut s.flows {
            f.profile = TrafficProfile::TraceReplay { timestamps: vec![0.0] };
        }
        let r = simulate(&s);
        assert_eq!(r[0].flow, 0);
        assert!((r[0].delay.unwrap() - 0.016).abs() < 1e-15);
        assert!((r[1].delay.unwrap() - 0.024).abs() < 1e-15);
        assert_eq!(s.flows[0].path[0], Hop { link: 0, queue: 0 });
    }

    #[test]
    fn csv_dump_marks_drops() {
        let records = vec![
            PacketRecord {
                flow: 1,
                seq: 0,
                gen_time: 0.5,
                delay: Some(0.25),
            },
            PacketRecord {
                flow: 1,
                seq: 1,
                gen_time: 0.75,
                delay: None,
            },
        ];
        let mut buf = Vec::new();
        write_packets_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "flow,seq,gen_time,delivery_time,dropped\n1,0,0.5,0.75,false\n1,1,0.75,,true\n"
        );
    }
}
