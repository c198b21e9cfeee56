//! Expanded interaction graph: flows, links, queues and devices, plus the
//! incidence tables message passing gathers and scatters over.
//!
//! Every element is renumbered densely in ascending original-id order.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use crate::scenario::Scenario;

/// Hops that sit at the same path position, across all flows long enough to
/// have one. Rows line up: hop `k` is (`flows[k]`, `links[k]`, `queues[k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PositionHops {
    pub flows: Arc<[usize]>,
    pub links: Arc<[usize]>,
    pub queues: Arc<[usize]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedGraph {
    pub flow_ids: Vec<u64>,
    pub link_ids: Vec<u64>,
    pub queue_ids: Vec<u64>,
    pub device_ids: Vec<u64>,
    /// Per flow, ordered (link, queue) hops.
    pub flow_paths: Vec<Vec<(usize, usize)>>,
    /// Owning device of each queue.
    pub queue_device: Vec<usize>,
    /// Feeding queue of each link.
    pub link_queue: Vec<usize>,
    /// Link fed by each queue.
    pub queue_link: Vec<usize>,
    /// (flow, position) pairs crossing each queue, sorted.
    pub queue_flows: Vec<Vec<(usize, usize)>>,
    /// Queues owned by each device, sorted.
    pub device_queues: Vec<Vec<usize>>,
    /// Hop tables per path position, position-major.
    pub positions: Vec<PositionHops>,
    /// For the concatenation of all `positions` rows: the queue and flow of each hop.
    pub hop_queue: Arc<[usize]>,
    pub hop_flow: Arc<[usize]>,
    /// Queue of each device for the device-sum scatter.
    pub queue_device_index: Arc<[usize]>,
    pub link_queue_index: Arc<[usize]>,
}

impl ExpandedGraph {
    /// Builds the graph of a validated scenario in O(total path length).
    pub fn build(s: &Scenario) -> Self {
        let mut flows: Vec<_> = s.flows.iter().collect();
        flows.sort_by_key(|f| f.id);
        let mut links: Vec<_> = s.links.iter().collect();
        links.sort_by_key(|l| l.id);
        let mut queues: Vec<_> = s.queues.iter().collect();
        queues.sort_by_key(|q| q.id);

        let link_idx: BTreeMap<u64, usize> = links.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        let queue_idx: BTreeMap<u64, usize> = queues.iter().enumerate().map(|(i, q)| (q.id, i)).collect();

        let queue_device: Vec<usize> = queues.iter().map(|q| q.device as usize).collect();
        let queue_link: Vec<usize> = queues.iter().map(|q| link_idx[&q.out_link]).collect();
        let mut link_queue = vec![usize::MAX; links.len()];
        for (q, &l) in queue_link.iter().enumerate() {
            link_queue[l] = q;
        }

        let flow_paths: Vec<Vec<(usize, usize)>> = flows
            .iter()
            .map(|f| {
                f.path
                    .iter()
                    .map(|h| (link_idx[&h.link], queue_idx[&h.queue]))
                    .collect()
            })
            .collect();

        let mut queue_flows = vec![Vec::new(); queues.len()];
        for (f, path) in flow_paths.iter().enumerate() {
            for (pos, &(_, q)) in path.iter().enumerate() {
                queue_flows[q].push((f, pos));
            }
        }

        let mut device_queues = vec![Vec::new(); s.devices.len()];
        for (q, &d) in queue_device.iter().enumerate() {
            device_queues[d].push(q);
        }

        let max_len = flow_paths.iter().map(Vec::len).max().unwrap_or(0);
        let mut positions = Vec::with_capacity(max_len);
        let (mut hop_queue, mut hop_flow) = (Vec::new(), Vec::new());
        for pos in 0..max_len {
            let (mut fs, mut ls, mut qs) = (Vec::new(), Vec::new(), Vec::new());
            for (f, path) in flow_paths.iter().enumerate() {
                if let Some(&(l, q)) = path.get(pos) {
                    fs.push(f);
                    ls.push(l);
                    qs.push(q);
                }
            }
            hop_queue.extend_from_slice(&qs);
            hop_flow.extend_from_slice(&fs);
            positions.push(PositionHops {
                flows: fs.into(),
                links: ls.into(),
                queues: qs.into(),
            });
        }

        Self {
            flow_ids: flows.iter().map(|f| f.id).collect(),
            link_ids: links.iter().map(|l| l.id).collect(),
            queue_ids: queues.iter().map(|q| q.id).collect(),
            device_ids: s.devices.iter().map(|d| d.id).collect(),
            queue_device_index: queue_device.clone().into(),
            link_queue_index: link_queue.clone().into(),
            flow_paths,
            queue_device,
            link_queue,
            queue_link,
            queue_flows,
            device_queues,
            positions,
            hop_queue: hop_queue.into(),
            hop_flow: hop_flow.into(),
        }
    }

    pub fn n_flows(&self) -> usize {
        self.flow_ids.len()
    }

    pub fn n_links(&self) -> usize {
        self.link_ids.len()
    }

    pub fn n_queues(&self) -> usize {
        self.queue_ids.len()
    }

    pub fn n_devices(&self) -> usize {
        self.device_ids.len()
    }

    pub fn total_hops(&self) -> usize {
        self.hop_queue.len()
    }

    /// Edge list `kind_src,id_src,kind_dst,id_dst,position` using original
    /// ids; position is empty for structural edges.
    pub fn write_edge_list(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "kind_src,id_src,kind_dst,id_dst,position")?;
        for (f, path) in self.flow_paths.iter().enumerate() {
            for (pos, &(l, q)) in path.iter().enumerate() {
                writeln!(out, "flow,{},queue,{},{pos}", self.flow_ids[f], self.queue_ids[q])?;
                writeln!(out, "flow,{},link,{},{pos}", self.flow_ids[f], self.link_ids[l])?;
            }
        }
        for (q, &d) in self.queue_device.iter().enumerate() {
            writeln!(out, "queue,{},device,{},", self.queue_ids[q], self.device_ids[d])?;
        }
        for (q, &l) in self.queue_link.iter().enumerate() {
            writeln!(out, "queue,{},link,{},", self.queue_ids[q], self.link_ids[l])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::tests::three_node;

    #[test]
    fn single_flow_crosses_two_queues() {
        let g = ExpandedGraph::build(&three_node());
        assert_eq!(g.flow_paths[0], vec![(0, 0), (2, 2)]);
        assert_eq!(g.queue_flows[0], vec![(0, 0)]);
        assert_eq!(g.queue_flows[2], vec![(0, 1)]);
        assert!(g.queue_flows[1].is_empty());
    }

    #[test]
    fn shared_queue_lists_both_flows() {
        let mut s = three_node();
        let mut f = s.flows[0].clone();
        f.id = 9;
        s.flows.push(f);
        let g = ExpandedGraph::build(&s);
        assert_eq!(g.queue_flows[0].len(), 2);
        let total: usize = g.queue_flows.iter().map(Vec::len).sum();
        assert_eq!(total, 2 * 2);
        assert_eq!(g.total_hops(), 4);
    }

    #[test]
    fn link_queue_is_a_bijection_and_devices_partition_queues() {
        let g = ExpandedGraph::build(&three_node());
        for (l, &q) in g.link_queue.iter().enumerate() {
            assert_eq!(g.queue_link[q], l);
        }
        let mut all: Vec<usize> = g.device_queues.concat();
        all.sort();
        assert_eq!(all, (0..g.n_queues()).collect::<Vec<_>>());
    }

    #[test]
    fn edge_list_has_header_and_rows() {
        let g = ExpandedGraph::build(&three_node());
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kind_src,id_src,kind_dst,id_dst,position\n"));
        assert!(text.contains("flow,0,queue,2,1\n"));
        assert!(text.contains("queue,1,device,1,\n"));
    }
}
