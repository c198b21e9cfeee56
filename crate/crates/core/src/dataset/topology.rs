//! Router-level topology families and shortest-path routing.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyFamily {
    Line,
    Star,
    /// Random recursive tree.
    Tree,
    /// G(n, p), resampled until connected.
    ErdosRenyi {
        p: f64,
    },
    /// A fixed pool of eleven small shapes with 5 to 8 routers.
    Testbed,
}

/// Undirected router graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterGraph {
    pub adjacency: Vec<Vec<usize>>,
}

impl RouterGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b && !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        adjacency.iter_mut().for_each(|v| v.sort_unstable());
        Self { adjacency }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    /// Undirected edges with `a < b`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.n() == 0 || self.bfs_parents(0).iter().all(Option::is_some)
    }

    /// BFS tree from `src`, visiting neighbors in ascending order.
    fn bfs_parents(&self, src: usize) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.n()];
        parent[src] = Some(src);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if parent[v].is_none() {
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        parent
    }

    /// All-pairs shortest paths as router lists (`paths[a][b]`), `None` when unreachable.
    pub fn shortest_paths(&self) -> Vec<Vec<Option<Vec<usize>>>> {
        (0..self.n())
            .map(|a| {
                let parent = self.bfs_parents(a);
                (0..self.n())
                    .map(|b| {
                        parent[b]?;
                        let mut path = vec![b];
                        let mut cur = b;
                        while cur != a {
                            cur = parent[cur].expect("reachable");
                            path.push(cur);
                        }
                        path.reverse();
                        Some(path)
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn line(n: usize) -> RouterGraph {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    RouterGraph::from_edges(n, &edges)
}

pub fn star(n: usize) -> RouterGraph {
    let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
    RouterGraph::from_edges(n, &edges)
}

pub fn random_tree(n: usize, rng: &mut impl Rng) -> RouterGraph {
    let edges: Vec<_> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    RouterGraph::from_edges(n, &edges)
}

/// `None` if no connected sample appears within `attempts` draws.
pub fn erdos_renyi(n: usize, p: f64, attempts: usize, rng: &mut impl Rng) -> Option<RouterGraph> {
    for _ in 0..attempts {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((a, b));
                }
            }
        }
        let g = RouterGraph::from_edges(n, &edges);
        if g.is_connected() {
            return Some(g);
        }
    }
    None
}

fn ring(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (i, (i + 1) % n)).collect()
}

fn ladder(k: usize) -> Vec<(usize, usize)> {
    let mut e: Vec<_> = (1..k).flat_map(|i| [(i - 1, i), (k + i - 1, k + i)]).collect();
    e.extend((0..k).map(|i| (i, k + i)));
    e
}

/// The eleven stand-in testbed shapes.
pub fn testbed_pool() -> Vec<RouterGraph> {
    let with = |mut base: Vec<(usize, usize)>, extra: &[(usize, usize)]| {
        base.extend_from_slice(extra);
        base
    };
    vec![
        RouterGraph::from_edges(5, &ring(5)),
        line(5),
        star(5),
        RouterGraph::from_edges(5, &with(ring(5), &[(0, 2)])),
        RouterGraph::from_edges(6, &with(ring(6), &[(0, 3)])),
        RouterGraph::from_edges(6, &ladder(3)),
        RouterGraph::from_edges(6, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)]),
        RouterGraph::from_edges(7, &[(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)]),
        RouterGraph::from_edges(7, &ring(7)),
        RouterGraph::from_edges(8, &ladder(4)),
        RouterGraph::from_edges(8, &with(ring(8), &[(0, 4), (2, 6)])),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_has_eleven_connected_shapes_of_five_to_eight() {
        let pool = testbed_pool();
        assert_eq!(pool.len(), 11);
        for g in &pool {
            assert!(g.is_connected());
            assert!((5..=8).contains(&g.n()));
        }
    }

    #[test]
    fn line_paths_visit_every_router_between() {
        let p = line(5).shortest_paths();
        assert_eq!(p[0][4].as_deref(), Some(&[0, 1, 2, 3, 4][..]));
        assert_eq!(p[3][1].as_deref(), Some(&[3, 2, 1][..]));
    }

    #[test]
    fn ties_break_toward_lower_neighbor() {
        let g = RouterGraph::from_edges(4, &ring(4));
        assert_eq!(g.shortest_paths()[0][2].as_deref(), Some(&[0, 1, 2][..]));
    }

    #[test]
    fn random_families_are_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 3..20 {
            assert!(random_tree(n, &mut rng).is_connected());
            let g = erdos_renyi(n, 0.4, 1000, &mut rng).unwrap();
            assert!(g.is_connected());
        }
    }

    #[test]
    fn disconnected_graph_is_detected() {
        assert!(!RouterGraph::from_edges(4, &[(0, 1), (2, 3)]).is_connected());
    }
}
