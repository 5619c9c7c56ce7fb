use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{EdgeId, NodeId, RoadGraph, RoadnetError};

/// Ordered node sequence with its summed edge length.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    /// Edge taken between `nodes[i]` and `nodes[i + 1]`.
    pub edges: Vec<EdgeId>,
    pub total_length: f64,
}

impl Path {
    fn single(n: NodeId) -> Self {
        Self {
            nodes: vec![n],
            edges: Vec::new(),
            total_length: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    key: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // BinaryHeap is a max-heap; invert so the smallest key (then node) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest distances along edge direction. Unreachable nodes
/// are `f64::INFINITY`.
pub fn dijkstra(g: &RoadGraph, src: NodeId) -> Result<Vec<f64>, RoadnetError> {
    g.check_node(src)?;
    Ok(run_dijkstra(g, src, false))
}

/// Shortest distances from every node *to* `dst`.
pub fn dijkstra_to(g: &RoadGraph, dst: NodeId) -> Result<Vec<f64>, RoadnetError> {
    g.check_node(dst)?;
    Ok(run_dijkstra(g, dst, true))
}

fn run_dijkstra(g: &RoadGraph, root: NodeId, reverse: bool) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.node_count()];
    let mut heap = BinaryHeap::new();
    dist[root.0] = 0.0;
    heap.push(Entry {
        key: 0.0,
        node: root.0,
    });
    while let Some(Entry { key, node }) = heap.pop() {
        if key > dist[node] {
            continue;
        }
        let adj = if reverse {
            g.incoming(NodeId(node))
        } else {
            g.outgoing(NodeId(node))
        };
        for &eid in adj {
            let e = g.edge(eid);
            let next = if reverse { e.from.0 } else { e.to.0 };
            let nd = key + e.length;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(Entry {
                    key: nd,
                    node: next,
                });
            }
        }
    }
    dist
}

/// Shortest path by A* with a straight-line heuristic. Returns `Ok(None)` if
/// `dst` cannot be reached. Among equally short paths the lexicographically
/// smallest node sequence wins.
pub fn astar(g: &RoadGraph, src: NodeId, dst: NodeId) -> Result<Option<Path>, RoadnetError> {
    astar_avoiding(g, src, dst, &[])
}

/// [`astar`] with some edges removed from consideration.
pub fn astar_avoiding(
    g: &RoadGraph,
    src: NodeId,
    dst: NodeId,
    banned: &[EdgeId],
) -> Result<Option<Path>, RoadnetError> {
    g.check_node(src)?;
    g.check_node(dst)?;
    if src == dst {
        return Ok(Some(Path::single(src)));
    }
    let allowed = |e: EdgeId| !banned.contains(&e);
    let target = g.waypoint(dst);
    let scale = g.heuristic_scale();
    let h = |n: usize| {
        let w = &g.waypoints()[n];
        scale * w.distance_to(target.x, target.y)
    };

    let n = g.node_count();
    let mut best = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    best[src.0] = 0.0;
    heap.push(Entry {
        key: h(src.0),
        node: src.0,
    });
    // Keep expanding until every open entry is strictly worse than the goal
    // label so that all equally short alternatives are labelled for the
    // tie-break pass below.
    while let Some(Entry { key, node }) = heap.pop() {
        if key > best[dst.0] {
            break;
        }
        let g_here = best[node];
        if key > g_here + h(node) {
            continue;
        }
        for &eid in g.outgoing(NodeId(node)) {
            if !allowed(eid) {
                continue;
            }
            let e = g.edge(eid);
            let nd = g_here + e.length;
            if nd < best[e.to.0] {
                best[e.to.0] = nd;
                heap.push(Entry {
                    key: nd + h(e.to.0),
                    node: e.to.0,
                });
            }
        }
    }
    if !best[dst.0].is_finite() {
        return Ok(None);
    }

    let tight = |eid: EdgeId| {
        let e = g.edge(eid);
        allowed(eid) && best[e.from.0].is_finite() && best[e.from.0] + e.length == best[e.to.0]
    };
    // nodes that reach dst through tight edges
    let mut on_dag = vec![false; n];
    on_dag[dst.0] = true;
    let mut stack = vec![dst.0];
    while let Some(v) = stack.pop() {
        for &eid in g.incoming(NodeId(v)) {
            let u = g.edge(eid).from.0;
            if !on_dag[u] && tight(eid) {
                on_dag[u] = true;
                stack.push(u);
            }
        }
    }
    debug_assert!(on_dag[src.0]);

    let mut nodes = vec![src];
    let mut edges = Vec::new();
    let mut cur = src;
    let mut total = 0.0;
    while cur != dst {
        let (eid, next) = g
            .outgoing(cur)
            .iter()
            .copied()
            .filter(|&eid| tight(eid) && on_dag[g.edge(eid).to.0])
            .map(|eid| (eid, g.edge(eid).to))
            .min_by_key(|&(eid, to)| (to, eid))
            .expect("tight successor exists on every shortest-path DAG node");
        total += g.edge(eid).length;
        edges.push(eid);
        nodes.push(next);
        cur = next;
    }
    debug_assert_eq!(total, best[dst.0]);
    Ok(Some(Path {
        nodes,
        edges,
        total_length: total,
    }))
}
