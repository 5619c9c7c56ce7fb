//! Directed road network: waypoint nodes, lane edges and parking spots.
//!
//! A [`RoadGraph`] is immutable once built. Edge weights for every shortest
//! path query are geometric lengths in meters; speed limits are carried for
//! the simulator only.

mod format;
mod geometry;
mod search;
mod spatial;

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

pub use format::{parse_roadnet, write_roadnet};
pub(crate) use geometry::intervals as geometry_intervals;
pub use geometry::sample_polyline;
pub use search::{astar, astar_avoiding, dijkstra, dijkstra_to, Path};

use spatial::GridIndex;

/// Slack allowed when checking that an edge is not shorter than the chord
/// between its endpoints.
pub const CHORD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index into [`RoadGraph::edges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub node: NodeId,
    pub x: f64,
    pub y: f64,
    /// Radians in `[-π, π)`.
    pub heading: f64,
}

impl Waypoint {
    pub fn new(node: usize, x: f64, y: f64, heading: f64) -> Self {
        Self {
            node: NodeId(node),
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub length: f64,
    pub speed_limit: f64,
    /// Descriptive: no reverse lane exists for this edge. Edges are always
    /// directed; a two-way street is two edges.
    pub one_way: bool,
}

impl Edge {
    pub fn new(from: usize, to: usize, length: f64, speed_limit: f64, one_way: bool) -> Self {
        Self {
            from: NodeId(from),
            to: NodeId(to),
            length,
            speed_limit,
            one_way,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParkingSpot {
    pub id: usize,
    pub anchor_edge: EdgeId,
    /// Meters along the anchor edge, in `[0, length]`.
    pub offset: f64,
    /// Initial occupant, if any.
    pub occupied_by: Option<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadnetError {
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("edge {from}->{to} has non-positive length {length}")]
    NonPositiveLength { from: usize, to: usize, length: f64 },
    #[error("edge {from}->{to} has non-positive speed limit {speed_limit}")]
    NonPositiveSpeed {
        from: usize,
        to: usize,
        speed_limit: f64,
    },
    #[error("edge {0}->{0} is a self-loop")]
    SelfLoop(usize),
    #[error("edge {from}->{to} of length {length} is shorter than its chord {chord}")]
    ShorterThanChord {
        from: usize,
        to: usize,
        length: f64,
        chord: f64,
    },
    #[error("waypoint {0} has non-finite coordinates")]
    NonFinite(usize),
    #[error("waypoint list is not dense: position {position} holds node {node}")]
    NonDenseNodes { position: usize, node: usize },
    #[error("parking spot {id} offset {offset} outside anchor edge of length {length}")]
    SpotOffset { id: usize, offset: f64, length: f64 },
    #[error("duplicate parking spot id {0}")]
    DuplicateSpot(usize),
    #[error("invalid node {0}")]
    InvalidNode(NodeId),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone)]
pub struct RoadGraph {
    waypoints: Vec<Waypoint>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<EdgeId>>,
    incoming: Vec<Vec<EdgeId>>,
    spots: Vec<ParkingSpot>,
    index: GridIndex,
    /// Factor applied to straight-line distance in the A* heuristic so that it
    /// stays consistent even for edges that sit inside the chord tolerance.
    heuristic_scale: f64,
}

/// Validates the pieces and builds adjacency. Waypoints must be listed in
/// node order (`waypoints[i].node == NodeId(i)`).
pub fn build_graph(
    waypoints: Vec<Waypoint>,
    edges: Vec<Edge>,
    spots: Vec<ParkingSpot>,
) -> Result<RoadGraph, RoadnetError> {
    let n = waypoints.len();
    let mut waypoints = waypoints;
    for (i, w) in waypoints.iter_mut().enumerate() {
        if w.node.0 != i {
            return Err(RoadnetError::NonDenseNodes {
                position: i,
                node: w.node.0,
            });
        }
        if !(w.x.is_finite() && w.y.is_finite() && w.heading.is_finite()) {
            return Err(RoadnetError::NonFinite(i));
        }
        w.heading = normalize_angle(w.heading);
    }

    let mut outgoing = vec![Vec::new(); n];
    let mut incoming = vec![Vec::new(); n];
    for (ei, e) in edges.iter().enumerate() {
        for end in [e.from, e.to] {
            if end.0 >= n {
                return Err(RoadnetError::DanglingReference(format!(
                    "edge {} -> {} names node {} but only {} nodes exist",
                    e.from, e.to, end, n
                )));
            }
        }
        if e.from == e.to {
            return Err(RoadnetError::SelfLoop(e.from.0));
        }
        if !(e.length > 0.0) || !e.length.is_finite() {
            return Err(RoadnetError::NonPositiveLength {
                from: e.from.0,
                to: e.to.0,
                length: e.length,
            });
        }
        if !(e.speed_limit > 0.0) || !e.speed_limit.is_finite() {
            return Err(RoadnetError::NonPositiveSpeed {
                from: e.from.0,
                to: e.to.0,
                speed_limit: e.speed_limit,
            });
        }
        let a = &waypoints[e.from.0];
        let b = &waypoints[e.to.0];
        let chord = a.distance_to(b.x, b.y);
        if e.length + CHORD_TOLERANCE < chord {
            return Err(RoadnetError::ShorterThanChord {
                from: e.from.0,
                to: e.to.0,
                length: e.length,
                chord,
            });
        }
        outgoing[e.from.0].push(EdgeId(ei));
        incoming[e.to.0].push(EdgeId(ei));
    }

    let mut seen = std::collections::BTreeSet::new();
    for s in &spots {
        let Some(edge) = edges.get(s.anchor_edge.0) else {
            return Err(RoadnetError::DanglingReference(format!(
                "parking spot {} names edge #{} but only {} edges exist",
                s.id,
                s.anchor_edge.0,
                edges.len()
            )));
        };
        if !(0.0..=edge.length).contains(&s.offset) {
            return Err(RoadnetError::SpotOffset {
                id: s.id,
                offset: s.offset,
                length: edge.length,
            });
        }
        if !seen.insert(s.id) {
            return Err(RoadnetError::DuplicateSpot(s.id));
        }
    }

    let mut heuristic_scale: f64 = 1.0;
    for e in &edges {
        let a = &waypoints[e.from.0];
        let b = &waypoints[e.to.0];
        let chord = a.distance_to(b.x, b.y);
        if chord > 0.0 {
            heuristic_scale = heuristic_scale.min(e.length / chord);
        }
    }
    heuristic_scale *= 1.0 - 1e-12;

    let index = GridIndex::build(&waypoints);
    Ok(RoadGraph {
        waypoints,
        edges,
        outgoing,
        incoming,
        spots,
        index,
        heuristic_scale,
    })
}

impl RoadGraph {
    pub fn node_count(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn waypoint(&self, n: NodeId) -> &Waypoint {
        &self.waypoints[n.0]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.0]
    }

    pub fn outgoing(&self, n: NodeId) -> &[EdgeId] {
        &self.outgoing[n.0]
    }

    pub fn incoming(&self, n: NodeId) -> &[EdgeId] {
        &self.incoming[n.0]
    }

    pub fn parking_spots(&self) -> &[ParkingSpot] {
        &self.spots
    }

    pub fn spot(&self, id: usize) -> Option<&ParkingSpot> {
        self.spots.iter().find(|s| s.id == id)
    }

    /// Index of the spot with the given id in [`Self::parking_spots`].
    pub fn spot_index(&self, id: usize) -> Option<usize> {
        self.spots.iter().position(|s| s.id == id)
    }

    pub(crate) fn heuristic_scale(&self) -> f64 {
        self.heuristic_scale
    }

    pub fn check_node(&self, n: NodeId) -> Result<(), RoadnetError> {
        if n.0 < self.waypoints.len() {
            Ok(())
        } else {
            Err(RoadnetError::InvalidNode(n))
        }
    }

    /// First edge `from -> to`, if any.
    pub fn find_edge(&self, from: NodeId, to: NodeId) -> Option<EdgeId> {
        self.outgoing
            .get(from.0)?
            .iter()
            .copied()
            .find(|&e| self.edges[e.0].to == to)
    }

    /// Point on the anchor edge of a spot, interpolated along the chord.
    pub fn spot_position(&self, spot: &ParkingSpot) -> (f64, f64) {
        let e = &self.edges[spot.anchor_edge.0];
        let a = &self.waypoints[e.from.0];
        let b = &self.waypoints[e.to.0];
        let f = spot.offset / e.length;
        (a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounding_box(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.waypoints.first()?;
        let mut bb = (first.x, first.y, first.x, first.y);
        for w in &self.waypoints {
            bb.0 = bb.0.min(w.x);
            bb.1 = bb.1.min(w.y);
            bb.2 = bb.2.max(w.x);
            bb.3 = bb.3.max(w.y);
        }
        Some(bb)
    }

    /// Node closest to `(x, y)` in straight-line distance; ties go to the
    /// smallest id.
    pub fn nearest_node(&self, x: f64, y: f64) -> Result<NodeId, RoadnetError> {
        if self.waypoints.is_empty() {
            return Err(RoadnetError::EmptyGraph);
        }
        Ok(self.index.nearest(&self.waypoints, x, y))
    }
}

/// Free-function form of [`RoadGraph::nearest_node`].
pub fn nearest_node(g: &RoadGraph, x: f64, y: f64) -> Result<NodeId, RoadnetError> {
    g.nearest_node(x, y)
}
