//! Synthetic warehouse layout used by tests, examples and the bundled map.
//!
//! Four east-west aisles (y = 0, 20, 40, 60) and four north-south aisles
//! (x = 0, 30, 60, 90), all one-way with alternating directions so that the
//! outer ring circulates counter-clockwise. Every aisle block has a parking
//! bay on the right-hand side: a short loop that leaves the aisle, runs
//! parallel to it 5 m away and rejoins it. One parking spot sits in the
//! middle of each bay, 24 in total.
//!
//! Also scripted traffic on simple corridors for the congestion analysis.

use std::collections::HashMap;

use crate::roadnet::{build_graph, Edge, EdgeId, ParkingSpot, RoadGraph, Waypoint};
use crate::trajectory::TrajectorySample;

pub const AISLE_Y: [f64; 4] = [0.0, 20.0, 40.0, 60.0];
pub const AISLE_X: [f64; 4] = [0.0, 30.0, 60.0, 90.0];
/// Waypoint spacing along aisles and bays.
pub const SPACING: f64 = 2.5;
/// Lateral distance between an aisle and its parking bay.
pub const BAY_OFFSET: f64 = 5.0;
pub const AISLE_SPEED: f64 = 4.0;
pub const BAY_SPEED: f64 = 2.0;

#[derive(Default)]
struct Builder {
    waypoints: Vec<Waypoint>,
    edges: Vec<Edge>,
    /// Spots as (anchor edge index, offset).
    spots: Vec<(usize, f64)>,
    shared: HashMap<(i64, i64), usize>,
}

impl Builder {
    fn node(&mut self, x: f64, y: f64, heading: f64) -> usize {
        let id = self.waypoints.len();
        self.waypoints.push(Waypoint::new(id, x, y, heading));
        id
    }

    /// Intersections are shared between the aisles that cross there.
    fn junction(&mut self, x: f64, y: f64) -> usize {
        let key = ((x * 1000.0).round() as i64, (y * 1000.0).round() as i64);
        if let Some(&n) = self.shared.get(&key) {
            return n;
        }
        let n = self.node(x, y, 0.0);
        self.shared.insert(key, n);
        n
    }

    fn link(&mut self, a: usize, b: usize, speed: f64) -> usize {
        let (p, q) = (&self.waypoints[a], &self.waypoints[b]);
        let len = p.distance_to(q.x, q.y);
        self.edges.push(Edge::new(a, b, len, speed, true));
        self.edges.len() - 1
    }

    fn chain(&mut self, nodes: &[usize], speed: f64) -> Vec<usize> {
        nodes
            .windows(2)
            .map(|w| self.link(w[0], w[1], speed))
            .collect()
    }

    /// One aisle block from junction `a` to junction `b`, with its bay.
    fn block(&mut self, a: (f64, f64), b: (f64, f64)) {
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let (ux, uy) = ((b.0 - a.0) / len, (b.1 - a.1) / len);
        let heading = uy.atan2(ux);
        // right-hand normal
        let (nx, ny) = (uy, -ux);
        let steps = (len / SPACING).round() as usize;
        let at = |k: usize| (a.0 + ux * SPACING * k as f64, a.1 + uy * SPACING * k as f64);

        let start = self.junction(a.0, a.1);
        let end = self.junction(b.0, b.1);
        let mut aisle = vec![start];
        for k in 1..steps {
            let (x, y) = at(k);
            aisle.push(self.node(x, y, heading));
        }
        aisle.push(end);
        self.chain(&aisle, AISLE_SPEED);

        // the bay spans the middle half of the block
        let (leave, rejoin) = (steps / 4, steps - steps / 4);
        let bay_nodes: Vec<usize> = (leave + 1..rejoin)
            .map(|k| {
                let (x, y) = at(k);
                self.node(x + nx * BAY_OFFSET, y + ny * BAY_OFFSET, heading)
            })
            .collect();
        let mut bay = vec![aisle[leave]];
        bay.extend(&bay_nodes);
        bay.push(aisle[rejoin]);
        let bay_edges = self.chain(&bay, BAY_SPEED);
        // spot at the bay's middle node, anchored on the edge leaving it
        let mid = bay.len() / 2;
        self.spots.push((bay_edges[mid], 0.0));
    }
}

/// Builds the warehouse graph. Node and spot numbering is stable.
pub fn warehouse() -> RoadGraph {
    let mut b = Builder::default();
    for (j, &y) in AISLE_Y.iter().enumerate() {
        let east = j % 2 == 0;
        for w in AISLE_X.windows(2) {
            if east {
                b.block((w[0], y), (w[1], y));
            } else {
                b.block((w[1], y), (w[0], y));
            }
        }
    }
    for (i, &x) in AISLE_X.iter().enumerate() {
        let north = i % 2 == 1;
        for w in AISLE_Y.windows(2) {
            if north {
                b.block((x, w[0]), (x, w[1]));
            } else {
                b.block((x, w[1]), (x, w[0]));
            }
        }
    }
    let spots = b
        .spots
        .iter()
        .enumerate()
        .map(|(id, &(edge, offset))| ParkingSpot {
            id,
            anchor_edge: EdgeId(edge),
            offset,
            occupied_by: None,
        })
        .collect();
    build_graph(b.waypoints, b.edges, spots).expect("warehouse fixture is valid")
}

/// Corridor graph along a polyline, one node every `SPACING` m, drivable in
/// both directions.
fn corridor(poly: &[(f64, f64)], closed: bool) -> RoadGraph {
    let total = poly_length(poly);
    let n = (total / SPACING).round() as usize;
    let count = if closed { n } else { n + 1 };
    let waypoints: Vec<Waypoint> = (0..count)
        .map(|k| {
            let (x, y, h) = along(poly, k as f64 * SPACING);
            Waypoint::new(k, x, y, h)
        })
        .collect();
    let mut edges = Vec::new();
    let links = if closed { count } else { count - 1 };
    for k in 0..links {
        let (a, b) = (k, (k + 1) % count);
        let len = waypoints[a].distance_to(waypoints[b].x, waypoints[b].y);
        edges.push(Edge::new(a, b, len, AISLE_SPEED, false));
        edges.push(Edge::new(b, a, len, AISLE_SPEED, false));
    }
    build_graph(waypoints, edges, vec![]).expect("corridor fixture is valid")
}

fn poly_length(poly: &[(f64, f64)]) -> f64 {
    poly.windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .sum()
}

/// Point and direction at arc length `s` along a polyline, wrapping around
/// for closed loops (first point repeated at the end).
fn along(poly: &[(f64, f64)], s: f64) -> (f64, f64, f64) {
    let total = poly_length(poly);
    let mut s = s.rem_euclid(total.max(f64::MIN_POSITIVE));
    for w in poly.windows(2) {
        let len = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        let h = (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0);
        if s <= len {
            let f = s / len;
            return (
                w[0].0 + (w[1].0 - w[0].0) * f,
                w[0].1 + (w[1].1 - w[0].1) * f,
                h,
            );
        }
        s -= len;
    }
    let w = &poly[poly.len() - 2..];
    (w[1].0, w[1].1, (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0))
}

/// Trajectories on a corridor plus the window in which the script holds a
/// jam, if any.
#[derive(Debug, Clone)]
pub struct ScriptedTraffic {
    pub graph: RoadGraph,
    pub samples: Vec<TrajectorySample>,
    pub dwell_window: Option<(f64, f64)>,
}

/// Samples a vehicle moving through `(t, s)` keyframes along a polyline,
/// every `step` seconds.
fn script(poly: &[(f64, f64)], id: usize, keys: &[(f64, f64)], step: f64) -> Vec<TrajectorySample> {
    let t_end = keys[keys.len() - 1].0;
    let n = (t_end / step).round() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 * step;
            // keyframe segment starting at or before t
            let i = keys
                .partition_point(|kf| kf.0 <= t)
                .clamp(1, keys.len() - 1)
                - 1;
            let (a, b) = (keys[i], keys[i + 1]);
            let rate = (b.1 - a.1) / (b.0 - a.0);
            let s = a.1 + rate * (t - a.0);
            let (x, y, h) = along(poly, s);
            let heading = if rate < 0.0 {
                crate::roadnet::normalize_angle(h + std::f64::consts::PI)
            } else {
                h
            };
            TrajectorySample {
                t,
                vehicle_id: id,
                x,
                y,
                heading,
                speed: rate.abs(),
                fork_height: 0.0,
                load_mass: 0.0,
                soc: 1.0,
            }
        })
        .collect()
}

fn by_time(mut samples: Vec<TrajectorySample>) -> Vec<TrajectorySample> {
    samples.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.vehicle_id.cmp(&b.vehicle_id)));
    samples
}

/// Four vehicles converge on the bend of an L-shaped corridor, creep there
/// between 30 s and 60 s, then drive back out.
pub fn narrow_corner() -> ScriptedTraffic {
    let poly = [(0.0, 0.0), (40.0, 0.0), (40.0, 40.0)];
    // (start, jam) arc positions; the bend is at s = 40
    let plan = [(0.0, 35.0), (10.0, 38.5), (80.0, 45.5), (70.0, 42.0)];
    let mut samples = Vec::new();
    for (id, &(start, jam)) in plan.iter().enumerate() {
        let creep = if jam < 40.0 { 0.3 } else { -0.3 };
        let keys = [
            (0.0, start),
            (30.0, jam),
            (60.0, jam + creep),
            (90.0, start),
        ];
        samples.extend(script(&poly, id, &keys, 0.5));
    }
    ScriptedTraffic {
        graph: corridor(&poly, false),
        samples: by_time(samples),
        dwell_window: Some((30.0, 60.0)),
    }
}

/// Four vehicles circling a 200 m loop at 2 m/s, 50 m apart.
pub fn free_flow() -> ScriptedTraffic {
    let poly = [
        (0.0, 0.0),
        (60.0, 0.0),
        (60.0, 40.0),
        (0.0, 40.0),
        (0.0, 0.0),
    ];
    let mut samples = Vec::new();
    for id in 0..4 {
        let s0 = 50.0 * id as f64;
        samples.extend(script(&poly, id, &[(0.0, s0), (90.0, s0 + 180.0)], 0.5));
    }
    ScriptedTraffic {
        graph: corridor(&poly, true),
        samples: by_time(samples),
        dwell_window: None,
    }
}
