#![allow(dead_code)]

use forkfleet::rng::SplitMix64;
use forkfleet::roadnet::{build_graph, Edge, RoadGraph, Waypoint};

/// Random directed graph: points in a 100 m square, each edge at least as
/// long as its chord, some pairs two-way and some one-way.
pub fn random_graph(rng: &mut SplitMix64, n: usize, edge_factor: f64) -> RoadGraph {
    let waypoints: Vec<Waypoint> = (0..n)
        .map(|i| Waypoint::new(i, rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0), 0.0))
        .collect();
    let m = (n as f64 * edge_factor) as usize;
    let mut edges = Vec::new();
    for _ in 0..m {
        let a = rng.below(n as u64) as usize;
        let mut b = rng.below(n as u64) as usize;
        if a == b {
            b = (b + 1) % n;
        }
        let chord = waypoints[a].distance_to(waypoints[b].x, waypoints[b].y);
        // occasionally exactly the chord, otherwise stretched
        let len = if rng.below(4) == 0 {
            chord.max(1e-3)
        } else {
            (chord * rng.uniform(1.0, 1.5)).max(1e-3)
        };
        let two_way = rng.below(2) == 0;
        edges.push(Edge::new(a, b, len, 3.0, !two_way));
        if two_way {
            edges.push(Edge::new(b, a, len, 3.0, false));
        }
    }
    build_graph(waypoints, edges, vec![]).unwrap()
}

/// Rounds edge lengths to whole meters so that equal-length alternatives are
/// common, exercising tie handling.
pub fn integer_graph(rng: &mut SplitMix64, n: usize, edge_factor: f64) -> RoadGraph {
    let waypoints: Vec<Waypoint> = (0..n)
        .map(|i| Waypoint::new(i, rng.below(20) as f64, rng.below(20) as f64, 0.0))
        .collect();
    let m = (n as f64 * edge_factor) as usize;
    let mut edges = Vec::new();
    for _ in 0..m {
        let a = rng.below(n as u64) as usize;
        let b = (a + 1 + rng.below(n as u64 - 1) as usize) % n;
        let chord = waypoints[a].distance_to(waypoints[b].x, waypoints[b].y);
        let len = chord.ceil().max(1.0) + rng.below(3) as f64;
        edges.push(Edge::new(a, b, len, 3.0, true));
    }
    build_graph(waypoints, edges, vec![]).unwrap()
}

/// Standard normal deviate by the Box-Muller transform.
pub fn gaussian(rng: &mut SplitMix64) -> f64 {
    let u1 = 1.0 - rng.next_f64();
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
