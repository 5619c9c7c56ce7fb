use std::collections::HashMap;

use log::warn;

use super::{ContactPoint, LinkTarget, OdrError, RoadDescription};
use crate::roadnet::{build_graph, geometry_intervals, Edge, RoadGraph, Waypoint, CHORD_TOLERANCE};

/// Speed limit given to imported lanes, m/s.
pub const DEFAULT_SPEED_LIMIT: f64 = 4.0;

/// Samples every road reference line at most `spacing` meters apart and
/// builds one directed edge chain per driving direction: right lanes run with
/// increasing `s`, left lanes against it. Both directions share the sampled
/// nodes. Road ends joined by `link` records share a node.
pub fn to_road_graph(desc: &RoadDescription, spacing: f64) -> Result<RoadGraph, OdrError> {
    to_road_graph_with(desc, spacing, DEFAULT_SPEED_LIMIT)
}

struct Sampled {
    points: Vec<(f64, f64, f64)>,
    /// Arc length between consecutive points.
    steps: Vec<f64>,
}

fn sample_road(road: &super::Road, spacing: f64) -> Sampled {
    let mut points = Vec::new();
    let mut steps = Vec::new();
    for seg in &road.plan_view {
        let n = geometry_intervals(seg.length, spacing);
        for i in 0..n {
            let a = seg.length * i as f64 / n as f64;
            let b = seg.length * (i + 1) as f64 / n as f64;
            points.push(seg.eval(a));
            steps.push(b - a);
        }
    }
    let last = road.plan_view.last().expect("plan view checked non-empty");
    points.push(last.end());
    Sampled { points, steps }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub fn to_road_graph_with(
    desc: &RoadDescription,
    spacing: f64,
    speed_limit: f64,
) -> Result<RoadGraph, OdrError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(OdrError::InvalidSpacing(spacing));
    }
    let index: HashMap<&str, usize> = desc
        .roads
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let end_key = |road: usize, c: ContactPoint| 2 * road + usize::from(c == ContactPoint::End);

    // union road ends that are linked to each other
    let mut parent: Vec<usize> = (0..2 * desc.roads.len()).collect();
    for (ri, road) in desc.roads.iter().enumerate() {
        let links = [
            (ContactPoint::Start, &road.predecessor),
            (ContactPoint::End, &road.successor),
        ];
        for (own, link) in links {
            match link {
                Some(LinkTarget::Road { id, contact }) => match index.get(id.as_str()) {
                    Some(&other) => {
                        let a = find(&mut parent, end_key(ri, own));
                        let b = find(&mut parent, end_key(other, *contact));
                        parent[a.max(b)] = a.min(b);
                    }
                    None => warn!("road {}: link to unknown road {id} ignored", road.id),
                },
                Some(LinkTarget::Junction(j)) => {
                    warn!(
                        "road {}: junction {j} connectivity is not imported",
                        road.id
                    )
                }
                None => {}
            }
        }
    }

    let mut waypoints: Vec<Waypoint> = Vec::new();
    let mut edges = Vec::new();
    let mut class_node: HashMap<usize, (usize, String)> = HashMap::new();

    for (ri, road) in desc.roads.iter().enumerate() {
        if road.length <= 0.0 {
            return Err(OdrError::DegenerateRoad(road.id.clone()));
        }
        if road.left_lanes == 0 && road.right_lanes == 0 {
            warn!("road {} has no driving lanes; skipped", road.id);
            continue;
        }
        let sampled = sample_road(road, spacing);
        let last = sampled.points.len() - 1;
        let mut ids = Vec::with_capacity(sampled.points.len());
        for (pi, &(x, y, h)) in sampled.points.iter().enumerate() {
            let contact = match pi {
                0 => Some(ContactPoint::Start),
                p if p == last => Some(ContactPoint::End),
                _ => None,
            };
            let id = match contact {
                Some(c) => {
                    let class = find(&mut parent, end_key(ri, c));
                    if let Some((node, owner)) = class_node.get(&class) {
                        let w = &waypoints[*node];
                        let gap = w.distance_to(x, y);
                        if gap > super::CONTINUITY_TOLERANCE {
                            return Err(OdrError::LinkGap {
                                a: owner.clone(),
                                b: road.id.clone(),
                                gap,
                            });
                        }
                        *node
                    } else {
                        let node = waypoints.len();
                        waypoints.push(Waypoint::new(node, x, y, h));
                        class_node.insert(class, (node, road.id.clone()));
                        node
                    }
                }
                None => {
                    let node = waypoints.len();
                    waypoints.push(Waypoint::new(node, x, y, h));
                    node
                }
            };
            ids.push(id);
        }

        let two_way = road.left_lanes > 0 && road.right_lanes > 0;
        for (k, &step) in sampled.steps.iter().enumerate() {
            let (a, b) = (ids[k], ids[k + 1]);
            if a == b {
                return Err(OdrError::DegenerateRoad(road.id.clone()));
            }
            let chord = waypoints[a].distance_to(waypoints[b].x, waypoints[b].y);
            // merged junction nodes can move an end by up to the join tolerance
            let length = if step + CHORD_TOLERANCE < chord {
                chord
            } else {
                step
            };
            if road.right_lanes > 0 {
                edges.push(Edge::new(a, b, length, speed_limit, !two_way));
            }
            if road.left_lanes > 0 {
                edges.push(Edge::new(b, a, length, speed_limit, !two_way));
            }
        }
    }

    build_graph(waypoints, edges, Vec::new())
        .map_err(|e| OdrError::MalformedDocument(e.to_string()))
}
