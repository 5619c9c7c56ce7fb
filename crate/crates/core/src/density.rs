//! Traffic-density clustering over network distances.
//!
//! Vehicles are snapped to their nearest node; two vehicles are linked when
//! the shorter of their two directed network distances is within the
//! distance threshold, and clusters are the connected components of that
//! relation. A cluster of two or more vehicles whose mean speed is below the
//! velocity threshold is critical.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::numfmt::fmt_f64;
use crate::roadnet::{dijkstra, NodeId, RoadGraph, RoadnetError};
use crate::trajectory::{first_unsorted, group_by_vehicle, interpolate, TrajectorySample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("snapshot has no vehicles")]
    EmptyFleet,
    #[error("invalid density configuration: {0}")]
    InvalidConfig(String),
    #[error("samples of vehicle {vehicle} are not time-sorted at index {index}")]
    UnsortedSamples { vehicle: usize, index: usize },
    #[error(transparent)]
    Roadnet(#[from] RoadnetError),
}

/// How directed distances are combined into the undirected link relation.
/// Both variants link `i` and `j` exactly when one of the two directed
/// distances is within the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    SymmetricMin,
    DirectedEither,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityConfig {
    pub distance_threshold: f64,
    pub velocity_threshold: f64,
    pub linkage: Linkage,
    pub snapshot_interval: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 15.0,
            velocity_threshold: 0.5,
            linkage: Linkage::SymmetricMin,
            snapshot_interval: 1.0,
        }
    }
}

impl DensityConfig {
    pub fn validate(&self) -> Result<(), DensityError> {
        if !(self.distance_threshold > 0.0 && self.distance_threshold.is_finite()) {
            return Err(DensityError::InvalidConfig(format!(
                "distance threshold {} must be positive",
                self.distance_threshold
            )));
        }
        if !(self.velocity_threshold >= 0.0 && self.velocity_threshold.is_finite()) {
            return Err(DensityError::InvalidConfig(format!(
                "velocity threshold {} must be non-negative",
                self.velocity_threshold
            )));
        }
        if !(self.snapshot_interval > 0.0 && self.snapshot_interval.is_finite()) {
            return Err(DensityError::InvalidConfig(format!(
                "snapshot interval {} must be positive",
                self.snapshot_interval
            )));
        }
        Ok(())
    }
}

/// Fleet state at one instant. Row and column `i` of `distances` belong to
/// `vehicles[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub vehicles: Vec<usize>,
    pub nodes: Vec<NodeId>,
    pub positions: Vec<(f64, f64)>,
    pub speeds: Vec<f64>,
    /// `distances[i][j]`: network distance from `i`'s node to `j`'s node.
    pub distances: Vec<Vec<f64>>,
}

/// Builds a snapshot from one sample per vehicle, all taken at `t`. Runs one
/// Dijkstra per distinct occupied node.
pub fn snapshot(
    t: f64,
    samples: &[TrajectorySample],
    graph: &RoadGraph,
) -> Result<Snapshot, DensityError> {
    if samples.is_empty() {
        return Err(DensityError::EmptyFleet);
    }
    let mut nodes = Vec::with_capacity(samples.len());
    for s in samples {
        nodes.push(graph.nearest_node(s.x, s.y)?);
    }
    let mut from: HashMap<NodeId, Vec<f64>> = HashMap::new();
    for &n in &nodes {
        if let std::collections::hash_map::Entry::Vacant(e) = from.entry(n) {
            e.insert(dijkstra(graph, n)?);
        }
    }
    let distances = nodes
        .iter()
        .map(|a| nodes.iter().map(|b| from[a][b.0]).collect())
        .collect();
    Ok(Snapshot {
        t,
        vehicles: samples.iter().map(|s| s.vehicle_id).collect(),
        nodes,
        positions: samples.iter().map(|s| (s.x, s.y)).collect(),
        speeds: samples.iter().map(|s| s.speed).collect(),
        distances,
    })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Partition of snapshot indices. Members are ascending; clusters are
/// ordered by their smallest member.
pub fn clusters(s: &Snapshot, cfg: &DensityConfig) -> Vec<Vec<usize>> {
    let n = s.vehicles.len();
    let t = cfg.distance_threshold;
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let (dij, dji) = (s.distances[i][j], s.distances[j][i]);
            let linked = match cfg.linkage {
                Linkage::SymmetricMin => dij.min(dji) <= t,
                Linkage::DirectedEither => dij <= t || dji <= t,
            };
            if linked {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Vehicle ids, ascending.
    pub members: Vec<usize>,
    pub mean_speed: f64,
    pub critical: bool,
}

/// Mean speed and criticality per cluster. `partition` holds indices into
/// `speeds`; `ids` maps an index to its vehicle id.
pub fn flag_critical(
    partition: &[Vec<usize>],
    speeds: &[f64],
    ids: &[usize],
    cfg: &DensityConfig,
) -> Vec<Cluster> {
    partition
        .iter()
        .map(|c| {
            let mean_speed = c.iter().map(|&i| speeds[i]).sum::<f64>() / c.len() as f64;
            let mut members: Vec<usize> = c.iter().map(|&i| ids[i]).collect();
            members.sort_unstable();
            Cluster {
                members,
                mean_speed,
                critical: c.len() >= 2 && mean_speed < cfg.velocity_threshold,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub t: f64,
    pub clusters: Vec<Cluster>,
}

pub fn report(s: &Snapshot, cfg: &DensityConfig) -> ClusterReport {
    ClusterReport {
        t: s.t,
        clusters: flag_critical(&clusters(s, cfg), &s.speeds, &s.vehicles, cfg),
    }
}

/// A stretch of consecutive ticks during which one tracked cluster stays
/// critical.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub cluster_id: usize,
    pub start: f64,
    pub end: f64,
    pub peak_size: usize,
    /// Node nearest to the mean member position over the episode.
    pub centroid_node: NodeId,
}

impl Episode {
    pub fn overlaps(&self, from: f64, to: f64) -> bool {
        self.start <= to && from <= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityTimeline {
    pub reports: Vec<ClusterReport>,
    /// `cluster_ids[k][c]`: tracked id of cluster `c` in report `k`.
    pub cluster_ids: Vec<Vec<usize>>,
    pub episodes: Vec<Episode>,
}

/// Fraction of shared members relative to the larger cluster.
fn overlap(a: &[usize], b: &[usize]) -> f64 {
    let shared = a.iter().filter(|m| b.binary_search(m).is_ok()).count();
    shared as f64 / a.len().max(b.len()) as f64
}

/// Gives each cluster a tracked id: a cluster inherits the id of the
/// previous tick's cluster it shares at least half its members with
/// (relative to the larger of the two). Larger clusters choose first.
fn track_ids(reports: &[ClusterReport]) -> Vec<Vec<usize>> {
    let mut next_id = 0;
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(reports.len());
    for (k, r) in reports.iter().enumerate() {
        let mut ids = vec![usize::MAX; r.clusters.len()];
        let mut order: Vec<usize> = (0..r.clusters.len()).collect();
        order.sort_by_key(|&c| {
            (
                std::cmp::Reverse(r.clusters[c].members.len()),
                r.clusters[c].members[0],
            )
        });
        let mut claimed = Vec::new();
        for c in order {
            let inherited = (k > 0)
                .then(|| {
                    let prev = &reports[k - 1];
                    (0..prev.clusters.len())
                        .filter(|p| !claimed.contains(p))
                        .map(|p| {
                            (
                                overlap(&r.clusters[c].members, &prev.clusters[p].members),
                                p,
                            )
                        })
                        .filter(|&(o, _)| o >= 0.5)
                        .fold(None, |best: Option<(f64, usize)>, cand| match best {
                            Some(b) if b.0 >= cand.0 => Some(b),
                            _ => Some(cand),
                        })
                })
                .flatten();
            ids[c] = match inherited {
                Some((_, p)) => {
                    claimed.push(p);
                    out[k - 1][p]
                }
                None => {
                    next_id += 1;
                    next_id - 1
                }
            };
        }
        out.push(ids);
    }
    out
}

/// Reports at every `snapshot_interval` tick covered by at least one
/// vehicle, with tracked cluster ids and critical episodes.
pub fn density_timeline(
    samples: &[TrajectorySample],
    graph: &RoadGraph,
    cfg: &DensityConfig,
) -> Result<DensityTimeline, DensityError> {
    cfg.validate()?;
    let tracks = group_by_vehicle(samples);
    for (&vehicle, track) in &tracks {
        if let Some(index) = first_unsorted(track) {
            return Err(DensityError::UnsortedSamples { vehicle, index });
        }
    }
    let mut reports = Vec::new();
    let mut snapshots = Vec::new();
    if let (Some(t0), Some(t1)) = (
        samples.iter().map(|s| s.t).reduce(f64::min),
        samples.iter().map(|s| s.t).reduce(f64::max),
    ) {
        let dt = cfg.snapshot_interval;
        let k0 = (t0 / dt - 1e-9).ceil() as i64;
        let k1 = (t1 / dt + 1e-9).floor() as i64;
        for k in k0..=k1 {
            let t = k as f64 * dt;
            let present: Vec<TrajectorySample> = tracks
                .values()
                .filter_map(|tr| {
                    let (a, b) = (tr[0].t, tr[tr.len() - 1].t);
                    (t >= a - 1e-9 && t <= b + 1e-9)
                        .then(|| interpolate(tr, t.clamp(a, b)).expect("in span"))
                })
                .collect();
            if present.is_empty() {
                continue;
            }
            let s = snapshot(t, &present, graph)?;
            reports.push(report(&s, cfg));
            snapshots.push(s);
        }
    }
    let cluster_ids = track_ids(&reports);
    let episodes = episodes(&reports, &snapshots, &cluster_ids, graph)?;
    Ok(DensityTimeline {
        reports,
        cluster_ids,
        episodes,
    })
}

fn episodes(
    reports: &[ClusterReport],
    snapshots: &[Snapshot],
    ids: &[Vec<usize>],
    graph: &RoadGraph,
) -> Result<Vec<Episode>, DensityError> {
    struct Open {
        start: f64,
        end: f64,
        peak: usize,
        sum: (f64, f64),
        count: usize,
        last_tick: usize,
    }
    let mut open: BTreeMap<usize, Open> = BTreeMap::new();
    let mut done: Vec<(usize, Open)> = Vec::new();
    for (k, (r, s)) in reports.iter().zip(snapshots).enumerate() {
        for (c, cl) in r.clusters.iter().enumerate() {
            if !cl.critical {
                continue;
            }
            let id = ids[k][c];
            let (mut sx, mut sy) = (0.0, 0.0);
            for m in &cl.members {
                let i = s
                    .vehicles
                    .iter()
                    .position(|v| v == m)
                    .expect("member in snapshot");
                sx += s.positions[i].0;
                sy += s.positions[i].1;
            }
            let e = open.entry(id).or_insert(Open {
                start: r.t,
                end: r.t,
                peak: 0,
                sum: (0.0, 0.0),
                count: 0,
                last_tick: k,
            });
            e.end = r.t;
            e.peak = e.peak.max(cl.members.len());
            e.sum.0 += sx;
            e.sum.1 += sy;
            e.count += cl.members.len();
            e.last_tick = k;
        }
        let closed: Vec<usize> = open
            .iter()
            .filter(|(_, e)| e.last_tick != k)
            .map(|(&id, _)| id)
            .collect();
        for id in closed {
            done.push((id, open.remove(&id).expect("listed")));
        }
    }
    done.extend(open);
    done.sort_by(|a, b| a.1.start.total_cmp(&b.1.start).then(a.0.cmp(&b.0)));
    done.into_iter()
        .map(|(id, e)| {
            let n = e.count as f64;
            Ok(Episode {
                cluster_id: id,
                start: e.start,
                end: e.end,
                peak_size: e.peak,
                centroid_node: graph.nearest_node(e.sum.0 / n, e.sum.1 / n)?,
            })
        })
        .collect()
}

pub const REPORT_HEADER: &str = "t,cluster_id,member_ids,mean_speed,critical";

/// One row per cluster per tick, members joined by `;`.
pub fn write_report_csv(tl: &DensityTimeline, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "{REPORT_HEADER}");
    for (r, ids) in tl.reports.iter().zip(&tl.cluster_ids) {
        for (c, id) in r.clusters.iter().zip(ids) {
            let members: Vec<String> = c.members.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(r.t),
                id,
                members.join(";"),
                fmt_f64(c.mean_speed),
                c.critical
            );
        }
    }
    out
}

pub fn write_episode_summary(tl: &DensityTimeline, graph: &RoadGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "critical episodes: {}", tl.episodes.len());
    for e in &tl.episodes {
        let w = graph.waypoint(e.centroid_node);
        let _ = writeln!(
            out,
            "cluster {} start {} end {} peak_size {} centroid_node {} ({}, {})",
            e.cluster_id,
            fmt_f64(e.start),
            fmt_f64(e.end),
            e.peak_size,
            e.centroid_node.0,
            fmt_f64(w.x),
            fmt_f64(w.y)
        );
    }
    out
}
