//! Charging-station placement from recorded traffic, and the occupancy
//! heatmap used to judge it.
//!
//! Placement is a visit-weighted greedy coverage heuristic: every node is
//! scored by the visit weight it would serve, discounted by network distance
//! as `1 / (1 + d / d_scale)`. Each round takes the best node that keeps
//! `min_separation` to the stations already chosen, then drops the weight
//! that station covers. Separation and coverage use the shorter of the two
//! directed distances.

use std::fmt::Write as _;

use thiserror::Error;

use crate::numfmt::fmt_f64;
use crate::roadnet::{dijkstra, dijkstra_to, NodeId, RoadGraph, RoadnetError};
use crate::trajectory::{first_unsorted, group_by_vehicle, TrajectorySample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("heatmap grid has no cells")]
    DegenerateGrid,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("no node can host a station")]
    InfeasibleSeparation,
    #[error("placement has no stations")]
    EmptyPlacement,
    #[error("invalid placement configuration: {0}")]
    InvalidConfig(String),
    #[error("samples of vehicle {vehicle} are not time-sorted at index {index}")]
    UnsortedSamples { vehicle: usize, index: usize },
    #[error("heatmap parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Roadnet(#[from] RoadnetError),
}

pub const DEFAULT_CELL_SIZE: f64 = 2.0;

/// Extent of a heatmap. Cell `(col, row)` covers
/// `[ox + col·cs, ox + (col+1)·cs) × [oy + row·cs, oy + (row+1)·cs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    /// Smallest grid with the given cell size that covers the graph's
    /// bounding box grown by `margin` on every side.
    pub fn covering(
        graph: &RoadGraph,
        cell_size: f64,
        margin: f64,
    ) -> Result<Self, PlacementError> {
        let (x0, y0, x1, y1) = graph.bounding_box().ok_or(PlacementError::EmptyGraph)?;
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(PlacementError::DegenerateGrid);
        }
        let (ox, oy) = (x0 - margin, y0 - margin);
        Ok(Self {
            origin_x: ox,
            origin_y: oy,
            cell_size,
            width: ((x1 + margin - ox) / cell_size).floor() as usize + 1,
            height: ((y1 + margin - oy) / cell_size).floor() as usize + 1,
        })
    }

    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin_x) / self.cell_size).floor();
        let r = ((y - self.origin_y) / self.cell_size).floor();
        (c >= 0.0 && r >= 0.0 && c < self.width as f64 && r < self.height as f64)
            .then_some((c as usize, r as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub spec: GridSpec,
    /// Row-major, row 0 at the smallest y.
    pub counts: Vec<u64>,
    /// Samples outside the extent.
    pub overflow: u64,
}

impl HeatmapGrid {
    pub fn get(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.spec.width + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        let s = &self.spec;
        (
            s.origin_x + (col as f64 + 0.5) * s.cell_size,
            s.origin_y + (row as f64 + 0.5) * s.cell_size,
        )
    }

    /// The busiest tenth of the non-empty cells (rounded up), plus any cells
    /// tied with the last of them. Ordered by count, then row-major index.
    pub fn top_decile(&self) -> Vec<(usize, usize)> {
        let mut cells: Vec<(u64, usize)> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (c, i))
            .collect();
        if cells.is_empty() {
            return Vec::new();
        }
        cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let keep = cells.len().div_ceil(10);
        let cutoff = cells[keep - 1].0;
        cells
            .into_iter()
            .take_while(|c| c.0 >= cutoff)
            .map(|(_, i)| (i % self.spec.width, i / self.spec.width))
            .collect()
    }
}

/// Counts samples per cell.
pub fn heatmap(
    samples: &[TrajectorySample],
    spec: GridSpec,
) -> Result<HeatmapGrid, PlacementError> {
    if spec.width == 0 || spec.height == 0 || !(spec.cell_size > 0.0 && spec.cell_size.is_finite())
    {
        return Err(PlacementError::DegenerateGrid);
    }
    let mut grid = HeatmapGrid {
        spec,
        counts: vec![0; spec.width * spec.height],
        overflow: 0,
    };
    for s in samples {
        match spec.cell_of(s.x, s.y) {
            Some((c, r)) => grid.counts[r * spec.width + c] += 1,
            None => grid.overflow += 1,
        }
    }
    Ok(grid)
}

/// Header line, then `height` rows of `width` counts, row 0 first.
pub fn write_heatmap(grid: &HeatmapGrid) -> String {
    let s = &grid.spec;
    let mut out = format!(
        "heatmap v1 {} {} {} {} {}\n",
        fmt_f64(s.origin_x),
        fmt_f64(s.origin_y),
        fmt_f64(s.cell_size),
        s.width,
        s.height
    );
    for row in grid.counts.chunks(s.width) {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Reads the text grid back. Lines starting with `#` are skipped. The
/// overflow tally is not part of the format and comes back as zero.
pub fn parse_heatmap(text: &str) -> Result<HeatmapGrid, PlacementError> {
    let err = |line: usize, message: &str| PlacementError::Parse {
        line,
        message: message.to_string(),
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim_start().starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
    let header: Vec<&str> = header.split_whitespace().collect();
    if header.len() != 7 || header[0] != "heatmap" || header[1] != "v1" {
        return Err(err(
            hline,
            "expected `heatmap v1 <ox> <oy> <cell_size> <width> <height>`",
        ));
    }
    let num = |i: usize| {
        header[i]
            .parse::<f64>()
            .map_err(|_| err(hline, "bad number"))
    };
    let int = |i: usize| {
        header[i]
            .parse::<usize>()
            .map_err(|_| err(hline, "bad cell count"))
    };
    let spec = GridSpec {
        origin_x: num(2)?,
        origin_y: num(3)?,
        cell_size: num(4)?,
        width: int(5)?,
        height: int(6)?,
    };
    if spec.width == 0 || spec.height == 0 || !(spec.cell_size > 0.0) {
        return Err(PlacementError::DegenerateGrid);
    }
    let mut counts = Vec::with_capacity(spec.width * spec.height);
    let mut last = hline;
    for _ in 0..spec.height {
        let (n, line) = lines.next().ok_or_else(|| err(last + 1, "missing row"))?;
        last = n;
        let row: Result<Vec<u64>, _> = line.split_whitespace().map(str::parse).collect();
        let row = row.map_err(|_| err(n, "bad count"))?;
        if row.len() != spec.width {
            return Err(err(n, "wrong number of cells"));
        }
        counts.extend(row);
    }
    if let Some((n, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(n, "trailing data"));
    }
    Ok(HeatmapGrid {
        spec,
        counts,
        overflow: 0,
    })
}

pub const NONZERO_HEADER: &str = "col,row,x,y,count";

/// Non-empty cells with their centers.
pub fn write_nonzero_csv(grid: &HeatmapGrid) -> String {
    let mut out = format!("{NONZERO_HEADER}\n");
    for (i, &c) in grid.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
        let (col, row) = (i % grid.spec.width, i / grid.spec.width);
        let (x, y) = grid.cell_center(col, row);
        let _ = writeln!(out, "{col},{row},{},{},{c}", fmt_f64(x), fmt_f64(y));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisitWeights {
    /// Indexed by node.
    pub weights: Vec<f64>,
}

impl VisitWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Adds each sample to its nearest node: 1 per sample, or with
/// `dwell_weighting` the time until the vehicle's next sample (the last
/// sample of a track reuses the interval before it; a lone sample adds 0).
pub fn visit_weights(
    samples: &[TrajectorySample],
    graph: &RoadGraph,
    dwell_weighting: bool,
) -> Result<VisitWeights, PlacementError> {
    if graph.node_count() == 0 {
        return Err(PlacementError::EmptyGraph);
    }
    let mut weights = vec![0.0; graph.node_count()];
    for (vehicle, track) in group_by_vehicle(samples) {
        if let Some(index) = first_unsorted(&track) {
            return Err(PlacementError::UnsortedSamples { vehicle, index });
        }
        for (i, s) in track.iter().enumerate() {
            let w = if !dwell_weighting {
                1.0
            } else if i + 1 < track.len() {
                track[i + 1].t - s.t
            } else if i > 0 {
                s.t - track[i - 1].t
            } else {
                0.0
            };
            weights[graph.nearest_node(s.x, s.y)?.0] += w;
        }
    }
    Ok(VisitWeights { weights })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementConfig {
    pub k: usize,
    pub min_separation: f64,
    pub d_scale: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            k: 5,
            min_separation: 25.0,
            d_scale: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Station {
    pub node: NodeId,
    /// Score when selected.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementResult {
    /// In selection order.
    pub stations: Vec<Station>,
    pub k: usize,
    pub min_separation: f64,
}

/// Shorter of the two directed distances between every node and `n`.
fn both_ways(graph: &RoadGraph, n: NodeId) -> Result<Vec<f64>, RoadnetError> {
    let from = dijkstra(graph, n)?;
    let to = dijkstra_to(graph, n)?;
    Ok(from.iter().zip(&to).map(|(a, b)| a.min(*b)).collect())
}

/// Greedy coverage selection of up to `k` station nodes.
pub fn place_chargers(
    graph: &RoadGraph,
    weights: &VisitWeights,
    cfg: &PlacementConfig,
) -> Result<PlacementResult, PlacementError> {
    if cfg.k == 0 {
        return Err(PlacementError::InvalidConfig("k must be at least 1".into()));
    }
    if !(cfg.min_separation >= 0.0 && cfg.d_scale > 0.0) {
        return Err(PlacementError::InvalidConfig(format!(
            "min_separation {} and d_scale {} out of range",
            cfg.min_separation, cfg.d_scale
        )));
    }
    let n = graph.node_count();
    if n == 0 {
        return Err(PlacementError::InfeasibleSeparation);
    }
    if weights.weights.len() != n {
        return Err(PlacementError::InvalidConfig(
            "one weight per node required".into(),
        ));
    }
    // decayed contribution of each weighted node u to every candidate
    let mut sources: Vec<(usize, Vec<f64>)> = Vec::new();
    for (u, &w) in weights.weights.iter().enumerate() {
        if w > 0.0 {
            let d = dijkstra(graph, NodeId(u))?;
            sources.push((
                u,
                d.iter().map(|&d| 1.0 / (1.0 + d / cfg.d_scale)).collect(),
            ));
        }
    }
    let mut w = weights.weights.clone();
    let mut feasible = vec![true; n];
    let mut stations = Vec::new();
    while stations.len() < cfg.k {
        let mut best: Option<(f64, usize)> = None;
        for node in (0..n).filter(|&v| feasible[v]) {
            let score: f64 = sources.iter().map(|(u, decay)| w[*u] * decay[node]).sum();
            if best.is_none_or(|b| score > b.0) {
                best = Some((score, node));
            }
        }
        let Some((score, node)) = best else { break };
        if !(score > 0.0) && !stations.is_empty() {
            break;
        }
        stations.push(Station {
            node: NodeId(node),
            score,
        });
        // with no visits at all one station anywhere is as good as any
        if !(score > 0.0) {
            break;
        }
        let d = both_ways(graph, NodeId(node))?;
        for v in 0..n {
            if d[v] < cfg.min_separation {
                feasible[v] = false;
            }
            if d[v] <= cfg.min_separation {
                w[v] = 0.0;
            }
        }
    }
    Ok(PlacementResult {
        stations,
        k: cfg.k,
        min_separation: cfg.min_separation,
    })
}

/// Mean over samples of the distance from the sample's nearest node to the
/// closest station, each pair measured in its shorter direction.
pub fn score_placement(
    result: &PlacementResult,
    samples: &[TrajectorySample],
    graph: &RoadGraph,
) -> Result<f64, PlacementError> {
    if result.stations.is_empty() {
        return Err(PlacementError::EmptyPlacement);
    }
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut nearest = vec![f64::INFINITY; graph.node_count()];
    for s in &result.stations {
        for (v, d) in both_ways(graph, s.node)?.into_iter().enumerate() {
            nearest[v] = nearest[v].min(d);
        }
    }
    let mut sum = 0.0;
    for s in samples {
        sum += nearest[graph.nearest_node(s.x, s.y)?.0];
    }
    Ok(sum / samples.len() as f64)
}

pub const PLACEMENT_HEADER: &str = "round,node_id,x,y,score";

pub fn write_placement_csv(
    result: &PlacementResult,
    graph: &RoadGraph,
    comments: &[String],
) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "{PLACEMENT_HEADER}");
    for (round, s) in result.stations.iter().enumerate() {
        let w = graph.waypoint(s.node);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            round + 1,
            s.node.0,
            fmt_f64(w.x),
            fmt_f64(w.y),
            fmt_f64(s.score)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> HeatmapGrid {
        HeatmapGrid {
            spec: GridSpec {
                origin_x: 0.0,
                origin_y: 0.0,
                cell_size: 1.0,
                width: 5,
                height: 4,
            },
            counts: (0..20)
                .map(|i| if i % 2 == 0 { i as u64 } else { 0 })
                .collect(),
            overflow: 0,
        }
    }

    #[test]
    fn top_decile_of_nonzero_cells() {
        // nonzero: 2, 4, ..., 18 (9 cells) -> one cell
        assert_eq!(grid().top_decile(), vec![(3, 3)]);
    }

    #[test]
    fn text_round_trip() {
        let g = grid();
        assert_eq!(parse_heatmap(&write_heatmap(&g)).unwrap(), g);
        assert!(parse_heatmap("heatmap v1 0 0 1 2 1\n1 2 3\n").is_err());
    }
}
