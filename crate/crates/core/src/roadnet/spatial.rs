use super::{NodeId, Waypoint};

/// Uniform bucket grid over waypoint positions for nearest-node queries.
#[derive(Debug, Clone)]
pub(super) struct GridIndex {
    min_x: f64,
    min_y: f64,
    cell: f64,
    nx: i64,
    ny: i64,
    buckets: Vec<Vec<u32>>,
}

fn dist2(w: &Waypoint, x: f64, y: f64) -> f64 {
    let dx = w.x - x;
    let dy = w.y - y;
    dx * dx + dy * dy
}

impl GridIndex {
    pub(super) fn build(waypoints: &[Waypoint]) -> Self {
        if waypoints.is_empty() {
            return Self {
                min_x: 0.0,
                min_y: 0.0,
                cell: 1.0,
                nx: 0,
                ny: 0,
                buckets: Vec::new(),
            };
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for w in waypoints {
            x0 = x0.min(w.x);
            y0 = y0.min(w.y);
            x1 = x1.max(w.x);
            y1 = y1.max(w.y);
        }
        let area = ((x1 - x0) * (y1 - y0)).max(1e-12);
        // roughly two points per bucket
        let mut cell = (2.0 * area / waypoints.len() as f64).sqrt();
        let span = (x1 - x0).max(y1 - y0);
        if !(cell > 0.0) || !cell.is_finite() {
            cell = span.max(1.0);
        }
        cell = cell.max(span / 1024.0).max(1e-9);
        let nx = ((x1 - x0) / cell).floor() as i64 + 1;
        let ny = ((y1 - y0) / cell).floor() as i64 + 1;
        let mut buckets = vec![Vec::new(); (nx * ny) as usize];
        let mut index = Self {
            min_x: x0,
            min_y: y0,
            cell,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (i, w) in waypoints.iter().enumerate() {
            let (cx, cy) = index.cell_of(w.x, w.y);
            let cx = cx.clamp(0, nx - 1);
            let cy = cy.clamp(0, ny - 1);
            buckets[(cy * nx + cx) as usize].push(i as u32);
        }
        index.buckets = buckets;
        index
    }

    fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        let fx = ((x - self.min_x) / self.cell).floor();
        let fy = ((y - self.min_y) / self.cell).floor();
        // saturating conversion keeps far-away queries well defined
        (fx.clamp(-1e15, 1e15) as i64, fy.clamp(-1e15, 1e15) as i64)
    }

    pub(super) fn nearest(&self, waypoints: &[Waypoint], x: f64, y: f64) -> NodeId {
        let (qx, qy) = self.cell_of(x, y);
        let gap = |q: i64, n: i64| {
            if q < 0 {
                -q
            } else if q >= n {
                q - n + 1
            } else {
                0
            }
        };
        let r_min = gap(qx, self.nx).max(gap(qy, self.ny));
        let r_max = (qx.max(self.nx - 1 - qx))
            .max(qy.max(self.ny - 1 - qy))
            .max(r_min);
        let mut best: Option<(f64, u32)> = None;
        let mut r = r_min;
        while r <= r_max {
            if let Some((d2, _)) = best {
                // every cell in ring r is at least (r - 1) cells away on one axis
                let lb = (r - 1).max(0) as f64 * self.cell;
                if d2.sqrt() < lb {
                    break;
                }
            }
            for cy in (qy - r).max(0)..=(qy + r).min(self.ny - 1) {
                let on_edge_row = cy == qy - r || cy == qy + r;
                let xs: Box<dyn Iterator<Item = i64>> = if on_edge_row {
                    Box::new((qx - r).max(0)..=(qx + r).min(self.nx - 1))
                } else {
                    Box::new(
                        [qx - r, qx + r]
                            .into_iter()
                            .filter(|&c| c >= 0 && c < self.nx),
                    )
                };
                for cx in xs {
                    if r == 0 && (cx != qx || cy != qy) {
                        continue;
                    }
                    for &i in &self.buckets[(cy * self.nx + cx) as usize] {
                        let d2 = dist2(&waypoints[i as usize], x, y);
                        let better = match best {
                            None => true,
                            Some((bd, bi)) => d2 < bd || (d2 == bd && i < bi),
                        };
                        if better {
                            best = Some((d2, i));
                        }
                    }
                }
            }
            r += 1;
        }
        NodeId(best.expect("index covers every waypoint").1 as usize)
    }
}
