//! Polyline a vehicle follows, with the speed constraints along it.

/// Vehicles never plan to pass a vertex slower than this, so a sharp
/// corner cannot stall a route.
pub const CREEP_SPEED: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    points: Vec<(f64, f64)>,
    /// Arc length at each point.
    cum: Vec<f64>,
    /// Speed limit of the segment leaving each point.
    seg_limit: Vec<f64>,
    /// Speed allowed when passing each point; zero at the end.
    vertex_cap: Vec<f64>,
}

fn circumradius(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0).hypot(b.1 - a.1);
    let bc = (c.0 - b.0).hypot(c.1 - b.1);
    let ca = (a.0 - c.0).hypot(a.1 - c.1);
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    if cross.abs() <= 1e-12 * ab * bc {
        let dot = (b.0 - a.0) * (c.0 - b.0) + (b.1 - a.1) * (c.1 - b.1);
        return if dot >= 0.0 { f64::INFINITY } else { 0.0 };
    }
    ab * bc * ca / (2.0 * cross.abs())
}

impl Route {
    /// `limits[i]` is the speed limit from `points[i]` to `points[i + 1]`.
    /// Zero-length segments are dropped.
    pub fn new(points: &[(f64, f64)], limits: &[f64], a_lat_max: f64) -> Self {
        assert_eq!(
            limits.len() + 1,
            points.len().max(1),
            "one limit per segment"
        );
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        let mut lim: Vec<f64> = Vec::with_capacity(limits.len());
        for (i, &p) in points.iter().enumerate() {
            if let Some(&last) = pts.last() {
                if last == p {
                    continue;
                }
                lim.push(limits[i - 1]);
            }
            pts.push(p);
        }
        let mut cum = Vec::with_capacity(pts.len());
        let mut s = 0.0;
        for (i, p) in pts.iter().enumerate() {
            if i > 0 {
                let q = pts[i - 1];
                s += (p.0 - q.0).hypot(p.1 - q.1);
            }
            cum.push(s);
        }
        let n = pts.len();
        let mut vertex_cap = vec![f64::INFINITY; n];
        for k in 1..n {
            if k + 1 == n {
                vertex_cap[k] = 0.0;
            } else {
                let r = circumradius(pts[k - 1], pts[k], pts[k + 1]);
                vertex_cap[k] = (a_lat_max * r).sqrt().min(lim[k]).max(CREEP_SPEED);
            }
        }
        Self {
            points: pts,
            cum,
            seg_limit: lim,
            vertex_cap,
        }
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Index of the segment containing arc position `s`; a vertex belongs to
    /// the segment leaving it.
    fn segment(&self, s: f64) -> usize {
        let i = self.cum.partition_point(|&c| c <= s);
        i.saturating_sub(1).min(self.points.len().saturating_sub(2))
    }

    pub fn position(&self, s: f64) -> (f64, f64) {
        if self.points.len() < 2 {
            return self.points[0];
        }
        let s = s.clamp(0.0, self.length());
        let k = self.segment(s);
        let (a, b) = (self.points[k], self.points[k + 1]);
        let len = self.cum[k + 1] - self.cum[k];
        let f = (s - self.cum[k]) / len;
        if f >= 1.0 {
            return b;
        }
        (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
    }

    /// Direction of travel at `s`; `None` for a single-point route.
    pub fn heading(&self, s: f64) -> Option<f64> {
        if self.points.len() < 2 {
            return None;
        }
        let k = self.segment(s.clamp(0.0, self.length()));
        let (a, b) = (self.points[k], self.points[k + 1]);
        Some((b.1 - a.1).atan2(b.0 - a.0))
    }

    pub fn limit_at(&self, s: f64) -> f64 {
        if self.seg_limit.is_empty() {
            return 0.0;
        }
        self.seg_limit[self.segment(s.clamp(0.0, self.length()))]
    }

    /// Highest speed for the coming step from which every vertex ahead can
    /// still be reached at or below its cap when braking at `b`. Position
    /// advances by the new speed times `dt`.
    pub fn brake_cap(&self, s: f64, dt: f64, b: f64, v_max: f64) -> f64 {
        // vertices farther than this cannot bind
        let reach = v_max * v_max / (2.0 * b) + v_max * dt;
        let first = self.cum.partition_point(|&c| c <= s);
        let mut cap = f64::INFINITY;
        for k in first..self.points.len() {
            let d = self.cum[k] - s;
            if d > reach {
                break;
            }
            cap = cap.min(stopping_speed(d, self.vertex_cap[k], dt, b));
        }
        cap
    }
}

/// Largest `v` with `v² − c² ≤ 2·b·(d − v·dt)`.
pub fn stopping_speed(d: f64, c: f64, dt: f64, b: f64) -> f64 {
    let bdt = b * dt;
    let disc = bdt * bdt + 2.0 * b * d.max(0.0) + c * c;
    (-bdt + disc.sqrt()).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_repeated_points() {
        let r = Route::new(&[(0.0, 0.0), (0.0, 0.0), (3.0, 4.0)], &[1.0, 2.0], 1.0);
        assert_eq!(r.points().len(), 2);
        assert_eq!(r.length(), 5.0);
        assert_eq!(r.limit_at(1.0), 2.0);
    }

    #[test]
    fn positions_and_headings() {
        let r = Route::new(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)], &[4.0, 4.0], 1.0);
        assert_eq!(r.position(5.0), (5.0, 0.0));
        assert_eq!(r.position(15.0), (10.0, 5.0));
        assert_eq!(r.position(25.0), (10.0, 10.0));
        assert_eq!(r.heading(10.0), Some(std::f64::consts::FRAC_PI_2));
    }

    #[test]
    fn right_angle_corner_radius() {
        // legs of 2.5 m: circumradius is half the hypotenuse
        let r = circumradius((0.0, 0.0), (2.5, 0.0), (2.5, 2.5));
        assert!((r - 2.5 * 2f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(
            circumradius((0.0, 0.0), (1.0, 0.0), (2.0, 0.0)),
            f64::INFINITY
        );
    }

    #[test]
    fn stopping_speed_is_recursively_feasible() {
        let (b, dt) = (1.5, 0.1);
        let mut d: f64 = 7.0;
        let mut v = stopping_speed(d, 0.0, dt, b);
        for _ in 0..200 {
            d -= v * dt;
            assert!(d >= -1e-12);
            let next = stopping_speed(d, 0.0, dt, b);
            assert!(next >= v - b * dt - 1e-12);
            v = next;
        }
        assert!(d < 1e-3);
    }
}
