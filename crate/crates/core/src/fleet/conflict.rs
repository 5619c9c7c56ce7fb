//! Top-down conflict handling with a global view of every pose and velocity.
//!
//! Two layers. The predictive layer extrapolates every pair linearly over the
//! horizon and caps the lower-priority vehicle (higher id) to the fastest
//! speed that keeps the predicted separation at `d_safe`. The envelope layer
//! is a hard per-step check on the actual displacement against the other
//! vehicles' positions at the start of the step: a vehicle at least `d_safe`
//! from another must end the step at least `d_safe` from that vehicle's old
//! position, and a vehicle already closer may not move towards it. Together
//! these keep every pairwise separation at or above `d_safe − v_max·dt`.

use super::KinematicParams;

/// Number of candidate speeds scanned below the desired speed.
const CANDIDATES: usize = 40;

/// What the conflict layer knows about one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agent {
    pub x: f64,
    pub y: f64,
    /// Current velocity vector, m/s.
    pub vx: f64,
    pub vy: f64,
    /// Unit direction the vehicle would move in this step.
    pub dir: (f64, f64),
    /// Speed the vehicle would drive at without conflicts; 0 when it is not
    /// driving.
    pub desired: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedCap {
    pub speed: f64,
    /// Vehicle the cap gives way to.
    pub blocker: usize,
}

/// Smallest distance over `t ∈ [0, horizon]` between two points moving with
/// constant velocities.
pub fn min_separation(dp: (f64, f64), dv: (f64, f64), horizon: f64) -> f64 {
    let vv = dv.0 * dv.0 + dv.1 * dv.1;
    let t = if vv > 0.0 {
        (-(dp.0 * dv.0 + dp.1 * dv.1) / vv).clamp(0.0, horizon)
    } else {
        0.0
    };
    (dp.0 + dv.0 * t).hypot(dp.1 + dv.1 * t)
}

/// Predictive caps, indexed like `agents`. Agent index is priority: lower
/// index wins.
pub fn speed_caps(agents: &[Agent], p: &KinematicParams) -> Vec<Option<SpeedCap>> {
    let mut caps = vec![None; agents.len()];
    for (j, aj) in agents.iter().enumerate() {
        if !(aj.desired > 0.0) {
            continue;
        }
        // worst predicted separation against higher-priority vehicles
        let worst = |speed: f64| -> (f64, usize) {
            let mut w = (f64::INFINITY, usize::MAX);
            for (i, ai) in agents[..j].iter().enumerate() {
                let dp = (aj.x - ai.x, aj.y - ai.y);
                let dv = (aj.dir.0 * speed - ai.vx, aj.dir.1 * speed - ai.vy);
                let sep = min_separation(dp, dv, p.horizon);
                if sep < w.0 {
                    w = (sep, i);
                }
            }
            w
        };
        let (sep, blocker) = worst(aj.desired);
        if sep >= p.d_safe {
            continue;
        }
        // fastest candidate that clears every higher-priority vehicle, else
        // the one that keeps the most distance
        let mut fallback = (0.0, f64::NEG_INFINITY);
        let mut speed = None;
        for m in (0..CANDIDATES).rev() {
            let c = aj.desired * m as f64 / CANDIDATES as f64;
            let (sep, _) = worst(c);
            if sep >= p.d_safe {
                speed = Some(c);
                break;
            }
            if sep > fallback.1 {
                fallback = (c, sep);
            }
        }
        let speed = speed.unwrap_or(fallback.0);
        caps[j] = Some(SpeedCap { speed, blocker });
    }
    caps
}

/// Whether moving from `from` to `to` respects the envelope against a
/// vehicle that was at `other` when the step began.
pub fn envelope_ok(from: (f64, f64), to: (f64, f64), other: (f64, f64), d_safe: f64) -> bool {
    let r0 = (from.0 - other.0).hypot(from.1 - other.1);
    if r0 >= d_safe {
        (to.0 - other.0).hypot(to.1 - other.1) >= d_safe
    } else {
        (to.0 - from.0) * (from.0 - other.0) + (to.1 - from.1) * (from.1 - other.1) >= 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(x: f64, y: f64, dir: (f64, f64), speed: f64) -> Agent {
        Agent {
            x,
            y,
            vx: dir.0 * speed,
            vy: dir.1 * speed,
            dir,
            desired: speed,
        }
    }

    #[test]
    fn separation_closed_form() {
        // passing at 2 m lateral offset
        assert!((min_separation((-10.0, 2.0), (1.0, 0.0), 20.0) - 2.0).abs() < 1e-12);
        // closest approach beyond the horizon
        assert!((min_separation((-10.0, 0.0), (1.0, 0.0), 5.0) - 5.0).abs() < 1e-12);
        assert_eq!(min_separation((3.0, 4.0), (0.0, 0.0), 5.0), 5.0);
    }

    #[test]
    fn far_apart_vehicles_are_not_capped() {
        let p = KinematicParams::default();
        let a = [
            agent(0.0, 0.0, (1.0, 0.0), 2.0),
            agent(100.0, 0.0, (-1.0, 0.0), 2.0),
        ];
        assert_eq!(speed_caps(&a, &p), vec![None, None]);
    }

    #[test]
    fn head_on_caps_the_higher_id() {
        let p = KinematicParams::default();
        // closing at 2 m/s from 8 m: within 5 s they would meet
        let a = [
            agent(0.0, 0.0, (1.0, 0.0), 1.0),
            agent(8.0, 0.0, (-1.0, 0.0), 1.0),
        ];
        let caps = speed_caps(&a, &p);
        assert!(caps[0].is_none());
        let cap = caps[1].unwrap();
        assert_eq!(cap.blocker, 0);
        assert!(cap.speed < 1.0);
    }

    #[test]
    fn following_keeps_distance() {
        let p = KinematicParams::default();
        // leader at 1 m/s, follower wants 3 m/s, 10 m behind
        let a = [
            agent(10.0, 0.0, (1.0, 0.0), 1.0),
            agent(0.0, 0.0, (1.0, 0.0), 3.0),
        ];
        let cap = speed_caps(&a, &p)[1].unwrap();
        // closing speed c − 1 over 5 s must leave 3 m: c ≤ 1 + 7/5
        assert!(cap.speed <= 2.4 + 1e-12 && cap.speed > 2.3);
    }

    #[test]
    fn envelope_rules() {
        let other = (0.0, 0.0);
        assert!(envelope_ok((5.0, 0.0), (4.0, 0.0), other, 3.0));
        assert!(!envelope_ok((5.0, 0.0), (2.9, 0.0), other, 3.0));
        // inside d_safe: may move away, not closer
        assert!(envelope_ok((2.0, 0.0), (2.5, 0.0), other, 3.0));
        assert!(!envelope_ok((2.0, 0.0), (1.9, 0.0), other, 3.0));
    }
}
