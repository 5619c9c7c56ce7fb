use std::f64::consts::PI;

use crate::trajectory::TrajectorySample;

/// Synthetic test-stand duty cycle: drive out, lift, drive back, lower,
/// repeated. Driving legs follow a trapezoidal speed profile on a straight
/// line and every phase boundary falls on a sample, so each sample pair is
/// purely accelerating, cruising, braking, lifting or lowering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycle {
    pub drive_distance: f64,
    pub lift_height: f64,
    pub cruise_speed: f64,
    pub accel: f64,
    pub decel: f64,
    pub lift_speed: f64,
    pub load_mass: f64,
    pub repetitions: usize,
    pub dt: f64,
    pub vehicle_id: usize,
}

impl Default for DutyCycle {
    fn default() -> Self {
        Self {
            drive_distance: 30.0,
            lift_height: 2.0,
            cruise_speed: 2.0,
            accel: 1.0,
            decel: 1.0,
            lift_speed: 0.3,
            load_mass: 1000.0,
            repetitions: 40,
            dt: 0.1,
            vehicle_id: 0,
        }
    }
}

struct Builder {
    out: Vec<TrajectorySample>,
    t: f64,
}

impl Builder {
    fn last(&self) -> TrajectorySample {
        *self.out.last().unwrap()
    }

    fn push(&mut self, s: TrajectorySample) {
        self.out.push(s);
    }
}

impl DutyCycle {
    /// Top speed actually reached on a leg (lower than `cruise_speed` when
    /// the leg is too short to reach it).
    pub fn peak_speed(&self) -> f64 {
        let reachable = (2.0 * self.drive_distance * self.accel * self.decel
            / (self.accel + self.decel))
            .sqrt();
        self.cruise_speed.min(reachable)
    }

    pub fn samples(&self) -> Vec<TrajectorySample> {
        let mut b = Builder {
            out: vec![TrajectorySample {
                t: 0.0,
                vehicle_id: self.vehicle_id,
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                speed: 0.0,
                fork_height: 0.0,
                load_mass: self.load_mass,
                soc: 1.0,
            }],
            t: 0.0,
        };
        for _ in 0..self.repetitions {
            self.drive(&mut b, 1.0);
            self.fork(&mut b, self.lift_height, -PI);
            self.drive(&mut b, -1.0);
            self.fork(&mut b, 0.0, 0.0);
        }
        b.out
    }

    fn steps(&self, duration: f64) -> usize {
        ((duration / self.dt).round() as usize).max(1)
    }

    fn drive(&self, b: &mut Builder, dir: f64) {
        let v = self.peak_speed();
        if !(v > 0.0) {
            return;
        }
        let x0 = b.last().x;
        let heading = b.last().heading;
        let t_acc = v / self.accel;
        let t_dec = v / self.decel;
        let d_acc = v * v / (2.0 * self.accel);
        let d_dec = v * v / (2.0 * self.decel);
        let d_cruise = (self.drive_distance - d_acc - d_dec).max(0.0);
        let t_cruise = d_cruise / v;

        let phase = |b: &mut Builder, duration: f64, state: &dyn Fn(f64) -> (f64, f64)| {
            // sub-nanosecond phases only arise from rounding
            if !(duration > 1e-9) {
                return;
            }
            let n = self.steps(duration);
            for i in 1..=n {
                let tau = duration * i as f64 / n as f64;
                let (s, speed) = state(tau);
                let prev = b.last();
                b.push(TrajectorySample {
                    t: b.t + tau,
                    x: x0 + dir * s,
                    heading,
                    speed,
                    ..prev
                });
            }
            b.t += duration;
        };
        phase(b, t_acc, &|tau| {
            (0.5 * self.accel * tau * tau, self.accel * tau)
        });
        phase(b, t_cruise, &|tau| (d_acc + v * tau, v));
        phase(b, t_dec, &|tau| {
            if tau == t_dec {
                (d_acc + d_cruise + d_dec, 0.0)
            } else {
                (
                    d_acc + d_cruise + v * tau - 0.5 * self.decel * tau * tau,
                    v - self.decel * tau,
                )
            }
        });
    }

    /// Moves the forks to `target` at no more than `lift_speed`. The truck
    /// turns in place to `next_heading` during this phase.
    fn fork(&self, b: &mut Builder, target: f64, next_heading: f64) {
        let start = b.last().fork_height;
        let dh = target - start;
        let n = ((dh.abs() / (self.lift_speed * self.dt)).ceil() as usize).max(1);
        for i in 1..=n {
            let prev = b.last();
            b.push(TrajectorySample {
                t: b.t + self.dt * i as f64,
                fork_height: if i == n {
                    target
                } else {
                    start + dh * i as f64 / n as f64
                },
                heading: next_heading,
                speed: 0.0,
                ..prev
            });
        }
        b.t += self.dt * n as f64;
    }
}
