mod common;

use forkfleet::battery::{
    calibrate, integrate_trajectory, predicted_energy, segment_energy, vertical_work, BatteryError,
    BatteryParams, CalibrationCycle, DutyCycle, FreeParam, VehicleSpec, STANDARD_GRAVITY,
};
use forkfleet::rng::SplitMix64;
use forkfleet::trajectory::TrajectorySample;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Per-leg closed form for the test-stand cycle. Every acceleration step
/// draws, every braking step regenerates, so kinetic terms telescope.
fn duty_cycle_oracle(
    c: &DutyCycle,
    spec: &VehicleSpec,
    p: &BatteryParams,
    duration: f64,
) -> (f64, f64) {
    let m = spec.truck_mass + c.load_mass;
    let v = c.peak_speed();
    let d_acc = v * v / (2.0 * c.accel);
    let d_dec = v * v / (2.0 * c.decel);
    let d_cruise = c.drive_distance - d_acc - d_dec;
    let g = p.g;
    let leg_draw = (m * v * v / 2.0 + p.c_rr * m * g * (d_acc + d_cruise)) / p.eta_drive;
    let leg_regen = (m * v * v / 2.0 - p.c_rr * m * g * d_dec) * p.eta_regen;
    let lift = (c.load_mass + spec.fork_mass) * g * c.lift_height;
    let reps = c.repetitions as f64;
    let draw = reps * (2.0 * leg_draw + lift / p.eta_drive) + p.aux_power * duration;
    let regen = reps * (2.0 * leg_regen + lift * p.eta_regen);
    (draw, regen)
}

#[test]
fn duty_cycle_matches_closed_form() {
    let c = DutyCycle::default();
    let spec = VehicleSpec::default();
    let p = BatteryParams::default();
    let s = c.samples();
    let duration = s.last().unwrap().t - s[0].t;
    let r = integrate_trajectory(&s, &spec, &p, 1.0).unwrap();
    let (draw, regen) = duty_cycle_oracle(&c, &spec, &p, duration);
    assert!(rel(r.draw, draw) < 1e-9, "draw {} vs {}", r.draw, draw);
    assert!(rel(r.regen, regen) < 1e-9, "regen {} vs {}", r.regen, regen);
}

#[test]
fn pure_lift_cycle_is_vertical_work_plus_aux() {
    let c = DutyCycle {
        drive_distance: 0.0,
        ..Default::default()
    };
    let s = c.samples();
    let spec = VehicleSpec::default();
    let p = BatteryParams::default();
    let r = integrate_trajectory(&s, &spec, &p, 1.0).unwrap();
    let up = vertical_work(c.lift_height, c.load_mass, spec.fork_mass, &p);
    let down = vertical_work(-c.lift_height, c.load_mass, spec.fork_mass, &p);
    let duration = s.last().unwrap().t;
    let reps = c.repetitions as f64;
    assert!(rel(r.draw, reps * up.draw + p.aux_power * duration) < 1e-9);
    assert!(rel(r.regen, reps * down.regen) < 1e-9);
}

#[test]
fn zero_motion_draws_only_aux() {
    let s: Vec<TrajectorySample> = (0..50)
        .map(|i| TrajectorySample {
            t: i as f64 * 0.1,
            vehicle_id: 0,
            x: 3.0,
            y: 4.0,
            heading: 1.0,
            speed: 0.0,
            fork_height: 0.5,
            load_mass: 800.0,
            soc: 1.0,
        })
        .collect();
    let p = BatteryParams {
        aux_power: 0.0,
        ..Default::default()
    };
    let r = integrate_trajectory(&s, &VehicleSpec::default(), &p, 1.0).unwrap();
    assert_eq!((r.draw, r.regen), (0.0, 0.0));
}

#[test]
fn soc_is_monotone_without_regeneration() {
    let p = BatteryParams {
        eta_regen: 0.0,
        capacity: 1e6,
        ..Default::default()
    };
    let s = DutyCycle::default().samples();
    let r = integrate_trajectory(&s, &VehicleSpec::default(), &p, 1.0).unwrap();
    assert!(r.series.windows(2).all(|w| w[1].soc <= w[0].soc));
    // small capacity drains fully and clamps
    assert_eq!(r.series.last().unwrap().soc, 0.0);
}

#[test]
fn mass_doubling_doubles_energy() {
    let p = BatteryParams {
        aux_power: 0.0,
        ..Default::default()
    };
    let c = DutyCycle {
        repetitions: 3,
        ..Default::default()
    };
    let spec = VehicleSpec::default();
    let spec2 = VehicleSpec {
        truck_mass: 2.0 * spec.truck_mass,
        fork_mass: 2.0 * spec.fork_mass,
        ..spec
    };
    let c2 = DutyCycle {
        load_mass: 2.0 * c.load_mass,
        ..c
    };
    let r1 = integrate_trajectory(&c.samples(), &spec, &p, 1.0).unwrap();
    let r2 = integrate_trajectory(&c2.samples(), &spec2, &p, 1.0).unwrap();
    assert!(rel(r2.draw, 2.0 * r1.draw) < 1e-12);
    assert!(rel(r2.regen, 2.0 * r1.regen) < 1e-12);
}

fn arbitrary_track(seed: u64, n: usize) -> Vec<TrajectorySample> {
    let mut rng = SplitMix64::new(seed);
    let mut t = 0.0;
    let (mut x, mut y) = (0.0, 0.0);
    (0..n)
        .map(|_| {
            t += rng.uniform(0.05, 1.0);
            x += rng.uniform(-2.0, 2.0);
            y += rng.uniform(-2.0, 2.0);
            TrajectorySample {
                t,
                vehicle_id: 1,
                x,
                y,
                heading: rng.uniform(-3.0, 3.0),
                speed: rng.uniform(0.0, 4.0),
                fork_height: rng.uniform(0.0, 2.0),
                load_mass: if rng.below(2) == 0 { 0.0 } else { 900.0 },
                soc: 1.0,
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn segments_are_nonnegative(seed in any::<u64>()) {
        let s = arbitrary_track(seed, 30);
        let p = BatteryParams::default();
        for w in s.windows(2) {
            let e = segment_energy(&w[0], &w[1], &VehicleSpec::default(), &p).unwrap();
            prop_assert!(e.draw >= 0.0 && e.regen >= 0.0);
        }
    }

    #[test]
    fn integration_is_additive_over_partitions(seed in any::<u64>(), cut in 1usize..39) {
        let s = arbitrary_track(seed, 40);
        let spec = VehicleSpec::default();
        let p = BatteryParams::default();
        let whole = integrate_trajectory(&s, &spec, &p, 1.0).unwrap();
        let a = integrate_trajectory(&s[..=cut], &spec, &p, 1.0).unwrap();
        let b = integrate_trajectory(&s[cut..], &spec, &p, 1.0).unwrap();
        prop_assert!(rel(a.draw + b.draw, whole.draw) < 1e-9);
        prop_assert!((a.regen + b.regen - whole.regen).abs() <= 1e-9 * whole.regen.max(1.0));
    }

    #[test]
    fn splitting_a_constant_speed_segment_keeps_energy(
        v in 0.1f64..4.0, dt in 0.1f64..5.0, f in 0.01f64..0.99, heading in -3.0f64..3.0
    ) {
        let a = TrajectorySample {
            t: 0.0, vehicle_id: 0, x: 1.0, y: 2.0, heading, speed: v,
            fork_height: 0.0, load_mass: 500.0, soc: 1.0,
        };
        let at = |t: f64| TrajectorySample {
            t,
            x: a.x + v * t * heading.cos(),
            y: a.y + v * t * heading.sin(),
            ..a
        };
        let b = at(dt);
        let m = at(dt * f);
        let spec = VehicleSpec::default();
        let p = BatteryParams::default();
        let one = integrate_trajectory(&[a, b], &spec, &p, 1.0).unwrap();
        let two = integrate_trajectory(&[a, m, b], &spec, &p, 1.0).unwrap();
        prop_assert!(rel(two.draw, one.draw) < 1e-9);
    }

    /// A loop returning to the same position, height and speed always costs
    /// net energy when rolling resistance is present, even with a lossless
    /// drivetrain and near-perfect recuperation.
    #[test]
    fn closed_loop_loses_energy(
        c_rr in 1e-4f64..0.1, eta_drive in 0.5f64..=1.0, eta_regen in 0.0f64..0.999,
        distance in 1.0f64..50.0, lift in 0.0f64..3.0, load in 0.0f64..1500.0
    ) {
        let p = BatteryParams { c_rr, c_steer: 0.0, eta_drive, eta_regen, aux_power: 0.0, ..Default::default() };
        let c = DutyCycle {
            drive_distance: distance, lift_height: lift, load_mass: load, repetitions: 1,
            ..Default::default()
        };
        let r = integrate_trajectory(&c.samples(), &VehicleSpec::default(), &p, 1.0).unwrap();
        prop_assert!(r.draw - r.regen > 0.0);
    }
}

#[test]
fn lift_oracle() {
    let p = BatteryParams::default();
    let e = vertical_work(1.5, 1000.0, 100.0, &p);
    let oracle = 1100.0 * STANDARD_GRAVITY * 1.5 / 0.85;
    assert!(rel(e.draw, oracle) < 1e-12);
    assert!(rel(e.draw, 19_036.4) < 1e-5);
}

/// Cycles where rolling resistance dominates the energy budget, with varied
/// lengths so the fit is well conditioned.
fn calibration_tracks(n: usize) -> Vec<Vec<TrajectorySample>> {
    (0..n)
        .map(|i| {
            DutyCycle {
                drive_distance: 60.0 + 7.0 * i as f64,
                lift_height: 0.5,
                cruise_speed: 2.0,
                load_mass: 200.0 + 40.0 * i as f64,
                repetitions: 2,
                dt: 0.5,
                ..Default::default()
            }
            .samples()
        })
        .collect()
}

fn truth() -> BatteryParams {
    BatteryParams {
        c_rr: 0.025,
        aux_power: 20.0,
        ..Default::default()
    }
}

#[test]
fn calibration_recovers_rolling_resistance_exactly() {
    let spec = VehicleSpec::default();
    let cycles: Vec<CalibrationCycle> = calibration_tracks(3)
        .into_iter()
        .map(|samples| {
            let measured = predicted_energy(&samples, &spec, &truth()).unwrap();
            CalibrationCycle { samples, measured }
        })
        .collect();
    let p0 = BatteryParams {
        c_rr: 0.01,
        ..truth()
    };
    let fit = calibrate(&cycles, &spec, &p0, &[FreeParam::CRr]).unwrap();
    assert!(
        rel(fit.params.c_rr, 0.025) < 1e-6,
        "c_rr {}",
        fit.params.c_rr
    );
    assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(fit.residuals.len(), 3);
}

#[test]
fn calibration_tolerates_measurement_noise() {
    let spec = VehicleSpec::default();
    let p_star = truth();
    let tracks = calibration_tracks(20);
    // rolling resistance must carry most of the signal for the bound to apply
    let no_roll = BatteryParams {
        c_rr: 0.0,
        ..p_star
    };
    let total: f64 = tracks
        .iter()
        .map(|s| predicted_energy(s, &spec, &p_star).unwrap())
        .sum();
    let rest: f64 = tracks
        .iter()
        .map(|s| predicted_energy(s, &spec, &no_roll).unwrap())
        .sum();
    assert!((total - rest) / total > 0.7);

    let mut rng = SplitMix64::new(2198);
    let cycles: Vec<CalibrationCycle> = tracks
        .into_iter()
        .map(|samples| {
            let clean = predicted_energy(&samples, &spec, &p_star).unwrap();
            let measured = clean * (1.0 + 0.05 * common::gaussian(&mut rng));
            CalibrationCycle { samples, measured }
        })
        .collect();
    let p0 = BatteryParams {
        c_rr: 0.01,
        ..p_star
    };
    let fit = calibrate(&cycles, &spec, &p0, &[FreeParam::CRr]).unwrap();
    assert!(
        rel(fit.params.c_rr, 0.025) < 0.05,
        "c_rr {}",
        fit.params.c_rr
    );
}

#[test]
fn calibration_with_no_free_parameters_returns_start() {
    let spec = VehicleSpec::default();
    let samples = calibration_tracks(1).remove(0);
    let measured = predicted_energy(&samples, &spec, &truth()).unwrap() + 10.0;
    let cycles = [CalibrationCycle { samples, measured }];
    let fit = calibrate(&cycles, &spec, &truth(), &[]).unwrap();
    assert_eq!(fit.params, truth());
    assert!((fit.residuals[0] + 10.0).abs() < 1e-6);
}

#[test]
fn calibration_reports_no_improvement() {
    // c_steer has no effect on straight cycles, so the fit cannot move
    let spec = VehicleSpec::default();
    let samples = calibration_tracks(1).remove(0);
    let measured = predicted_energy(&samples, &spec, &truth()).unwrap() + 1000.0;
    let cycles = [CalibrationCycle { samples, measured }];
    match calibrate(&cycles, &spec, &truth(), &[FreeParam::CSteer]) {
        Err(BatteryError::NoImprovement(best)) => assert!(best.objective > 0.0),
        other => panic!("expected NoImprovement, got {other:?}"),
    }
}
