//! Least-squares fit of energy model coefficients to measured cycle energies.
//!
//! Coordinate descent: each sweep runs a golden-section line search over
//! every free parameter in turn, inside that parameter's physical range, and
//! keeps the result only if the objective improves. Stops once a sweep
//! improves the objective by less than 1e-9 relative, or after 200 sweeps.

use std::fmt;

use super::{integrate_trajectory, BatteryError, BatteryParams, VehicleSpec};
use crate::trajectory::{group_by_vehicle, TrajectorySample};

const MAX_SWEEPS: usize = 200;
const REL_TOL: f64 = 1e-9;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FreeParam {
    CRr,
    CSteer,
    EtaDrive,
    EtaRegen,
    AuxPower,
}

impl FreeParam {
    pub const ALL: [FreeParam; 5] = [
        FreeParam::CRr,
        FreeParam::CSteer,
        FreeParam::EtaDrive,
        FreeParam::EtaRegen,
        FreeParam::AuxPower,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FreeParam::CRr => "c_rr",
            FreeParam::CSteer => "c_steer",
            FreeParam::EtaDrive => "eta_drive",
            FreeParam::EtaRegen => "eta_regen",
            FreeParam::AuxPower => "aux_power",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Search interval for the line search.
    pub fn range(&self) -> (f64, f64) {
        match self {
            FreeParam::CRr => (0.0, 0.5),
            FreeParam::CSteer => (0.0, 5.0),
            FreeParam::EtaDrive => (0.05, 1.0),
            FreeParam::EtaRegen => (0.0, 0.999),
            FreeParam::AuxPower => (0.0, 20_000.0),
        }
    }

    pub fn get(&self, p: &BatteryParams) -> f64 {
        match self {
            FreeParam::CRr => p.c_rr,
            FreeParam::CSteer => p.c_steer,
            FreeParam::EtaDrive => p.eta_drive,
            FreeParam::EtaRegen => p.eta_regen,
            FreeParam::AuxPower => p.aux_power,
        }
    }

    pub fn set(&self, p: &mut BatteryParams, v: f64) {
        match self {
            FreeParam::CRr => p.c_rr = v,
            FreeParam::CSteer => p.c_steer = v,
            FreeParam::EtaDrive => p.eta_drive = v,
            FreeParam::EtaRegen => p.eta_regen = v,
            FreeParam::AuxPower => p.aux_power = v,
        }
    }
}

impl fmt::Display for FreeParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One measured run: the recorded motion and the net energy (J) the battery
/// delivered over it.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCycle {
    pub samples: Vec<TrajectorySample>,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub params: BatteryParams,
    /// Predicted minus measured, per cycle.
    pub residuals: Vec<f64>,
    pub objective: f64,
    /// Objective before the first sweep and after each sweep.
    pub history: Vec<f64>,
}

impl CalibrationResult {
    pub fn sweeps(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// Net energy (draw minus regeneration) the model predicts for a cycle,
/// summed over every vehicle in it.
pub fn predicted_energy(
    samples: &[TrajectorySample],
    spec: &VehicleSpec,
    p: &BatteryParams,
) -> Result<f64, BatteryError> {
    let mut total = 0.0;
    for track in group_by_vehicle(samples).values() {
        let r = integrate_trajectory(track, spec, p, 1.0)?;
        total += r.draw - r.regen;
    }
    Ok(total)
}

fn residuals(
    cycles: &[CalibrationCycle],
    spec: &VehicleSpec,
    p: &BatteryParams,
) -> Result<Vec<f64>, BatteryError> {
    cycles
        .iter()
        .map(|c| Ok(predicted_energy(&c.samples, spec, p)? - c.measured))
        .collect()
}

fn objective(res: &[f64]) -> f64 {
    res.iter().map(|r| r * r).sum()
}

pub fn calibrate(
    cycles: &[CalibrationCycle],
    spec: &VehicleSpec,
    p0: &BatteryParams,
    free: &[FreeParam],
) -> Result<CalibrationResult, BatteryError> {
    let mut free: Vec<FreeParam> = free.to_vec();
    free.sort();
    free.dedup();
    if cycles.len() < free.len() {
        return Err(BatteryError::Underdetermined {
            cycles: cycles.len(),
            free: free.len(),
        });
    }
    p0.validate()?;

    let mut params = *p0;
    let eval = |p: &BatteryParams| -> Result<f64, BatteryError> {
        Ok(objective(&residuals(cycles, spec, p)?))
    };
    let mut best = eval(&params)?;
    let mut history = vec![best];

    if !free.is_empty() {
        for _ in 0..MAX_SWEEPS {
            let before = best;
            for &fp in &free {
                let (lo, hi) = fp.range();
                let mut probe = params;
                let (x, fx) = golden_section(lo, hi, |v| {
                    fp.set(&mut probe, v);
                    eval(&probe)
                })?;
                if fx < best {
                    fp.set(&mut params, x);
                    best = fx;
                }
            }
            assert!(best <= before, "calibration objective increased");
            history.push(best);
            if before - best <= REL_TOL * before {
                break;
            }
        }
    }

    let result = CalibrationResult {
        params,
        residuals: residuals(cycles, spec, &params)?,
        objective: best,
        history,
    };
    let improved = result.history.last() < result.history.first();
    if !free.is_empty() && !improved && result.objective > 0.0 {
        return Err(BatteryError::NoImprovement(Box::new(result)));
    }
    Ok(result)
}

/// Minimizes `f` on `[lo, hi]`; returns the best point evaluated.
fn golden_section(
    lo: f64,
    hi: f64,
    mut f: impl FnMut(f64) -> Result<f64, BatteryError>,
) -> Result<(f64, f64), BatteryError> {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    let tol = 1e-13 * (hi - lo);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    for x in [lo, hi] {
        let fx = f(x)?;
        if fx < best.1 {
            best = (x, fx);
        }
    }
    Ok(best)
}
