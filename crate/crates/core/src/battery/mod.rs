//! Force-balance energy model.
//!
//! Work drawn from the battery between two trajectory samples is split into a
//! horizontal part (kinetic energy change, rolling resistance, steering
//! resistance) and a vertical part (raising or lowering forks and load), plus
//! a constant auxiliary load. Drawn work is divided by the drivetrain
//! efficiency; released kinetic or potential energy is recovered at the
//! regeneration efficiency. Friction never regenerates. Aerodynamic drag is
//! not modelled.
//!
//! Over a segment the carried load is the value at the segment's end sample:
//! load is attached or detached at the start of a simulation step.

mod calibrate;
mod cycle;

use thiserror::Error;

use crate::roadnet::normalize_angle;
use crate::trajectory::{first_unsorted, TrajectorySample};

pub use calibrate::{calibrate, predicted_energy, CalibrationCycle, CalibrationResult, FreeParam};
pub use cycle::DutyCycle;

pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatteryError {
    #[error("non-physical segment: distance {ds} m over {dt} s")]
    NonphysicalSegment { ds: f64, dt: f64 },
    #[error("samples of vehicle {vehicle} are not time-sorted at index {index}")]
    UnsortedSamples { vehicle: usize, index: usize },
    #[error("state of charge {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid battery parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("{cycles} cycles cannot determine {free} free parameters")]
    Underdetermined { cycles: usize, free: usize },
    #[error("calibration made no progress from objective {}", .0.objective)]
    NoImprovement(Box<CalibrationResult>),
}

/// Energy model constants. The defaults are placeholders, not measured truck
/// data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryParams {
    /// Usable capacity, J.
    pub capacity: f64,
    /// Rolling resistance coefficient.
    pub c_rr: f64,
    /// Steering resistance, N·s/(kg·rad): force per unit mass per unit
    /// heading rate.
    pub c_steer: f64,
    pub eta_drive: f64,
    pub eta_regen: f64,
    pub g: f64,
    /// Constant electronics load, W.
    pub aux_power: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            capacity: 28.8 * 3.6e6,
            c_rr: 0.02,
            c_steer: 0.05,
            eta_drive: 0.85,
            eta_regen: 0.2,
            g: STANDARD_GRAVITY,
            aux_power: 300.0,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), BatteryError> {
        let check = |name, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(BatteryError::InvalidParam { name, value })
            }
        };
        check("capacity", self.capacity, self.capacity > 0.0)?;
        check("c_rr", self.c_rr, self.c_rr >= 0.0)?;
        check("c_steer", self.c_steer, self.c_steer >= 0.0)?;
        check(
            "eta_drive",
            self.eta_drive,
            self.eta_drive > 0.0 && self.eta_drive <= 1.0,
        )?;
        check(
            "eta_regen",
            self.eta_regen,
            (0.0..1.0).contains(&self.eta_regen),
        )?;
        check("g", self.g, self.g > 0.0)?;
        check("aux_power", self.aux_power, self.aux_power >= 0.0)
    }
}

/// Masses that do not appear in trajectory samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSpec {
    /// Empty truck mass including forks, kg.
    pub truck_mass: f64,
    /// Mass of the moving fork carriage, kg.
    pub fork_mass: f64,
    /// Rated load capacity, kg.
    pub rated_capacity: f64,
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            truck_mass: 3000.0,
            fork_mass: 100.0,
            rated_capacity: 1500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Energy {
    pub draw: f64,
    pub regen: f64,
}

impl Energy {
    pub fn net(&self) -> f64 {
        self.draw - self.regen
    }
}

impl std::ops::Add for Energy {
    type Output = Energy;
    fn add(self, o: Energy) -> Energy {
        Energy {
            draw: self.draw + o.draw,
            regen: self.regen + o.regen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSegment {
    pub v0: f64,
    pub v1: f64,
    /// Distance travelled, m.
    pub ds: f64,
    /// Heading change, rad.
    pub dheading: f64,
    pub dt: f64,
}

pub fn horizontal_work(
    seg: &MotionSegment,
    mass: f64,
    p: &BatteryParams,
) -> Result<Energy, BatteryError> {
    if !(seg.ds >= 0.0) || !(seg.dt > 0.0) {
        return Err(BatteryError::NonphysicalSegment {
            ds: seg.ds,
            dt: seg.dt,
        });
    }
    let kinetic = mass * (seg.v1 * seg.v1 - seg.v0 * seg.v0) / 2.0;
    let rolling = p.c_rr * mass * p.g * seg.ds;
    let steering = p.c_steer * mass * (seg.dheading / seg.dt).abs() * seg.ds;
    let tractive = kinetic + rolling + steering;
    Ok(if tractive >= 0.0 {
        Energy {
            draw: tractive / p.eta_drive,
            regen: 0.0,
        }
    } else {
        Energy {
            draw: 0.0,
            regen: -tractive * p.eta_regen,
        }
    })
}

pub fn vertical_work(dh: f64, load_mass: f64, fork_mass: f64, p: &BatteryParams) -> Energy {
    let potential = (load_mass + fork_mass) * p.g * dh;
    if potential > 0.0 {
        Energy {
            draw: potential / p.eta_drive,
            regen: 0.0,
        }
    } else {
        Energy {
            draw: 0.0,
            regen: -potential * p.eta_regen,
        }
    }
}

/// Energy for the motion between two consecutive samples of one vehicle.
pub fn segment_energy(
    a: &TrajectorySample,
    b: &TrajectorySample,
    spec: &VehicleSpec,
    p: &BatteryParams,
) -> Result<Energy, BatteryError> {
    let dt = b.t - a.t;
    let seg = MotionSegment {
        v0: a.speed,
        v1: b.speed,
        ds: (b.x - a.x).hypot(b.y - a.y),
        dheading: normalize_angle(b.heading - a.heading),
        dt,
    };
    let horizontal = horizontal_work(&seg, spec.truck_mass + b.load_mass, p)?;
    let vertical = vertical_work(
        b.fork_height - a.fork_height,
        b.load_mass,
        spec.fork_mass,
        p,
    );
    Ok(horizontal
        + vertical
        + Energy {
            draw: p.aux_power * dt,
            regen: 0.0,
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocState {
    pub soc: f64,
    pub initial_soc: f64,
    pub cumulative_draw: f64,
    pub cumulative_regen: f64,
}

impl SocState {
    pub fn new(initial_soc: f64) -> Self {
        Self {
            soc: initial_soc,
            initial_soc,
            cumulative_draw: 0.0,
            cumulative_regen: 0.0,
        }
    }

    pub fn apply(&mut self, e: Energy, capacity: f64) {
        self.cumulative_draw += e.draw;
        self.cumulative_regen += e.regen;
        self.soc = (self.initial_soc - (self.cumulative_draw - self.cumulative_regen) / capacity)
            .clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub draw: f64,
    pub regen: f64,
    /// One state per input sample; the first is the initial state.
    pub series: Vec<SocState>,
}

/// Integrates one vehicle's time-sorted samples.
pub fn integrate_trajectory(
    track: &[TrajectorySample],
    spec: &VehicleSpec,
    p: &BatteryParams,
    initial_soc: f64,
) -> Result<Integration, BatteryError> {
    if let Some(index) = first_unsorted(track) {
        return Err(BatteryError::UnsortedSamples {
            vehicle: track[index].vehicle_id,
            index,
        });
    }
    let mut state = SocState::new(initial_soc);
    let mut series = Vec::with_capacity(track.len());
    if !track.is_empty() {
        series.push(state);
    }
    for w in track.windows(2) {
        state.apply(segment_energy(&w[0], &w[1], spec, p)?, p.capacity);
        series.push(state);
    }
    Ok(Integration {
        draw: state.cumulative_draw,
        regen: state.cumulative_regen,
        series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocBand {
    Sufficient,
    ChargeSuggested,
    Critical,
}

impl SocBand {
    pub fn as_str(&self) -> &'static str {
        match self {
            SocBand::Sufficient => "sufficient",
            SocBand::ChargeSuggested => "charge_suggested",
            SocBand::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocThresholds {
    /// At or above: sufficient.
    pub sufficient: f64,
    /// Below: critical.
    pub critical: f64,
}

impl Default for SocThresholds {
    fn default() -> Self {
        Self {
            sufficient: 0.5,
            critical: 0.2,
        }
    }
}

pub fn soc_band(soc: f64) -> Result<SocBand, BatteryError> {
    soc_band_with(soc, &SocThresholds::default())
}

pub fn soc_band_with(soc: f64, th: &SocThresholds) -> Result<SocBand, BatteryError> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(BatteryError::OutOfRange(soc));
    }
    Ok(if soc >= th.sufficient {
        SocBand::Sufficient
    } else if soc >= th.critical {
        SocBand::ChargeSuggested
    } else {
        SocBand::Critical
    })
}
