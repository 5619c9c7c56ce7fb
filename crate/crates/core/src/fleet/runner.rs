//! Runs a whole scenario: repeated task assignment and stepping.

use super::{
    Event, FleetError, KinematicParams, Policy, StepEvents, TaskTemplate, World, WorldConfig,
};
use crate::battery::{soc_band, BatteryParams, SocBand, VehicleSpec};
use crate::roadnet::RoadGraph;
use crate::trajectory::TrajectorySample;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyConfig {
    Random,
    /// Destinations taken in list order, skipping spots that are not free;
    /// falls back to a random spot when none in the list is free.
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub vehicle_count: usize,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    pub policy: PolicyConfig,
    pub task: TaskTemplate,
    /// Time an idle vehicle waits before it receives its next task, s.
    pub dwell: f64,
    pub kinematics: KinematicParams,
    pub battery: BatteryParams,
    pub spec: VehicleSpec,
    pub initial_soc: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            vehicle_count: 4,
            seed: 0,
            dt: w.dt,
            duration: 300.0,
            policy: PolicyConfig::Random,
            task: w.task,
            dwell: 2.0,
            kinematics: w.kinematics,
            battery: w.battery,
            spec: w.spec,
            initial_soc: w.initial_soc,
        }
    }
}

impl ScenarioConfig {
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            dt: self.dt,
            seed: self.seed,
            kinematics: self.kinematics,
            spec: self.spec,
            battery: self.battery,
            initial_soc: self.initial_soc,
            task: self.task,
        }
    }

    /// Number of steps covering `duration`.
    pub fn steps(&self) -> u64 {
        (self.duration / self.dt).round().max(0.0) as u64
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        self.world_config().validate()?;
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(FleetError::InvalidConfig(format!(
                "duration = {}",
                self.duration
            )));
        }
        if !(self.dwell >= 0.0 && self.dwell.is_finite()) {
            return Err(FleetError::InvalidConfig(format!("dwell = {}", self.dwell)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSummary {
    pub vehicle_id: usize,
    pub distance: f64,
    pub tasks_completed: usize,
    pub energy_drawn: f64,
    pub energy_regenerated: f64,
    pub final_soc: f64,
    pub band: SocBand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    /// Every vehicle at every step, including `t = 0`, ordered by time then id.
    pub samples: Vec<TrajectorySample>,
    pub events: Vec<StepEvents>,
    pub summary: Vec<VehicleSummary>,
}

struct Dispatcher {
    policy: PolicyConfig,
    next: usize,
}

impl Dispatcher {
    fn pick(&mut self, world: &World) -> Policy {
        let PolicyConfig::Fixed(list) = &self.policy else {
            return Policy::RandomSpot;
        };
        for k in 0..list.len() {
            let idx = (self.next + k) % list.len();
            if world.spot_state(list[idx]) == Some(super::SpotState::Free) {
                self.next = idx + 1;
                return Policy::Fixed(list[idx]);
            }
        }
        Policy::RandomSpot
    }
}

/// Simulates `cfg.duration` seconds. Vehicles that have been idle for at
/// least `dwell` receive a new task before each step.
pub fn simulate(graph: &RoadGraph, cfg: &ScenarioConfig) -> Result<SimulationOutput, FleetError> {
    cfg.validate()?;
    let mut world = World::new(graph.clone(), cfg.world_config(), cfg.vehicle_count)?;
    let steps = cfg.steps();
    let mut samples = Vec::with_capacity((steps as usize + 1) * cfg.vehicle_count);
    let mut events = Vec::new();
    let mut dispatcher = Dispatcher {
        policy: cfg.policy.clone(),
        next: 0,
    };
    if steps > 0 {
        samples.extend(world.record());
    }
    for _ in 0..steps {
        let now = world.clock();
        let mut assigned = Vec::new();
        for v in 0..world.vehicle_count() {
            if !world.is_idle(v) || now - world.idle_since(v).expect("vehicle exists") < cfg.dwell {
                continue;
            }
            let policy = dispatcher.pick(&world);
            match world.assign_task(v, policy) {
                Ok(task) => assigned.push(Event::TaskAssigned { vehicle: v, task }),
                Err(FleetError::NoFreeSpot | FleetError::Unreachable { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if !assigned.is_empty() {
            events.push(StepEvents {
                t: now,
                events: assigned,
            });
        }
        let ev = world.step();
        if !ev.events.is_empty() {
            events.push(ev);
        }
        samples.extend(world.record());
    }
    let summary = (0..world.vehicle_count())
        .map(|v| {
            let soc = world.soc_state(v).expect("vehicle exists");
            Ok(VehicleSummary {
                vehicle_id: v,
                distance: world.distance_driven(v).expect("vehicle exists"),
                tasks_completed: world.tasks_completed(v).expect("vehicle exists"),
                energy_drawn: soc.cumulative_draw,
                energy_regenerated: soc.cumulative_regen,
                final_soc: soc.soc,
                band: soc_band(soc.soc)?,
            })
        })
        .collect::<Result<Vec<_>, FleetError>>()?;
    Ok(SimulationOutput {
        samples,
        events,
        summary,
    })
}
