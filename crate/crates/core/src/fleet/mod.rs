//! Fixed-timestep fleet simulation.
//!
//! A [`World`] owns the road graph, the vehicles, spot bookkeeping and the
//! scenario RNG. Each [`World::step`] advances the clock by exactly `dt`:
//! fork stages move, drivers pick a speed from their route constraints,
//! conflict caps and the safety envelope, then every vehicle is sampled and
//! its battery state updated from the sample pair. Vehicles are processed in
//! id order and every quantity is a pure function of the scenario and seed.
//!
//! Vehicles follow the straight chords between waypoints. A vehicle parked
//! at a spot starts its route at the spot and leaves along the spot's anchor
//! edge.

mod conflict;
mod replay;
mod route;
mod runner;

use std::collections::VecDeque;

use log::debug;
use thiserror::Error;

use crate::battery::{segment_energy, BatteryError, BatteryParams, SocState, VehicleSpec};
use crate::rng::SplitMix64;
use crate::roadnet::{astar, NodeId, Path, RoadGraph, RoadnetError};
use crate::trajectory::TrajectorySample;

pub use conflict::{envelope_ok, min_separation, speed_caps, Agent, SpeedCap};
pub use replay::{replay, ReplayTimeline};
pub use route::{stopping_speed, Route, CREEP_SPEED};
pub use runner::{simulate, PolicyConfig, ScenarioConfig, SimulationOutput, VehicleSummary};

/// Remaining distance below which a driver snaps onto its destination.
pub const ARRIVAL_TOLERANCE: f64 = 1e-3;
/// Envelope search: coarse fractions scanned, then bisection steps.
const ENVELOPE_SCAN: usize = 16;
const ENVELOPE_BISECT: usize = 40;
/// Allowed excursion beyond the graph's bounding box, m.
const BOUNDS_MARGIN: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FleetError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{vehicles} vehicles need as many free parking spots, map has {spots}")]
    NotEnoughSpots { vehicles: usize, spots: usize },
    #[error("no free parking spot")]
    NoFreeSpot,
    #[error("vehicle {0} already has a task")]
    VehicleBusy(usize),
    #[error("parking spot {0} is occupied or reserved")]
    SpotOccupied(usize),
    #[error("unknown parking spot {0}")]
    UnknownSpot(usize),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(usize),
    #[error("node {to} is unreachable from node {from}")]
    Unreachable { from: NodeId, to: NodeId },
    #[error("samples of vehicle {vehicle} are not time-sorted at index {index}")]
    UnsortedSamples { vehicle: usize, index: usize },
    #[error(transparent)]
    Roadnet(#[from] RoadnetError),
    #[error(transparent)]
    Battery(#[from] BatteryError),
}

/// Motion limits and conflict-handling constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicParams {
    pub v_max: f64,
    pub a_max: f64,
    pub b_max: f64,
    /// Lateral acceleration limit used to slow down at corners.
    pub a_lat_max: f64,
    pub lift_speed: f64,
    pub d_safe: f64,
    /// Prediction horizon, s.
    pub horizon: f64,
    /// Time a vehicle may stand blocked before the deadlock breaker acts.
    pub t_deadlock: f64,
    /// How far a yielding vehicle backs up along its route.
    pub yield_distance: f64,
    /// Reversing speed limit while yielding.
    pub yield_speed: f64,
}

impl Default for KinematicParams {
    fn default() -> Self {
        Self {
            v_max: 4.0,
            a_max: 1.0,
            b_max: 1.5,
            a_lat_max: 1.0,
            lift_speed: 0.3,
            d_safe: 3.0,
            horizon: 5.0,
            t_deadlock: 10.0,
            yield_distance: 6.0,
            yield_speed: 1.0,
        }
    }
}

impl KinematicParams {
    pub fn validate(&self) -> Result<(), FleetError> {
        let fields = [
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("b_max", self.b_max),
            ("a_lat_max", self.a_lat_max),
            ("lift_speed", self.lift_speed),
            ("horizon", self.horizon),
            ("t_deadlock", self.t_deadlock),
            ("yield_speed", self.yield_speed),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FleetError::InvalidConfig(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        for (name, v) in [
            ("d_safe", self.d_safe),
            ("yield_distance", self.yield_distance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FleetError::InvalidConfig(format!(
                    "{name} = {v} must be non-negative"
                )));
            }
        }
        if self.yield_speed > self.v_max {
            return Err(FleetError::InvalidConfig(
                "yield_speed exceeds v_max".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Raise forks, pick the load, drive, set it down at the destination.
    PickAndPlace,
    /// Drive only.
    Relocate,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::PickAndPlace => "pick_and_place",
            TaskKind::Relocate => "relocate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pick_and_place" => Some(TaskKind::PickAndPlace),
            "relocate" => Some(TaskKind::Relocate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Task {
    pub kind: TaskKind,
    pub origin_spot: usize,
    pub dest_spot: usize,
    pub pickup_mass: f64,
    pub lift_height: f64,
}

/// Parameters given to every new task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTemplate {
    pub kind: TaskKind,
    pub pickup_mass: f64,
    pub lift_height: f64,
}

impl Default for TaskTemplate {
    fn default() -> Self {
        Self {
            kind: TaskKind::PickAndPlace,
            pickup_mass: 1000.0,
            lift_height: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Uniformly random among free spots, drawn from the world RNG.
    RandomSpot,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpotState {
    Free,
    Occupied(usize),
    Reserved(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub truck_mass: f64,
    pub load_mass: f64,
    pub fork_height: f64,
    pub soc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConfig {
    pub dt: f64,
    pub seed: u64,
    pub kinematics: KinematicParams,
    pub spec: VehicleSpec,
    pub battery: BatteryParams,
    pub initial_soc: f64,
    pub task: TaskTemplate,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            seed: 0,
            kinematics: KinematicParams::default(),
            spec: VehicleSpec::default(),
            battery: BatteryParams::default(),
            initial_soc: 1.0,
            task: TaskTemplate::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), FleetError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FleetError::InvalidConfig(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        self.kinematics.validate()?;
        self.battery.validate()?;
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return Err(FleetError::InvalidConfig(format!(
                "initial_soc = {} outside [0, 1]",
                self.initial_soc
            )));
        }
        let t = &self.task;
        if !(t.pickup_mass >= 0.0 && t.pickup_mass <= self.spec.rated_capacity) {
            return Err(FleetError::InvalidConfig(format!(
                "pickup_mass = {} outside [0, rated capacity {}]",
                t.pickup_mass, self.spec.rated_capacity
            )));
        }
        if !(t.lift_height >= 0.0 && t.lift_height.is_finite()) {
            return Err(FleetError::InvalidConfig(format!(
                "lift_height = {}",
                t.lift_height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    TaskAssigned {
        vehicle: usize,
        task: Task,
    },
    Departed {
        vehicle: usize,
        spot: usize,
    },
    Arrived {
        vehicle: usize,
        spot: usize,
    },
    TaskCompleted {
        vehicle: usize,
        task: Task,
    },
    YieldStarted {
        vehicle: usize,
        giving_way_to: usize,
    },
    YieldEnded {
        vehicle: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepEvents {
    /// Clock after the step.
    pub t: f64,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Fork(f64),
    Attach(f64),
    Detach,
    Drive,
}

#[derive(Debug, Clone)]
struct ActiveTask {
    task: Task,
    stages: VecDeque<Stage>,
    route: Route,
    /// Arc position along the route.
    s: f64,
    departed: bool,
}

#[derive(Debug, Clone, Copy)]
struct Yield {
    s_min: f64,
    elapsed: f64,
}

#[derive(Debug, Clone)]
struct Vehicle {
    state: VehicleState,
    /// Spot the vehicle stands at, if parked.
    spot: Option<usize>,
    active: Option<ActiveTask>,
    /// Signed speed along the route; negative while backing up.
    v: f64,
    vel: (f64, f64),
    idle_since: f64,
    blocked: f64,
    yielding: Option<Yield>,
    soc: SocState,
    last: TrajectorySample,
    distance: f64,
    tasks_completed: usize,
}

/// Per-step intent of one vehicle.
#[derive(Debug, Clone, Copy)]
enum Motion {
    Still,
    Forward { desired: f64 },
    Reverse { desired: f64 },
}

#[derive(Debug, Clone)]
pub struct World {
    graph: RoadGraph,
    cfg: WorldConfig,
    vehicles: Vec<Vehicle>,
    spots: Vec<SpotState>,
    rng: SplitMix64,
    step_count: u64,
    bounds: (f64, f64, f64, f64),
}

impl World {
    /// Places `vehicle_count` vehicles: a vehicle named as a spot's initial
    /// occupant starts there, the rest at uniformly drawn free spots.
    pub fn new(
        graph: RoadGraph,
        cfg: WorldConfig,
        vehicle_count: usize,
    ) -> Result<Self, FleetError> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(cfg.seed);
        let spots = graph.parking_spots();
        let mut taken = vec![false; spots.len()];
        let mut placement = vec![None; vehicle_count];
        for (k, s) in spots.iter().enumerate() {
            if let Some(v) = s.occupied_by {
                if v < vehicle_count && placement[v].is_none() {
                    placement[v] = Some(s.id);
                    taken[k] = true;
                }
            }
        }
        for slot in placement.iter_mut().filter(|p| p.is_none()) {
            let free: Vec<usize> = (0..spots.len()).filter(|&k| !taken[k]).collect();
            if free.is_empty() {
                return Err(FleetError::NotEnoughSpots {
                    vehicles: vehicle_count,
                    spots: spots.len(),
                });
            }
            let k = free[rng.below(free.len() as u64) as usize];
            taken[k] = true;
            *slot = Some(spots[k].id);
        }
        let placement: Vec<usize> = placement.into_iter().map(|p| p.expect("placed")).collect();
        Self::build(graph, cfg, rng, &placement)
    }

    /// Vehicle `i` starts at spot id `spots[i]`.
    pub fn with_placement(
        graph: RoadGraph,
        cfg: WorldConfig,
        spots: &[usize],
    ) -> Result<Self, FleetError> {
        cfg.validate()?;
        let rng = SplitMix64::new(cfg.seed);
        Self::build(graph, cfg, rng, spots)
    }

    fn build(
        graph: RoadGraph,
        cfg: WorldConfig,
        rng: SplitMix64,
        placement: &[usize],
    ) -> Result<Self, FleetError> {
        let bounds = graph.bounding_box().ok_or(RoadnetError::EmptyGraph)?;
        let mut spots = vec![SpotState::Free; graph.parking_spots().len()];
        let mut vehicles = Vec::with_capacity(placement.len());
        for (id, &spot_id) in placement.iter().enumerate() {
            let k = graph
                .spot_index(spot_id)
                .ok_or(FleetError::UnknownSpot(spot_id))?;
            if spots[k] != SpotState::Free {
                return Err(FleetError::SpotOccupied(spot_id));
            }
            spots[k] = SpotState::Occupied(id);
            let spot = graph.parking_spots()[k];
            let (x, y) = graph.spot_position(&spot);
            let e = graph.edge(spot.anchor_edge);
            let (a, b) = (graph.waypoint(e.from), graph.waypoint(e.to));
            let heading = (b.y - a.y).atan2(b.x - a.x);
            let state = VehicleState {
                id,
                x,
                y,
                heading,
                speed: 0.0,
                truck_mass: cfg.spec.truck_mass,
                load_mass: 0.0,
                fork_height: 0.0,
                soc: cfg.initial_soc,
            };
            vehicles.push(Vehicle {
                state,
                spot: Some(spot_id),
                active: None,
                v: 0.0,
                vel: (0.0, 0.0),
                idle_since: f64::NEG_INFINITY,
                blocked: 0.0,
                yielding: None,
                soc: SocState::new(cfg.initial_soc),
                last: sample_of(&state, 0.0),
                distance: 0.0,
                tasks_completed: 0,
            });
        }
        Ok(Self {
            graph,
            cfg,
            vehicles,
            spots,
            rng,
            step_count: 0,
            bounds,
        })
    }

    pub fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    /// Always `step_count · dt`.
    pub fn clock(&self) -> f64 {
        self.step_count as f64 * self.cfg.dt
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn vehicle(&self, id: usize) -> Option<&VehicleState> {
        self.vehicles.get(id).map(|v| &v.state)
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.iter().map(|v| &v.state)
    }

    pub fn is_idle(&self, id: usize) -> bool {
        self.vehicles.get(id).is_some_and(|v| v.active.is_none())
    }

    /// When the vehicle last became idle; negative infinity if it never had
    /// a task.
    pub fn idle_since(&self, id: usize) -> Option<f64> {
        self.vehicles.get(id).map(|v| v.idle_since)
    }

    pub fn active_task(&self, id: usize) -> Option<Task> {
        self.vehicles.get(id)?.active.as_ref().map(|a| a.task)
    }

    /// Length of the route of the vehicle's active task.
    pub fn route_length(&self, id: usize) -> Option<f64> {
        self.vehicles
            .get(id)?
            .active
            .as_ref()
            .map(|a| a.route.length())
    }

    pub fn parked_at(&self, id: usize) -> Option<usize> {
        self.vehicles.get(id)?.spot
    }

    pub fn is_yielding(&self, id: usize) -> bool {
        self.vehicles.get(id).is_some_and(|v| v.yielding.is_some())
    }

    pub fn spot_state(&self, spot_id: usize) -> Option<SpotState> {
        self.graph.spot_index(spot_id).map(|k| self.spots[k])
    }

    pub fn tasks_completed(&self, id: usize) -> Option<usize> {
        self.vehicles.get(id).map(|v| v.tasks_completed)
    }

    pub fn distance_driven(&self, id: usize) -> Option<f64> {
        self.vehicles.get(id).map(|v| v.distance)
    }

    pub fn soc_state(&self, id: usize) -> Option<&SocState> {
        self.vehicles.get(id).map(|v| &v.soc)
    }

    /// Current sample of every vehicle, in id order, stamped with the clock.
    pub fn record(&self) -> Vec<TrajectorySample> {
        self.vehicles.iter().map(|v| v.last).collect()
    }

    /// Picks a destination, plans the route and reserves the spot.
    pub fn assign_task(&mut self, vehicle: usize, policy: Policy) -> Result<Task, FleetError> {
        let v = self
            .vehicles
            .get(vehicle)
            .ok_or(FleetError::UnknownVehicle(vehicle))?;
        if v.active.is_some() {
            return Err(FleetError::VehicleBusy(vehicle));
        }
        let origin = v.spot.ok_or(FleetError::VehicleBusy(vehicle))?;
        let dest = match policy {
            Policy::RandomSpot => {
                let free: Vec<usize> = self
                    .spots
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| **s == SpotState::Free)
                    .map(|(k, _)| self.graph.parking_spots()[k].id)
                    .collect();
                if free.is_empty() {
                    return Err(FleetError::NoFreeSpot);
                }
                free[self.rng.below(free.len() as u64) as usize]
            }
            Policy::Fixed(dest) => {
                let k = self
                    .graph
                    .spot_index(dest)
                    .ok_or(FleetError::UnknownSpot(dest))?;
                if self.spots[k] != SpotState::Free {
                    return Err(FleetError::SpotOccupied(dest));
                }
                dest
            }
        };
        let t = self.cfg.task;
        let task = Task {
            kind: t.kind,
            origin_spot: origin,
            dest_spot: dest,
            pickup_mass: t.pickup_mass,
            lift_height: t.lift_height,
        };
        let (_, route) = self.plan(vehicle, &task)?;
        let stages: VecDeque<Stage> = match task.kind {
            TaskKind::PickAndPlace => [
                Stage::Fork(task.lift_height),
                Stage::Attach(task.pickup_mass),
                Stage::Fork(0.0),
                Stage::Drive,
                Stage::Fork(task.lift_height),
                Stage::Detach,
                Stage::Fork(0.0),
            ]
            .into(),
            TaskKind::Relocate => [Stage::Drive].into(),
        };
        let k = self.graph.spot_index(dest).expect("checked above");
        self.spots[k] = SpotState::Reserved(vehicle);
        self.vehicles[vehicle].active = Some(ActiveTask {
            task,
            stages,
            route,
            s: 0.0,
            departed: false,
        });
        debug!(
            "t={} vehicle {vehicle} assigned {origin} -> {dest}",
            self.clock()
        );
        Ok(task)
    }

    /// Drops a task that has not left its origin yet and releases the
    /// reservation. Returns the dropped task.
    pub fn cancel_task(&mut self, vehicle: usize) -> Result<Option<Task>, FleetError> {
        let v = self
            .vehicles
            .get_mut(vehicle)
            .ok_or(FleetError::UnknownVehicle(vehicle))?;
        match &v.active {
            None => return Ok(None),
            Some(a) if a.departed => return Err(FleetError::VehicleBusy(vehicle)),
            Some(_) => {}
        }
        let a = v.active.take().expect("checked");
        v.state.load_mass = 0.0;
        v.state.fork_height = 0.0;
        let k = self
            .graph
            .spot_index(a.task.dest_spot)
            .expect("destination exists");
        self.spots[k] = SpotState::Free;
        Ok(Some(a.task))
    }

    /// Shortest path for the task: from the vehicle's start node to the
    /// first endpoint of the destination spot's anchor edge. A vehicle parked
    /// at a spot starts at the far end of that spot's anchor edge; when the
    /// destination lies ahead on the same anchor edge the path is that single
    /// edge start node.
    pub fn plan_route(&self, vehicle: usize, task: &Task) -> Result<Path, FleetError> {
        self.plan(vehicle, task).map(|(p, _)| p)
    }

    fn plan(&self, vehicle: usize, task: &Task) -> Result<(Path, Route), FleetError> {
        let g = &self.graph;
        let v = self
            .vehicles
            .get(vehicle)
            .ok_or(FleetError::UnknownVehicle(vehicle))?;
        let dest = *g
            .spot(task.dest_spot)
            .ok_or(FleetError::UnknownSpot(task.dest_spot))?;
        let d_edge = *g.edge(dest.anchor_edge);
        let dest_pos = g.spot_position(&dest);
        let here = (v.state.x, v.state.y);

        let mut points = vec![here];
        let mut limits = Vec::new();
        let origin = v.spot.and_then(|id| g.spot(id)).copied();
        let start = match origin {
            Some(o) if o.anchor_edge == dest.anchor_edge && dest.offset >= o.offset => {
                points.push(dest_pos);
                limits.push(d_edge.speed_limit);
                let path = Path {
                    nodes: vec![d_edge.from],
                    edges: Vec::new(),
                    total_length: 0.0,
                };
                let route = Route::new(&points, &limits, self.cfg.kinematics.a_lat_max);
                return Ok((path, route));
            }
            Some(o) => {
                let e = g.edge(o.anchor_edge);
                limits.push(e.speed_limit);
                e.to
            }
            None => {
                let n = g.nearest_node(here.0, here.1)?;
                let first_limit = g
                    .outgoing(n)
                    .first()
                    .map_or(self.cfg.kinematics.v_max, |&e| g.edge(e).speed_limit);
                limits.push(first_limit);
                n
            }
        };
        let path = astar(g, start, d_edge.from)?.ok_or(FleetError::Unreachable {
            from: start,
            to: d_edge.from,
        })?;
        let w = g.waypoint(start);
        points.push((w.x, w.y));
        for &e in &path.edges {
            let edge = g.edge(e);
            let w = g.waypoint(edge.to);
            points.push((w.x, w.y));
            limits.push(edge.speed_limit);
        }
        points.push(dest_pos);
        limits.push(d_edge.speed_limit);
        let route = Route::new(&points, &limits, self.cfg.kinematics.a_lat_max);
        Ok((path, route))
    }

    /// Predictive speed caps for the current state, indexed by vehicle id.
    pub fn resolve_conflicts(&self) -> Vec<Option<SpeedCap>> {
        let intents: Vec<Motion> = (0..self.vehicles.len()).map(|i| self.intent(i)).collect();
        speed_caps(&self.agents(&intents), &self.cfg.kinematics)
    }

    /// Desired motion of a vehicle whose current stage is driving.
    fn intent(&self, i: usize) -> Motion {
        let v = &self.vehicles[i];
        let Some(a) = &v.active else {
            return Motion::Still;
        };
        if a.stages.front() != Some(&Stage::Drive) {
            return Motion::Still;
        }
        let k = &self.cfg.kinematics;
        let dt = self.cfg.dt;
        if let Some(y) = v.yielding {
            let speed = (-v.v).max(0.0);
            let desired = (speed + k.a_max * dt)
                .min(k.yield_speed)
                .min(stopping_speed(a.s - y.s_min, 0.0, dt, k.b_max));
            return Motion::Reverse { desired };
        }
        let speed = v.v.max(0.0);
        let desired = (speed + k.a_max * dt)
            .min(k.v_max)
            .min(a.route.limit_at(a.s))
            .min(a.route.brake_cap(a.s, dt, k.b_max, k.v_max))
            .max(0.0);
        Motion::Forward { desired }
    }

    fn agents(&self, intents: &[Motion]) -> Vec<Agent> {
        self.vehicles
            .iter()
            .zip(intents)
            .map(|(v, m)| {
                let (dir, desired) = match (m, &v.active) {
                    (Motion::Forward { desired }, Some(a)) => {
                        let h = a.route.heading(a.s).unwrap_or(v.state.heading);
                        ((h.cos(), h.sin()), *desired)
                    }
                    _ => ((v.state.heading.cos(), v.state.heading.sin()), 0.0),
                };
                Agent {
                    x: v.state.x,
                    y: v.state.y,
                    vx: v.vel.0,
                    vy: v.vel.1,
                    dir,
                    desired,
                }
            })
            .collect()
    }

    /// Largest fraction of the intended displacement that passes the
    /// envelope against every other vehicle's position at step start, and
    /// the vehicle that limits it.
    fn envelope(
        &self,
        i: usize,
        route: &Route,
        s0: f64,
        ds: f64,
        old: &[(f64, f64)],
    ) -> (f64, Option<usize>) {
        let d_safe = self.cfg.kinematics.d_safe;
        let from = old[i];
        let check = |f: f64| -> Option<usize> {
            let to = route.position(s0 + ds * f);
            (0..old.len()).find(|&j| j != i && !envelope_ok(from, to, old[j], d_safe))
        };
        let Some(mut who) = check(1.0) else {
            return (1.0, None);
        };
        let mut lo = 0.0;
        let mut hi = 1.0;
        for k in 1..=ENVELOPE_SCAN {
            let f = k as f64 / ENVELOPE_SCAN as f64;
            if let Some(j) = check(f) {
                hi = f;
                who = j;
                break;
            }
            lo = f;
        }
        for _ in 0..ENVELOPE_BISECT {
            let mid = 0.5 * (lo + hi);
            match check(mid) {
                Some(j) => {
                    hi = mid;
                    who = j;
                }
                None => lo = mid,
            }
        }
        (lo, Some(who))
    }

    /// Advances the world by one timestep.
    pub fn step(&mut self) -> StepEvents {
        let dt = self.cfg.dt;
        let kp = self.cfg.kinematics;
        let t_new = (self.step_count + 1) as f64 * dt;
        let n = self.vehicles.len();
        let mut events = Vec::new();

        // stages that do not move the truck
        for i in 0..n {
            self.advance_stages(i, &mut events);
        }

        let intents: Vec<Motion> = (0..n).map(|i| self.intent(i)).collect();
        let caps = speed_caps(&self.agents(&intents), &kp);
        let old: Vec<(f64, f64)> = self
            .vehicles
            .iter()
            .map(|v| (v.state.x, v.state.y))
            .collect();

        // (signed arc displacement, arrived, limiting vehicle)
        let mut moves: Vec<(f64, bool, Option<usize>)> = vec![(0.0, false, None); n];
        for i in 0..n {
            let v = &self.vehicles[i];
            let Some(a) = &v.active else { continue };
            match intents[i] {
                Motion::Still => {}
                Motion::Forward { desired } => {
                    let mut target = desired;
                    let mut limiter = None;
                    if let Some(c) = caps[i] {
                        let floor = v.v.max(0.0) - kp.b_max * dt;
                        let capped = c.speed.max(floor);
                        if capped < target {
                            target = capped;
                            limiter = Some(c.blocker);
                        }
                    }
                    let remaining = a.route.length() - a.s;
                    let mut ds = (target * dt).min(remaining);
                    if target > 0.0 && remaining - ds <= ARRIVAL_TOLERANCE {
                        ds = remaining;
                    }
                    let (f, who) = if ds > 0.0 {
                        self.envelope(i, &a.route, a.s, ds, &old)
                    } else {
                        (1.0, None)
                    };
                    let arrived = f == 1.0 && ds == remaining && (target > 0.0 || remaining == 0.0);
                    moves[i] = (ds * f, arrived, who.or(limiter));
                }
                Motion::Reverse { desired } => {
                    let y = v.yielding.expect("reverse implies yielding");
                    let room = a.s - y.s_min;
                    let mut ds = (desired * dt).min(room);
                    if room - ds <= ARRIVAL_TOLERANCE {
                        ds = room;
                    }
                    let (f, who) = if ds > 0.0 {
                        self.envelope(i, &a.route, a.s, -ds, &old)
                    } else {
                        (1.0, None)
                    };
                    moves[i] = (-ds * f, false, who);
                }
            }
        }

        // apply motion
        let mut stuck: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            let (ds, arrived, limiter) = moves[i];
            let v = &mut self.vehicles[i];
            let Some(a) = v.active.as_mut() else {
                v.vel = (0.0, 0.0);
                v.v = 0.0;
                continue;
            };
            let driving = a.stages.front() == Some(&Stage::Drive);
            if !driving {
                v.vel = (0.0, 0.0);
                v.v = 0.0;
                v.state.speed = 0.0;
                continue;
            }
            a.s = (a.s + ds).clamp(0.0, a.route.length());
            let (x, y) = a.route.position(a.s);
            v.vel = ((x - old[i].0) / dt, (y - old[i].1) / dt);
            v.state.x = x;
            v.state.y = y;
            v.v = ds / dt;
            v.state.speed = ds.abs() / dt;
            if ds > 0.0 {
                if let Some(h) = a.route.heading(a.s) {
                    v.state.heading = h;
                }
            }

            if let Some(y) = v.yielding.as_mut() {
                y.elapsed += dt;
                if a.s <= y.s_min + 1e-12 || y.elapsed >= kp.t_deadlock {
                    v.yielding = None;
                    v.v = 0.0;
                    events.push(Event::YieldEnded { vehicle: i });
                }
                continue;
            }

            if arrived {
                v.state.speed = 0.0;
                v.v = 0.0;
                v.vel = (0.0, 0.0);
                a.stages.pop_front();
                let spot = a.task.dest_spot;
                let k = self.graph.spot_index(spot).expect("destination exists");
                debug_assert_eq!(self.spots[k], SpotState::Reserved(i));
                self.spots[k] = SpotState::Occupied(i);
                v.spot = Some(spot);
                v.blocked = 0.0;
                events.push(Event::Arrived { vehicle: i, spot });
                continue;
            }

            let wanted = matches!(intents[i], Motion::Forward { desired } if desired > 0.0);
            if wanted && ds <= 1e-9 && limiter.is_some() {
                v.blocked += dt;
                if v.blocked > kp.t_deadlock {
                    v.blocked = 0.0;
                    stuck.push((i, limiter.expect("checked")));
                }
            } else {
                v.blocked = 0.0;
            }
        }

        // deadlock breaker: the lower-priority vehicle of the pair backs up,
        // or the other one if the first has no room behind it
        for (i, j) in stuck {
            let Some(y) = [i.max(j), i.min(j)]
                .into_iter()
                .find(|&y| self.can_back_up(y))
            else {
                continue;
            };
            let other = if y == i { j } else { i };
            let yv = &mut self.vehicles[y];
            let s = yv.active.as_ref().expect("checked by can_back_up").s;
            yv.yielding = Some(Yield {
                s_min: (s - kp.yield_distance).max(0.0),
                elapsed: 0.0,
            });
            yv.v = 0.0;
            yv.blocked = 0.0;
            events.push(Event::YieldStarted {
                vehicle: y,
                giving_way_to: other,
            });
        }

        // tasks whose last stage finished this step
        for i in 0..n {
            let v = &mut self.vehicles[i];
            if v.active.as_ref().is_some_and(|a| a.stages.is_empty()) {
                let a = v.active.take().expect("checked");
                v.tasks_completed += 1;
                v.idle_since = t_new;
                events.push(Event::TaskCompleted {
                    vehicle: i,
                    task: a.task,
                });
            }
        }

        // samples and battery
        for v in &mut self.vehicles {
            let s = sample_of(&v.state, t_new);
            let e = segment_energy(&v.last, &s, &self.cfg.spec, &self.cfg.battery)
                .expect("positive dt and non-negative distance");
            v.soc.apply(e, self.cfg.battery.capacity);
            v.state.soc = v.soc.soc;
            v.distance += (s.x - v.last.x).hypot(s.y - v.last.y);
            v.last = TrajectorySample {
                soc: v.soc.soc,
                ..s
            };
            debug_assert!(Self::within_bounds(self.bounds, v.state.x, v.state.y));
        }
        self.step_count += 1;
        StepEvents { t: t_new, events }
    }

    /// Whether a driving vehicle could start reversing without breaking the
    /// envelope against anyone.
    fn can_back_up(&self, y: usize) -> bool {
        let v = &self.vehicles[y];
        let Some(a) = &v.active else { return false };
        if v.yielding.is_some() || a.stages.front() != Some(&Stage::Drive) || a.s <= 0.0 {
            return false;
        }
        let from = (v.state.x, v.state.y);
        let probe = (self.cfg.kinematics.yield_speed * self.cfg.dt).min(a.s);
        let to = a.route.position(a.s - probe);
        self.vehicles.iter().enumerate().all(|(k, o)| {
            k == y || envelope_ok(from, to, (o.state.x, o.state.y), self.cfg.kinematics.d_safe)
        })
    }

    fn within_bounds(b: (f64, f64, f64, f64), x: f64, y: f64) -> bool {
        x >= b.0 - BOUNDS_MARGIN
            && y >= b.1 - BOUNDS_MARGIN
            && x <= b.2 + BOUNDS_MARGIN
            && y <= b.3 + BOUNDS_MARGIN
    }

    /// Runs instantaneous stages and fork motion for one vehicle. Load
    /// changes take effect at the start of the step.
    fn advance_stages(&mut self, i: usize, events: &mut Vec<Event>) {
        let dt = self.cfg.dt;
        let lift_speed = self.cfg.kinematics.lift_speed;
        let v = &mut self.vehicles[i];
        let Some(a) = v.active.as_mut() else { return };
        while let Some(&stage) = a.stages.front() {
            match stage {
                Stage::Attach(m) => {
                    v.state.load_mass = m;
                    a.stages.pop_front();
                }
                Stage::Detach => {
                    v.state.load_mass = 0.0;
                    a.stages.pop_front();
                }
                Stage::Fork(target) => {
                    let h = v.state.fork_height;
                    let step = lift_speed * dt;
                    if (target - h).abs() <= step {
                        v.state.fork_height = target;
                        a.stages.pop_front();
                    } else {
                        v.state.fork_height = h + step * (target - h).signum();
                    }
                    return;
                }
                Stage::Drive => {
                    if !a.departed {
                        a.departed = true;
                        if let Some(spot) = v.spot.take() {
                            let k = self.graph.spot_index(spot).expect("parked at a known spot");
                            if self.spots[k] == SpotState::Occupied(i) {
                                self.spots[k] = SpotState::Free;
                            }
                            events.push(Event::Departed { vehicle: i, spot });
                        }
                    }
                    return;
                }
            }
        }
    }
}

fn sample_of(s: &VehicleState, t: f64) -> TrajectorySample {
    TrajectorySample {
        t,
        vehicle_id: s.id,
        x: s.x,
        y: s.y,
        heading: s.heading,
        speed: s.speed,
        fork_height: s.fork_height,
        load_mass: s.load_mass,
        soc: s.soc,
    }
}
