mod common;

use std::collections::BTreeMap;

use forkfleet::battery::{BatteryParams, VehicleSpec};
use forkfleet::fixtures::warehouse;
use forkfleet::fleet::{
    replay, simulate, Event, FleetError, KinematicParams, Policy, PolicyConfig, ScenarioConfig,
    SpotState, TaskKind, TaskTemplate, World, WorldConfig, CREEP_SPEED,
};
use forkfleet::rng::SplitMix64;
use forkfleet::roadnet::{
    build_graph, dijkstra, Edge, EdgeId, NodeId, ParkingSpot, RoadGraph, Waypoint,
};
use forkfleet::trajectory::{write_csv, TrajectorySample};
use proptest::prelude::*;

fn spot(id: usize, edge: usize, offset: f64) -> ParkingSpot {
    ParkingSpot {
        id,
        anchor_edge: EdgeId(edge),
        offset,
        occupied_by: None,
    }
}

/// Straight 30 m lane with spots at x = 0 and x = 20.
fn lane(speed: f64) -> RoadGraph {
    let wps = (0..4)
        .map(|i| Waypoint::new(i, 10.0 * i as f64, 0.0, 0.0))
        .collect();
    let edges = (0..3)
        .map(|i| Edge::new(i, i + 1, 10.0, speed, true))
        .collect();
    build_graph(wps, edges, vec![spot(0, 0, 0.0), spot(1, 2, 0.0)]).unwrap()
}

/// One-way square ring, counter-clockwise, 10 m sides.
fn ring() -> RoadGraph {
    let pts = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
    let wps = pts
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Waypoint::new(i, x, y, 0.0))
        .collect();
    let edges = (0..4)
        .map(|i| Edge::new(i, (i + 1) % 4, 10.0, 2.0, true))
        .collect();
    // spot 0 at node 1, spot 1 at node 0, spot 2 halfway along 0 -> 1
    build_graph(
        wps,
        edges,
        vec![spot(0, 1, 0.0), spot(1, 0, 0.0), spot(2, 0, 5.0)],
    )
    .unwrap()
}

fn relocate_cfg() -> WorldConfig {
    WorldConfig {
        task: TaskTemplate {
            kind: TaskKind::Relocate,
            ..TaskTemplate::default()
        },
        ..WorldConfig::default()
    }
}

fn run_until_arrival(world: &mut World, vehicle: usize, max_steps: usize) -> Option<f64> {
    for _ in 0..max_steps {
        let ev = world.step();
        if ev
            .events
            .iter()
            .any(|e| matches!(e, Event::Arrived { vehicle: v, .. } if *v == vehicle))
        {
            return Some(ev.t);
        }
    }
    None
}

#[test]
fn trapezoid_profile_arrival_time() {
    let mut cfg = relocate_cfg();
    cfg.kinematics = KinematicParams {
        v_max: 2.0,
        a_max: 1.0,
        b_max: 1.0,
        ..KinematicParams::default()
    };
    let mut w = World::with_placement(lane(4.0), cfg, &[0]).unwrap();
    w.assign_task(0, Policy::Fixed(1)).unwrap();
    assert_eq!(w.route_length(0), Some(20.0));
    let mut prev = 0.0;
    let mut t_arrive = None;
    for _ in 0..200 {
        let ev = w.step();
        let v = w.vehicle(0).unwrap().speed;
        assert!(v <= 2.0 + 1e-12);
        assert!(v - prev <= 1.0 * 0.1 + 1e-12, "acceleration limit");
        prev = v;
        if ev.events.iter().any(|e| matches!(e, Event::Arrived { .. })) {
            t_arrive = Some(ev.t);
            break;
        }
    }
    // accel 2 s, cruise 8 s, decel 2 s
    let t = t_arrive.expect("arrives");
    assert!((t - 12.0).abs() <= 0.1 + 1e-9, "arrived at {t}");
    let s = w.vehicle(0).unwrap();
    assert!((s.x - 20.0).abs() < 1e-9 && s.y.abs() < 1e-12);
}

#[test]
fn forced_choice_and_no_free_spot() {
    for seed in 0..20 {
        let cfg = WorldConfig {
            seed,
            ..relocate_cfg()
        };
        let mut w = World::with_placement(lane(2.0), cfg, &[0]).unwrap();
        assert_eq!(w.assign_task(0, Policy::RandomSpot).unwrap().dest_spot, 1);
    }
    let mut w = World::with_placement(lane(2.0), relocate_cfg(), &[0, 1]).unwrap();
    assert_eq!(
        w.assign_task(0, Policy::RandomSpot),
        Err(FleetError::NoFreeSpot)
    );
    assert_eq!(
        w.assign_task(0, Policy::Fixed(1)),
        Err(FleetError::SpotOccupied(1))
    );
    assert_eq!(
        w.assign_task(0, Policy::Fixed(9)),
        Err(FleetError::UnknownSpot(9))
    );
    assert_eq!(
        w.assign_task(5, Policy::RandomSpot),
        Err(FleetError::UnknownVehicle(5))
    );
}

#[test]
fn busy_vehicle_is_rejected() {
    let mut w = World::with_placement(ring(), relocate_cfg(), &[0]).unwrap();
    w.assign_task(0, Policy::Fixed(1)).unwrap();
    assert_eq!(
        w.assign_task(0, Policy::Fixed(2)),
        Err(FleetError::VehicleBusy(0))
    );
    assert_eq!(w.spot_state(1), Some(SpotState::Reserved(0)));
}

#[test]
fn random_destinations_are_uniform() {
    // 6 spots, the vehicle holds one: 5 free
    let g = warehouse();
    let spots: Vec<usize> = (0..6).collect();
    let mut w = World::with_placement(
        restrict_spots(&g, &spots),
        WorldConfig {
            seed: 42,
            ..relocate_cfg()
        },
        &[0],
    )
    .unwrap();
    let mut counts = [0usize; 6];
    for _ in 0..1000 {
        let t = w.assign_task(0, Policy::RandomSpot).unwrap();
        counts[t.dest_spot] += 1;
        w.cancel_task(0).unwrap();
    }
    assert_eq!(counts[0], 0);
    let expected = 200.0;
    let chi2: f64 = counts[1..]
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 99th percentile of chi-squared with 4 degrees of freedom
    assert!(chi2 < 13.2767, "chi2 = {chi2}, counts {counts:?}");
}

fn restrict_spots(g: &RoadGraph, keep: &[usize]) -> RoadGraph {
    let spots = g
        .parking_spots()
        .iter()
        .filter(|s| keep.contains(&s.id))
        .copied()
        .collect();
    build_graph(g.waypoints().to_vec(), g.edges().to_vec(), spots).unwrap()
}

#[test]
fn one_way_destination_loops_around() {
    let w = World::with_placement(ring(), relocate_cfg(), &[0]).unwrap();
    let task = forkfleet::fleet::Task {
        kind: TaskKind::Relocate,
        origin_spot: 0,
        dest_spot: 1,
        pickup_mass: 0.0,
        lift_height: 0.0,
    };
    // spot 0 sits at node 1 on edge 1 -> 2; spot 1 is behind it at node 0
    let p = w.plan_route(0, &task).unwrap();
    assert_eq!(p.nodes, vec![NodeId(2), NodeId(3), NodeId(0)]);
    assert_eq!(p.total_length, 20.0);
}

#[test]
fn destination_ahead_on_same_edge_is_single_node() {
    let mut w = World::with_placement(ring(), relocate_cfg(), &[1]).unwrap();
    let t = w.assign_task(0, Policy::Fixed(2)).unwrap();
    let p = w.plan_route(0, &t).unwrap();
    assert_eq!(p.nodes, vec![NodeId(0)]);
    assert_eq!(w.route_length(0), Some(5.0));
    let t_arr = run_until_arrival(&mut w, 0, 200).unwrap();
    assert!(t_arr > 0.0);
    let s = w.vehicle(0).unwrap();
    assert!((s.x - 5.0).abs() < 1e-9);
}

#[test]
fn route_length_matches_dijkstra() {
    let g = warehouse();
    let mut rng = SplitMix64::new(7);
    for _ in 0..40 {
        let n = g.parking_spots().len();
        let a = rng.below(n as u64) as usize;
        let mut b = rng.below(n as u64) as usize;
        if a == b {
            b = (b + 1) % n;
        }
        let w = World::with_placement(g.clone(), relocate_cfg(), &[a]).unwrap();
        let task = forkfleet::fleet::Task {
            kind: TaskKind::Relocate,
            origin_spot: a,
            dest_spot: b,
            pickup_mass: 0.0,
            lift_height: 0.0,
        };
        let p = w.plan_route(0, &task).unwrap();
        let start = g.edge(g.spot(a).unwrap().anchor_edge).to;
        let goal = g.edge(g.spot(b).unwrap().anchor_edge).from;
        let d = dijkstra(&g, start).unwrap()[goal.0];
        assert!(
            (p.total_length - d).abs() < 1e-9,
            "{a} -> {b}: {} vs {d}",
            p.total_length
        );
        assert_eq!(p.nodes[0], start);
        assert_eq!(*p.nodes.last().unwrap(), goal);
    }
}

#[test]
fn idle_fleet_only_advances_the_clock() {
    let cfg = WorldConfig {
        battery: BatteryParams {
            aux_power: 0.0,
            ..BatteryParams::default()
        },
        ..WorldConfig::default()
    };
    let mut w = World::new(warehouse(), cfg, 5).unwrap();
    let before: Vec<_> = w.vehicles().copied().collect();
    let rec0 = w.record();
    for k in 1..=50u64 {
        let ev = w.step();
        assert!(ev.events.is_empty());
        assert_eq!(ev.t, k as f64 * 0.1);
        assert_eq!(w.clock(), k as f64 * 0.1);
    }
    let after: Vec<_> = w.vehicles().copied().collect();
    assert_eq!(before, after);
    for (a, b) in rec0.iter().zip(w.record()) {
        assert_eq!(TrajectorySample { t: b.t, ..*a }, b);
    }
}

#[test]
fn pick_and_place_stages() {
    let cfg = WorldConfig::default();
    let lift = cfg.kinematics.lift_speed;
    let mut w = World::with_placement(lane(2.0), cfg, &[0]).unwrap();
    w.assign_task(0, Policy::Fixed(1)).unwrap();
    let mut max_h: f64 = 0.0;
    let mut loaded_while_moving = true;
    let mut done = None;
    let mut departed = None;
    for _ in 0..1000 {
        let ev = w.step();
        let s = *w.vehicle(0).unwrap();
        max_h = max_h.max(s.fork_height);
        if s.speed > 0.0 {
            loaded_while_moving &= s.load_mass == 1000.0 && s.fork_height == 0.0;
        }
        for e in &ev.events {
            match e {
                Event::Departed { .. } => departed = Some(ev.t),
                Event::TaskCompleted { .. } => done = Some(ev.t),
                _ => {}
            }
        }
        if done.is_some() {
            break;
        }
    }
    assert_eq!(max_h, 1.5);
    assert!(loaded_while_moving);
    // raise and lower before leaving: 2 * 1.5 / 0.3 = 10 s
    let dep = departed.unwrap();
    assert!(
        (dep - 2.0 * 1.5 / lift).abs() <= 0.1 + 1e-9,
        "departed at {dep}"
    );
    let s = w.vehicle(0).unwrap();
    assert_eq!((s.load_mass, s.fork_height), (0.0, 0.0));
    assert!(w.is_idle(0));
    assert_eq!(w.parked_at(0), Some(1));
    assert_eq!(w.spot_state(0), Some(SpotState::Free));
    assert_eq!(w.spot_state(1), Some(SpotState::Occupied(0)));
    assert_eq!(w.idle_since(0), done);
}

fn scenario(seed: u64, vehicles: usize, duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        vehicle_count: vehicles,
        seed,
        duration,
        ..ScenarioConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_csv() {
    let g = warehouse();
    let a = simulate(&g, &scenario(11, 4, 60.0)).unwrap();
    let b = simulate(&g, &scenario(11, 4, 60.0)).unwrap();
    assert_eq!(write_csv(&a.samples, &[]), write_csv(&b.samples, &[]));
    assert_eq!(a.events, b.events);
    let c = simulate(&g, &scenario(12, 4, 60.0)).unwrap();
    assert_ne!(write_csv(&a.samples, &[]), write_csv(&c.samples, &[]));
}

fn by_time(samples: &[TrajectorySample]) -> BTreeMap<u64, Vec<TrajectorySample>> {
    let mut m: BTreeMap<u64, Vec<TrajectorySample>> = BTreeMap::new();
    for s in samples {
        m.entry((s.t * 10.0).round() as u64).or_default().push(*s);
    }
    m
}

fn min_pairwise(rows: &[TrajectorySample]) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d = d.min((rows[i].x - rows[j].x).hypot(rows[i].y - rows[j].y));
        }
    }
    d
}

#[test]
fn separation_stays_above_discrete_margin() {
    let g = warehouse();
    let k = KinematicParams::default();
    let bound = k.d_safe - k.v_max * 0.1;
    for seed in 100..105 {
        let out = simulate(&g, &scenario(seed, 6, 120.0)).unwrap();
        for (step, rows) in by_time(&out.samples) {
            let d = min_pairwise(&rows);
            assert!(d >= bound - 1e-9, "seed {seed} step {step}: separation {d}");
        }
    }
}

#[test]
fn tasks_complete_within_progress_bound() {
    let g = warehouse();
    let cfg = scenario(5, 4, 600.0);
    let out = simulate(&g, &cfg).unwrap();
    let k = cfg.kinematics;
    let lift_time = 4.0 * cfg.task.lift_height / k.lift_speed;
    let deadlock = cfg.vehicle_count as f64 * 2.0 * k.t_deadlock;
    let mut open: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let mut completed = 0;
    for ev in &out.events {
        for e in &ev.events {
            match e {
                Event::TaskAssigned { vehicle, task } => {
                    let start = g.edge(g.spot(task.origin_spot).unwrap().anchor_edge).to;
                    let goal = g.edge(g.spot(task.dest_spot).unwrap().anchor_edge).from;
                    let path = dijkstra(&g, start).unwrap()[goal.0] + 20.0;
                    let bound = path / CREEP_SPEED + lift_time + deadlock;
                    open.insert(*vehicle, (ev.t, bound));
                }
                Event::TaskCompleted { vehicle, .. } => {
                    let (t0, bound) = open.remove(vehicle).unwrap();
                    assert!(
                        ev.t - t0 <= bound,
                        "vehicle {vehicle} took {} > {bound}",
                        ev.t - t0
                    );
                    completed += 1;
                }
                _ => {}
            }
        }
    }
    for (v, (t0, bound)) in open {
        assert!(
            cfg.duration - t0 <= bound,
            "vehicle {v} task from {t0} overdue"
        );
    }
    assert!(completed >= 8, "only {completed} tasks completed");
}

#[test]
fn spots_are_exclusive_and_arrivals_accurate() {
    let g = warehouse();
    let cfg = scenario(21, 6, 300.0);
    let mut w = World::new(g.clone(), cfg.world_config(), 6).unwrap();
    for _ in 0..3000 {
        for v in 0..6 {
            if w.is_idle(v) && w.clock() - w.idle_since(v).unwrap() >= 2.0 {
                w.assign_task(v, Policy::RandomSpot).unwrap();
            }
        }
        let ev = w.step();
        let mut claims: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..6 {
            if let Some(s) = w.parked_at(v) {
                claims.entry(s).or_default().push(v);
            }
            if let Some(t) = w.active_task(v) {
                if w.parked_at(v) != Some(t.dest_spot) {
                    claims.entry(t.dest_spot).or_default().push(v);
                }
            }
        }
        for (s, vs) in &claims {
            assert!(vs.len() <= 1, "spot {s} claimed by {vs:?}");
        }
        for e in &ev.events {
            if let Event::Arrived { vehicle, spot } = e {
                let (x, y) = g.spot_position(g.spot(*spot).unwrap());
                let p = w.vehicle(*vehicle).unwrap();
                assert!((p.x - x).hypot(p.y - y) <= 0.1);
            }
        }
    }
}

#[test]
fn soc_never_rises_without_regeneration() {
    let g = warehouse();
    let mut cfg = scenario(3, 4, 200.0);
    cfg.battery.eta_regen = 0.0;
    let out = simulate(&g, &cfg).unwrap();
    let mut last: BTreeMap<usize, f64> = BTreeMap::new();
    for s in &out.samples {
        if let Some(&prev) = last.get(&s.vehicle_id) {
            assert!(s.soc <= prev, "vehicle {} at {}", s.vehicle_id, s.t);
        }
        last.insert(s.vehicle_id, s.soc);
    }
    assert!(out.summary.iter().all(|v| v.energy_regenerated == 0.0));
}

#[test]
fn replay_reproduces_recorded_run() {
    let g = warehouse();
    let cfg = scenario(8, 4, 90.0);
    let out = simulate(&g, &cfg).unwrap();
    let tl = replay(&out.samples, &g, cfg.dt, &cfg.spec, &cfg.battery).unwrap();
    assert_eq!(tl.samples.len(), out.samples.len());
    for (a, b) in out.samples.iter().zip(&tl.samples) {
        assert_eq!((a.t, a.vehicle_id), (b.t, b.vehicle_id));
        assert!((a.x - b.x).abs() <= 1e-9 && (a.y - b.y).abs() <= 1e-9);
        assert!((a.soc - b.soc).abs() <= 1e-12);
    }
}

fn sample(t: f64, id: usize, x: f64, y: f64) -> TrajectorySample {
    TrajectorySample {
        t,
        vehicle_id: id,
        x,
        y,
        heading: 0.0,
        speed: 1.0,
        fork_height: 0.0,
        load_mass: 0.0,
        soc: 0.9,
    }
}

#[test]
fn replay_interpolates_on_the_grid() {
    let g = lane(2.0);
    let track: Vec<_> = (0..=5)
        .map(|k| sample(k as f64, 0, 3.0 * k as f64, 0.0))
        .collect();
    let tl = replay(
        &track,
        &g,
        0.1,
        &VehicleSpec::default(),
        &BatteryParams::default(),
    )
    .unwrap();
    assert_eq!(tl.samples.len(), 51);
    for (k, s) in tl.samples.iter().enumerate() {
        let t = k as f64 * 0.1;
        assert_eq!(s.t, t);
        assert!((s.x - 3.0 * t).abs() < 1e-12);
    }
}

#[test]
fn replay_spawns_late_vehicles_and_rejects_unsorted() {
    let g = lane(2.0);
    let mut s = vec![sample(0.0, 0, 0.0, 0.0), sample(1.0, 0, 1.0, 0.0)];
    s.push(sample(0.55, 7, 5.0, 0.0));
    s.push(sample(1.0, 7, 6.0, 0.0));
    let tl = replay(
        &s,
        &g,
        0.1,
        &VehicleSpec::default(),
        &BatteryParams::default(),
    )
    .unwrap();
    let late = tl.track(7);
    assert_eq!(late.len(), 5);
    assert!((late[0].t - 0.6).abs() < 1e-12);
    assert!(tl.samples.windows(2).all(|w| w[0].t <= w[1].t));
    let bad = vec![sample(1.0, 3, 0.0, 0.0), sample(0.5, 3, 1.0, 0.0)];
    assert!(matches!(
        replay(
            &bad,
            &g,
            0.1,
            &VehicleSpec::default(),
            &BatteryParams::default()
        ),
        Err(FleetError::UnsortedSamples {
            vehicle: 3,
            index: 1
        })
    ));
}

#[test]
fn fixed_policy_uses_listed_spots() {
    let g = warehouse();
    let cfg = ScenarioConfig {
        vehicle_count: 1,
        policy: PolicyConfig::Fixed(vec![5, 9]),
        duration: 400.0,
        ..ScenarioConfig::default()
    };
    let out = simulate(&g, &cfg).unwrap();
    let dests: Vec<usize> = out
        .events
        .iter()
        .flat_map(|e| &e.events)
        .filter_map(|e| match e {
            Event::TaskAssigned { task, .. } => Some(task.dest_spot),
            _ => None,
        })
        .collect();
    assert!(dests.len() >= 2);
    assert!(dests.iter().all(|d| *d == 5 || *d == 9), "{dests:?}");
}

#[test]
fn not_enough_spots() {
    assert_eq!(
        World::new(lane(2.0), WorldConfig::default(), 3).err(),
        Some(FleetError::NotEnoughSpots {
            vehicles: 3,
            spots: 2
        })
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clock_is_an_exact_multiple_of_dt(dt in 0.01f64..0.5, steps in 1u64..200, seed in any::<u64>()) {
        let cfg = WorldConfig { dt, seed, ..WorldConfig::default() };
        let mut w = World::new(warehouse(), cfg, 3).unwrap();
        for v in 0..3 {
            w.assign_task(v, Policy::RandomSpot).unwrap();
        }
        for k in 1..=steps {
            let ev = w.step();
            prop_assert_eq!(ev.t, k as f64 * dt);
        }
        prop_assert_eq!(w.clock(), steps as f64 * dt);
        for v in w.vehicles() {
            prop_assert!(v.speed <= cfg.kinematics.v_max + 1e-12);
            prop_assert!((0.0..=1.0).contains(&v.soc));
            prop_assert!(v.load_mass <= cfg.spec.rated_capacity);
        }
    }
}
