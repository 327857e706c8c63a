use std::collections::BTreeMap;

use proptest::prelude::*;
use trafsim_core::config::RunConfig;
use trafsim_core::demand::{AgentSpec, Demand};
use trafsim_core::engine::io::{read_rollout, write_rollout, RolloutFormat};
use trafsim_core::engine::{self, desired_speed, Rollout};
use trafsim_core::fixtures;
use trafsim_core::geom::Point2;
use trafsim_core::net::{ConnId, Network, NodeId};
use trafsim_core::scenario::{ObjectType, Scenario};
use trafsim_core::signal::{LightState, SignalProgram};

mod common;
use common::*;

type Programs = BTreeMap<NodeId, SignalProgram>;

fn cfg(horizon: usize) -> RunConfig {
    RunConfig { horizon_steps: horizon, ..RunConfig::default() }
}

fn spec_mut(d: &mut Demand, id: i64) -> &mut AgentSpec {
    d.specs.iter_mut().find(|s| s.track_id == id).expect("spec exists")
}

/// Positions including the last history state, for displacement checks.
fn trace(s: &Scenario, r: &Rollout, i: usize) -> Vec<(Point2, f64, bool)> {
    let a = &r.agents[i];
    let track = s.track(a.id).unwrap();
    let mut v = Vec::new();
    if let Some(st) = track.state_at(s.current_step()) {
        v.push((st.position(), st.speed(), true));
    } else {
        v.push((Point2::new(0.0, 0.0), 0.0, false));
    }
    v.extend(a.states.iter().map(|st| (Point2::new(st.x, st.y), st.speed, st.valid)));
    v
}

#[test]
fn corridor_is_collision_free_over_100_seeds() {
    let s = fixtures::single_lane_corridor(10, 2000.0);
    let mut c = cfg(600);
    c.engine.overrides_enabled = false;
    c.engine.lane_changes_enabled = false;
    let (net, programs) = prepare(&s, &c);
    for seed in 0..100 {
        let r = engine::simulate(&s, &net, &programs, &c, seed);
        assert_eq!(r.agents.len(), 10);
        let ov = overlaps(&r);
        assert!(ov.is_empty(), "seed {seed}: overlap {:?}", ov.first());
    }
}

#[test]
fn free_road_profile_matches_closed_form_without_dawdle() {
    let s = fixtures::single_lane_corridor(1, 3000.0);
    let c = cfg(300);
    let (net, programs) = prepare(&s, &c);
    let mut d = engine::prepare_demand(&s, &net, &programs, &c, 1);
    let spec = spec_mut(&mut d, 1);
    let p = spec.params.as_mut().unwrap();
    p.sigma = 0.0;
    p.accel = 2.0;
    p.speed_factor = 10.0 / 13.4;
    let v0 = spec.initial_speed;
    let r = engine::simulate_demand(&s, &net, &programs, &c, &d, 1);
    let states = &r.agents[0].states;
    let mut x = s.track(1).unwrap().state_at(s.current_step()).unwrap().x;
    for (k, st) in states.iter().enumerate() {
        let want = (v0 + 0.2 * (k + 1) as f64).min(10.0);
        assert!((st.speed - want).abs() < 1e-9, "step {k}: {} vs {want}", st.speed);
        x += want * 0.1;
        assert!((st.x - x).abs() < 1e-6, "step {k}: x {} vs {x}", st.x);
    }
}

#[test]
fn speed_never_exceeds_desired_without_dawdle() {
    let s = fixtures::grid(120.0, 2).scenario;
    let c = cfg(300);
    let (net, programs) = prepare(&s, &c);
    let mut d = engine::prepare_demand(&s, &net, &programs, &c, 5);
    for spec in &mut d.specs {
        if let Some(p) = spec.params.as_mut() {
            p.sigma = 0.0;
        }
    }
    let r = engine::simulate_demand(&s, &net, &programs, &c, &d, 5);
    // every lane in the grid has the same limit
    for (a, spec) in r.agents.iter().zip(&d.specs) {
        let cap = desired_speed(spec.params.unwrap().speed_factor, 11.0);
        for st in a.states.iter().skip(1).filter(|s| s.valid) {
            assert!(st.speed >= 0.0 && st.speed <= cap.max(spec.initial_speed) + 1e-9);
        }
    }
}

/// Stop line point and direction for every connection.
fn stop_lines(net: &Network) -> Vec<(ConnId, Point2, Point2)> {
    net.connections.iter().map(|c| (c.id, c.shape.first(), Point2::from_heading(c.shape.start_heading()))).collect()
}

/// (agent index, step, connection, speed) for each crossing of a stop line
/// on the agent's planned route.
fn crossings(s: &Scenario, net: &Network, r: &Rollout, d: &Demand) -> Vec<(usize, usize, ConnId, f64)> {
    let lines = stop_lines(net);
    let mut out = Vec::new();
    for i in 0..r.agents.len() {
        let tr = trace(s, r, i);
        for k in 1..tr.len() {
            let (p0, _, ok0) = tr[k - 1];
            let (p1, v1, ok1) = tr[k];
            if !(ok0 && ok1) {
                continue;
            }
            let route = d.specs.iter().find(|x| x.track_id == r.agents[i].id).and_then(|x| x.route.as_ref());
            for &(c, q, dir) in &lines {
                if !route.is_some_and(|rt| rt.connections.contains(&c)) {
                    continue;
                }
                let (a, b) = ((p0 - q).dot(dir), (p1 - q).dot(dir));
                if a < 0.0 && b >= 0.0 && (p1 - q).cross(dir).abs() < 1.5 {
                    out.push((i, r.start_step + k - 1, c, v1));
                }
            }
        }
    }
    out
}

#[test]
fn all_way_stop_vehicles_halt_before_the_line() {
    let (s, _) = fixtures::four_way_all_stop();
    let c = cfg(600);
    let (net, programs) = prepare(&s, &c);
    for seed in 0..8 {
        let d = engine::prepare_demand(&s, &net, &programs, &c, seed);
        let r = engine::simulate_demand(&s, &net, &programs, &c, &d, seed);
        assert!(overlaps(&r).is_empty(), "seed {seed}");
        let x = crossings(&s, &net, &r, &d);
        for i in 0..r.agents.len() {
            let Some(&(_, step, _, _)) = x.iter().find(|e| e.0 == i) else { panic!("seed {seed}: agent {i} never crossed") };
            let before = &r.agents[i].states[..step - r.start_step];
            assert!(before.iter().any(|st| st.valid && st.speed < 0.1), "seed {seed}: agent {i} rolled through");
        }
    }
}

fn program_with_green_from(programs: &mut Programs, conn: ConnId, onset: usize) {
    for p in programs.values_mut() {
        if let Some(k) = p.connections.iter().position(|&c| c == conn) {
            for (t, row) in p.states.iter_mut().enumerate() {
                row[k] = if t >= onset { LightState::Green } else { LightState::Red };
            }
        }
    }
}

#[test]
fn queue_departs_after_green_plus_startup_delay() {
    let (s, _) = fixtures::red_queue();
    let c = cfg(200);
    let (net, mut programs) = prepare(&s, &c);
    let onset = s.history_length + 30;
    for seed in 0..16 {
        let d = engine::prepare_demand(&s, &net, &programs, &c, seed);
        for spec in &d.specs {
            let conn = *spec.route.as_ref().unwrap().connections.first().unwrap();
            program_with_green_from(&mut programs, conn, onset);
        }
        let r = engine::simulate_demand(&s, &net, &programs, &c, &d, seed);
        for (a, spec) in r.agents.iter().zip(&d.specs) {
            let conn = net.connection(spec.route.as_ref().unwrap().connections[0]);
            if conn.from_lane == 0 && conn.movement == trafsim_core::Movement::Right {
                // may turn on red after a full stop
                continue;
            }
            let delay = spec.params.unwrap().startup_delay;
            let first_move = a.states.iter().position(|st| st.speed > 0.0).map(|k| r.start_step + k);
            let Some(step) = first_move else {
                assert!(onset as f64 + delay / 0.1 > (r.start_step + r.horizon) as f64 - 2.0, "seed {seed}: never left");
                continue;
            };
            let want = onset as f64 + delay / 0.1;
            assert!((step as f64 - want).abs() <= 1.0, "seed {seed} agent {}: departed {step}, want {want:.1}", a.id);
        }
    }
}

#[test]
fn dilemma_zone_seeds_split_between_stop_and_go() {
    let s = fixtures::dilemma_zone();
    let c = cfg(80);
    let (net, programs) = prepare(&s, &c);
    let (mut stop, mut go) = (0, 0);
    for seed in 0..32 {
        let d = engine::prepare_demand(&s, &net, &programs, &c, seed);
        let r = engine::simulate_demand(&s, &net, &programs, &c, &d, seed);
        if crossings(&s, &net, &r, &d).iter().any(|x| x.0 == 0) {
            go += 1;
        } else {
            stop += 1;
        }
    }
    assert!(stop >= 1 && go >= 1, "stop {stop} go {go}");
}

#[test]
fn engine_agents_respect_red_lights() {
    let fixtures = [fixtures::four_way_signalized().0, fixtures::red_queue().0, fixtures::dilemma_zone()];
    for s in fixtures {
        let c = cfg(300);
        let (net, programs) = prepare(&s, &c);
        for seed in 0..8 {
            let d = engine::prepare_demand(&s, &net, &programs, &c, seed);
            let r = engine::simulate_demand(&s, &net, &programs, &c, &d, seed);
            for (i, step, conn, v) in crossings(&s, &net, &r, &d) {
                let node = net.connection(conn).via_node;
                let state = programs.get(&node).and_then(|p| p.state(step, conn));
                let spec = &d.specs[i];
                let right_exempt = net.connection(conn).from_lane == 0 && net.connection(conn).movement == trafsim_core::Movement::Right;
                if state == Some(LightState::Red) && !right_exempt && spec.object_type == ObjectType::Vehicle {
                    assert!(v <= 0.5, "{} seed {seed}: agent {i} ran a red at {v} m/s", s.id);
                }
            }
        }
    }
}

#[test]
fn displacement_is_bounded_by_speed() {
    let scenes = [
        fixtures::grid(120.0, 2).scenario,
        fixtures::four_way().0,
        fixtures::four_way_signalized().0,
        fixtures::on_ramp_merge(),
        fixtures::roundabout(),
        fixtures::lane_drop(),
    ];
    for s in scenes {
        let c = cfg(300);
        let (net, programs) = prepare(&s, &c);
        for seed in 0..4 {
            let r = engine::simulate(&s, &net, &programs, &c, seed);
            for i in 0..r.agents.len() {
                let tr = trace(&s, &r, i);
                for k in 1..tr.len() {
                    let ((p0, v0, ok0), (p1, _, ok1)) = (tr[k - 1], tr[k]);
                    if ok0 && ok1 {
                        let d = p0.dist(p1);
                        assert!(d <= (v0 + 4.5 * 0.1) * 0.1 + 1e-6, "{} seed {seed} agent {i} step {k}: moved {d}", s.id);
                    }
                }
            }
        }
    }
}

#[test]
fn rollouts_count_and_seed_offsets() {
    let s = fixtures::four_way().0;
    let c = RunConfig { seed: 40, ..cfg(80) };
    let (net, programs) = prepare(&s, &c);
    let rs = engine::rollouts(&s, &net, &programs, &c);
    assert_eq!(rs.len(), 32);
    for (k, r) in rs.iter().enumerate() {
        assert_eq!(r.seed, 40 + k as u64);
        assert_eq!(r.start_step, s.history_length);
        assert!(r.agents.iter().all(|a| a.states.len() == 80));
    }
}

#[test]
fn output_is_independent_of_worker_count() {
    let s = fixtures::grid(120.0, 2).scenario;
    let mut c = cfg(200);
    c.n_rollouts = 6;
    let (net, programs) = prepare(&s, &c);
    c.workers = 1;
    let one = engine::rollouts(&s, &net, &programs, &c);
    c.workers = 8;
    let eight = engine::rollouts(&s, &net, &programs, &c);
    assert_eq!(one, eight);
    let again = engine::simulate(&s, &net, &programs, &c, c.seed);
    assert_eq!(one[0], again);
}

#[test]
fn rollout_files_round_trip() {
    let s = fixtures::four_way_signalized().0;
    let c = cfg(40);
    let (net, programs) = prepare(&s, &c);
    let r = engine::simulate(&s, &net, &programs, &c, 9);
    let dir = tempfile::tempdir().unwrap();
    for fmt in [RolloutFormat::Csv, RolloutFormat::Binary] {
        let path = write_rollout(dir.path(), &r, fmt).unwrap();
        let back = read_rollout(&path).unwrap();
        assert_eq!(back, r, "{fmt:?}");
    }
    let bin = std::fs::read(dir.path().join("four_way_signalized_seed9.rlt")).unwrap();
    assert_eq!(&bin[..4], b"RLT1");
    assert_eq!(u32::from_le_bytes(bin[8..12].try_into().unwrap()) as usize, r.agents.len());
    assert_eq!(u32::from_le_bytes(bin[12..16].try_into().unwrap()), 40);
}

#[test]
fn exited_agents_stay_invalid() {
    let s = fixtures::four_way().0;
    let c = cfg(600);
    let (net, programs) = prepare(&s, &c);
    let r = engine::simulate(&s, &net, &programs, &c, 2);
    for a in &r.agents {
        if let Some(k) = a.states.iter().position(|st| !st.valid) {
            assert!(a.states[k..].iter().all(|st| !st.valid));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn seeds_are_deterministic(seed in any::<u64>()) {
        let s = fixtures::four_way_all_stop().0;
        let c = cfg(120);
        let (net, programs) = prepare(&s, &c);
        let a = engine::simulate(&s, &net, &programs, &c, seed);
        let b = engine::simulate(&s, &net, &programs, &c, seed);
        prop_assert_eq!(a, b);
    }
}



