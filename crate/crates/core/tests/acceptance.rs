//! Acceptance suite: every primary criterion at its stated tolerance. Each
//! criterion prints one PASS/FAIL line; the test fails if any criterion does.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafsim_core::config::{MetricsConfig, RunConfig};
use trafsim_core::demand::{sample_with, PARAM_BOUNDS};
use trafsim_core::engine::io::RolloutFormat;
use trafsim_core::engine::{self, Rollout};
use trafsim_core::fixtures;
use trafsim_core::geom::{Obb, Point2};
use trafsim_core::metrics::{self, ttc, Body, Footprint, RoadEdges};
use trafsim_core::net::*;
use trafsim_core::overrides::OverrideClass;
use trafsim_core::pipeline;
use trafsim_core::scenario::LaneId;
use trafsim_core::signal::{extend_states, LightState, SignalProgram};

mod common;
use common::*;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

/// Runs `f`, failing it on panic or when it exceeds `budget`.
fn criterion(name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> String) -> Outcome {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(detail) => match budget {
            Some(b) if elapsed > b => (false, format!("{detail}; exceeded {:.0} s budget", b.as_secs_f64())),
            _ => (true, detail),
        },
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, msg.unwrap_or_else(|| "panicked".into()))
        }
    };
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {name} ({:.2} s): {detail}", elapsed.as_secs_f64());
    Outcome { name, passed, detail, elapsed }
}

fn conversion_correctness() -> String {
    let suite = fixtures::conversion_suite();
    assert!(suite.len() >= 20, "only {} fixtures", suite.len());
    let mut worst = 1.0f64;
    for f in &suite {
        check_truncation(&f.scenario);
        check_partition(&f.scenario);
        check_grouping(&f.scenario);
        let net = build_network(&f.scenario, &net_cfg()).unwrap();
        let cov = lane_coverage(&f.scenario, &net, pipeline::COVERAGE_TOLERANCE_M);
        assert!(cov >= 0.99, "{}: coverage {cov}", f.name);
        worst = worst.min(cov);
    }
    format!("{} fixtures, min coverage {worst:.4}", suite.len())
}

fn figure_fixtures() -> String {
    let s = fixtures::fig2_corridor();
    let t = truncate_lane_centers(&s.lane_centers, &net_cfg()).unwrap();
    let l1 = t.fragments_of(1).len();
    let net = build_network(&s, &net_cfg()).unwrap();
    let lanes: usize = net.edges.iter().map(|e| e.lanes.len()).sum();
    assert_eq!((l1, t.lanes.len(), lanes, net.edges.len()), (4, 18, 18, 4));

    let s = fixtures::fig3_intersection();
    let (_, art) = build_network_with_artifacts(&s, &net_cfg()).unwrap();
    let member: HashMap<LaneId, usize> =
        art.candidates.iter().enumerate().flat_map(|(c, cand)| cand.lanes.iter().map(move |&l| (l, c))).collect();
    let groups: BTreeSet<Option<usize>> =
        fixtures::FIG3_TURNS.iter().map(|l| art.topology.groups.iter().position(|g| g.contains(&member[l]))).collect();
    assert_eq!(groups.len(), 1, "c1..c6 spread over {groups:?}");
    assert!(groups.iter().all(Option::is_some));
    format!("l1 -> {l1} fragments, {lanes} lanes in {} edges; c1..c6 share one node", net.edges.len())
}

fn simulator_safety() -> String {
    let s = fixtures::single_lane_corridor(10, 2000.0);
    let mut c = RunConfig { horizon_steps: 600, ..RunConfig::default() };
    c.engine.overrides_enabled = false;
    c.engine.lane_changes_enabled = false;
    let (net, programs) = prepare(&s, &c);
    let rollouts: Vec<Rollout> = (0..100).map(|seed| engine::simulate(&s, &net, &programs, &c, seed)).collect();
    for r in &rollouts {
        assert_eq!(r.agents.len(), 10);
        let ov = overlaps(r);
        assert!(ov.is_empty(), "seed {}: overlap {:?}", r.seed, ov[0]);
    }
    "100 seeds x 600 steps, 0 overlaps".into()
}

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> String {
    let scenarios = [fixtures::grid(120.0, 2).scenario, fixtures::four_way_signalized().0];
    let run = |workers: usize| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { workers, n_rollouts: 8, horizon_steps: 120, seed: 17, ..RunConfig::default() };
        for s in &scenarios {
            for fmt in [RolloutFormat::Csv, RolloutFormat::Binary] {
                pipeline::simulate_scenario(s, &cfg, &dir.path().join(format!("{fmt:?}")), fmt).unwrap();
            }
        }
        let by_id = pipeline::load_rollouts(&dir.path().join("Binary")).unwrap();
        for s in &scenarios {
            pipeline::evaluate_scenario(s, &by_id, &cfg, &dir.path().join("reports")).unwrap();
        }
        let mut files = tree_bytes(dir.path());
        // the echoed config records the worker count itself
        files.retain(|k, _| !k.ends_with("run.json"));
        files
    };
    let one = run(1);
    let eight = run(8);
    assert_eq!(one.keys().collect::<Vec<_>>(), eight.keys().collect::<Vec<_>>());
    for (k, v) in &one {
        assert!(v == &eight[k], "{k} differs between 1 and 8 workers");
    }
    format!("{} files byte-identical with 1 and 8 workers", one.len())
}

fn parameter_sampling() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let (mut min_gap, mut sigma) = (0.0, 0.0);
    for _ in 0..n {
        let p = sample_with(&mut rng, 0.9, None);
        for (name, value) in p.named() {
            let (_, lo, hi) = PARAM_BOUNDS.iter().find(|b| b.0 == name).copied().unwrap();
            assert!(value >= lo && value <= hi, "{name} = {value} outside [{lo}, {hi}]");
        }
        min_gap += p.min_gap;
        sigma += p.sigma;
    }
    let (mg, sg) = (min_gap / n as f64, sigma / n as f64);
    assert!((mg - 2.5).abs() <= 0.05, "minGap mean {mg}");
    assert!((sg - 0.5).abs() <= 0.01, "sigma mean {sg}");
    format!("{n} draws in bounds, minGap mean {mg:.4}, sigma mean {sg:.4}")
}

fn signal_logic() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let lights = [LightState::Red, LightState::Yellow, LightState::Green];
    let cases = 2000;
    for _ in 0..cases {
        let h = rng.gen_range(1..20);
        let k = rng.gen_range(1..8);
        let rows: Vec<Vec<LightState>> = (0..h).map(|_| (0..k).map(|_| lights[rng.gen_range(0..3)]).collect()).collect();
        let p = SignalProgram {
            node_id: NodeId(0),
            connections: (0..k).map(ConnId).collect(),
            states: rows.clone(),
            history_length: h,
            extended_to: h,
            defaulted: vec![],
            warnings: vec![],
        };
        let total = h + rng.gen_range(0..120);
        let ext = extend_states(p, total);
        assert_eq!(ext.len(), total);
        assert_eq!(&ext.states[..h], &rows[..]);
        assert!(ext.states[h..].iter().all(|r| r == &rows[h - 1]));
    }
    let (s, _, p, straight) = rectification_case();
    for t in 0..s.history_length {
        assert_eq!(p.state(t, straight), Some(LightState::Green), "rectified step {t}");
    }
    format!("{cases} random programs hold; rectification flips red to green")
}

fn override_logic() -> String {
    let s = roadside();
    let cfg = RunConfig { horizon_steps: 600, ..RunConfig::default() };
    let c = classes(&s, &cfg);
    assert_eq!(
        [c[&2], c[&3], c[&4]],
        [OverrideClass::ParkedHold, OverrideClass::OffnetHold, OverrideClass::OffnetBallistic]
    );
    let (net, programs) = prepare(&s, &cfg);
    let r = engine::simulate(&s, &net, &programs, &cfg, 0);
    for id in [2, 3] {
        let start = s.track(id).unwrap().state_at(s.current_step()).unwrap().position();
        let a = agent(&r, id);
        assert_eq!(a.states.len(), 600);
        assert!(a.states.iter().all(|st| st.valid && Point2::new(st.x, st.y) == start), "hold {id} moved");
    }

    let (lo, hi) = s.bounds();
    let mut prev = s.track(4).unwrap().state_at(s.current_step()).unwrap().position();
    let mut moving = 0;
    for st in &agent(&r, 4).states {
        let p = Point2::new(st.x, st.y);
        if prev.x >= lo.x && prev.x <= hi.x && prev.y >= lo.y && prev.y <= hi.y {
            assert!((p.dist(prev) - 0.2).abs() < 1e-9, "ballistic step {}", p.dist(prev));
            assert!((st.heading - FRAC_PI_2).abs() < 1e-9);
            moving += 1;
        }
        prev = p;
    }
    assert!(moving > 20);

    let (red, _) = fixtures::red_queue();
    let (red_net, red_programs) = prepare(&red, &cfg);
    let r = engine::simulate(&red, &red_net, &red_programs, &cfg, 4);
    let held = r.agents.iter().find(|a| a.class == OverrideClass::RedSignalHold).expect("red hold present");
    let start = red.track(held.id).unwrap().state_at(red.current_step()).unwrap().position();
    assert!(held.states.iter().all(|st| Point2::new(st.x, st.y) == start), "red hold moved while red");

    let mut grid = 0;
    for n_in in 1..=3 {
        for lane in 0..n_in {
            for past in [-4.5, -3.0, -1.0, -0.2, 0.3, 1.0, 2.5, 4.5] {
                let got = classes(&red_approach(n_in, lane, past), &cfg)[&1];
                if lane == 0 {
                    assert_ne!(got, OverrideClass::RedSignalHold, "rightmost of {n_in}, past {past}");
                }
                grid += 1;
            }
        }
    }
    format!("holds fixed for 600 steps, ballistic 0.2 m/step over {moving} steps, {grid} grid cases")
}

fn metric_oracles() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut disagree = 0;
    for _ in 0..10_000 {
        let mut r = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let a = Obb::new(Point2::new(0.0, 0.0), r(-PI, PI), r(0.5, 6.0), r(0.5, 2.5));
        let b = Obb::new(Point2::new(r(-6.0, 6.0), r(-6.0, 6.0)), r(-PI, PI), r(0.5, 6.0), r(0.5, 2.5));
        disagree += (Footprint::Box(a).overlaps(&Footprint::Box(b)) != overlap_oracle(&a, &b)) as usize;
    }
    assert_eq!(disagree, 0, "box overlap disagreements");

    let mut worst_ttc = 0.0f64;
    for _ in 0..300 {
        let h = rng.gen_range(-PI..PI);
        let u = Point2::from_heading(h);
        let f = Body { center: Point2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)), heading: h, speed: rng.gen_range(0.0..30.0), length: rng.gen_range(3.0..6.0), width: rng.gen_range(1.6..2.2) };
        let center = f.center + u * rng.gen_range(6.0..80.0) + u.left_normal() * rng.gen_range(-0.6..0.6);
        let l = Body { center, heading: h, speed: rng.gen_range(0.0..30.0), length: rng.gen_range(3.0..6.0), width: rng.gen_range(1.6..2.2) };
        let got = ttc(&f, &[l]);
        match integrated_ttc(&f, &l, 60.0, 1e-3) {
            Some(te) => {
                assert!((got - te).abs() < 0.1, "ttc {got} vs integrated {te}");
                worst_ttc = worst_ttc.max((got - te).abs());
            }
            None => assert!(got > 60.0, "ttc {got} without contact"),
        }
    }

    let mut worst_edge = 0.0f64;
    for _ in 0..50 {
        let lines = random_lines(&mut rng);
        let edges = RoadEdges::new(&edge_scenario(lines.clone()));
        for _ in 0..400 {
            let p = Point2::new(rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0));
            let err = (edges.signed_distance(p).abs() - brute_distance(&lines, p)).abs();
            assert!(err < 1e-6, "road edge error {err}");
            worst_edge = worst_edge.max(err);
        }
    }

    let cfg = MetricsConfig::default();
    let fx = scoring_fixtures();
    assert!(fx.len() >= 5);
    let mut min_replay = 1.0f64;
    for s in &fx {
        let meta = metrics::evaluate(s, &[replay(s)], &cfg).unwrap().realism_meta.unwrap();
        assert!(meta >= 0.99, "{}: replay meta {meta}", s.id);
        let rs: Vec<Rollout> = (0..4).map(|k| perturbed(s, k, 0.3)).collect();
        let p = metrics::evaluate(s, &rs, &cfg).unwrap().realism_meta.unwrap();
        assert!(meta >= p, "{}: replay {meta} < perturbed {p}", s.id);
        min_replay = min_replay.min(meta);
    }
    format!("0/10000 box disagreements, ttc err {worst_ttc:.3} s, edge err {worst_edge:.1e} m, min replay meta {min_replay:.4} on {} fixtures", fx.len())
}

fn long_horizon() -> String {
    let s = fixtures::grid(120.0, 2).scenario;
    let cfg = RunConfig { horizon_steps: 600, n_rollouts: 4, ..RunConfig::default() };
    let (net, programs) = prepare(&s, &cfg);
    let rs = engine::rollouts(&s, &net, &programs, &cfg);
    let rep = metrics::evaluate(&s, &rs, &cfg.metrics).unwrap();
    assert_eq!(rep.offroad_rate, 0.0, "offroad rate");
    assert!(rep.collision_rate <= 0.01, "collision rate {}", rep.collision_rate);
    format!("{} rollouts x 600 steps, offroad {}, collision {:.4}", rs.len(), rep.offroad_rate, rep.collision_rate)
}

fn export_round_trip() -> String {
    let suite = fixtures::conversion_suite();
    for f in &suite {
        let (net, _, b) = bundle(&f.scenario, 0);
        let ids = |doc: &str, tag: &str| -> Vec<String> { of(&parse(doc).0, tag).iter().map(|e| e.attrs["id"].clone()).collect() };
        assert_eq!(ids(&b.nodes_doc, "node"), net.nodes.iter().map(|n| n.id.to_string()).collect::<Vec<_>>(), "{} nodes", f.name);
        assert_eq!(ids(&b.edges_doc, "edge"), net.edges.iter().map(|e| e.id.to_string()).collect::<Vec<_>>(), "{} edges", f.name);
        let lanes: usize = net.edges.iter().map(|e| e.lanes.len()).sum();
        assert_eq!(of(&parse(&b.edges_doc).0, "lane").len(), lanes, "{} lanes", f.name);
        let conns: Vec<(String, String, String, String)> = of(&parse(&b.connections_doc).0, "connection")
            .iter()
            .map(|e| (e.attrs["from"].clone(), e.attrs["to"].clone(), e.attrs["fromLane"].clone(), e.attrs["toLane"].clone()))
            .collect();
        let want: Vec<(String, String, String, String)> = net
            .connections
            .iter()
            .map(|c| (c.from_edge.to_string(), c.to_edge.to_string(), c.from_lane.to_string(), c.to_lane.to_string()))
            .collect();
        assert_eq!(conns, want, "{} connections", f.name);
        let signalized = net.nodes.iter().filter(|n| n.signalized).count();
        assert_eq!(ids(&b.tls_doc, "tlLogic").len(), signalized, "{} tlLogic", f.name);
    }
    format!("{} fixtures round-trip", suite.len())
}

#[test]
fn primary_criteria() {
    let secs = Duration::from_secs;
    let outcomes = [
        criterion("conversion correctness", Some(secs(5)), conversion_correctness),
        criterion("figure fixtures", None, figure_fixtures),
        criterion("simulator safety", Some(secs(60)), simulator_safety),
        criterion("determinism", None, determinism),
        criterion("parameter sampling", Some(secs(5)), parameter_sampling),
        criterion("signal logic", None, signal_logic),
        criterion("override logic", None, override_logic),
        criterion("metric oracles", None, metric_oracles),
        criterion("long-horizon plumbing", Some(secs(120)), long_horizon),
        criterion("export round-trip", None, export_round_trip),
    ];
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.passed).collect();
    let total: f64 = outcomes.iter().map(|o| o.elapsed.as_secs_f64()).sum();
    println!("{} of {} criteria passed in {total:.1} s", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed: {:?}", failed.iter().map(|o| (o.name, &o.detail)).collect::<Vec<_>>());
}
