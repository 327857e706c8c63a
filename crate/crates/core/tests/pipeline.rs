use std::fs;

use proptest::prelude::*;
use trafsim_core::config::RunConfig;
use trafsim_core::engine::io::RolloutFormat;
use trafsim_core::fixtures::{conversion_suite, four_way_signalized, single_lane_corridor};
use trafsim_core::metrics::{ground_truth_rollout, MetricsReport};
use trafsim_core::pipeline::{batch, convert_scenario, discover, evaluate_scenario, load, load_rollouts, simulate_scenario};
use trafsim_core::report::{aggregate, aggregate_csv, histogram_svg, load_reports, series, write_report_artifacts};

fn small_cfg(n: usize) -> RunConfig {
    RunConfig { n_rollouts: n, ..RunConfig::default() }
}

#[test]
fn scenario_json_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    for named in conversion_suite() {
        let p = tmp.path().join("s.json");
        fs::write(&p, serde_json::to_string(&named.scenario).unwrap()).unwrap();
        assert_eq!(load(&p).unwrap(), named.scenario, "{}", named.name);
    }
}

#[test]
fn discover_sorts_and_rejects_empty_input() {
    let tmp = tempfile::tempdir().unwrap();
    for n in ["b.json", "a.json", "notes.txt"] {
        fs::write(tmp.path().join(n), "{}").unwrap();
    }
    let found = discover(tmp.path()).unwrap();
    let names: Vec<_> = found.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["a.json", "b.json"]);
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(discover(&empty).is_err());
    assert!(discover(&tmp.path().join("missing")).is_err());
}

#[test]
fn batch_keeps_order_and_isolates_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, named) in conversion_suite().into_iter().take(4).enumerate() {
        let p = tmp.path().join(format!("{i}.json"));
        fs::write(&p, serde_json::to_string(&named.scenario).unwrap()).unwrap();
        paths.push(p);
    }
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "[]").unwrap();
    paths.insert(2, bad);
    let out = tmp.path().join("out");
    let cfg = RunConfig::default();
    let run = |w| batch(&paths, w, |p| convert_scenario(&load(p)?, &cfg, &out).map(|r| r.scenario_id));
    let one = run(1);
    let eight = run(8);
    assert_eq!(one.len(), 5);
    assert!(one[2].result.is_err());
    assert_eq!(one.iter().filter(|o| o.result.is_ok()).count(), 4);
    for (a, b) in one.iter().zip(&eight) {
        assert_eq!(a.source, b.source);
        assert_eq!(a.result, b.result);
    }
}

#[test]
fn conversion_report_counts_match_network() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = four_way_signalized().0;
    let cfg = RunConfig::default();
    let rep = convert_scenario(&sc, &cfg, tmp.path()).unwrap();
    let net = trafsim_core::build_network(&sc, &cfg.net).unwrap();
    assert_eq!(rep.edges, net.edges.len());
    assert_eq!(rep.nodes, net.nodes.len());
    assert_eq!(rep.connections, net.connections.len());
    assert!(rep.signalized_nodes >= 1);
    assert_eq!(rep.files.len(), 6);
    assert!(rep.coverage_ratio >= 0.99);
}

#[test]
fn simulate_then_evaluate_round_trips_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = single_lane_corridor(4, 300.0);
    let cfg = small_cfg(3);
    for format in [RolloutFormat::Csv, RolloutFormat::Binary] {
        let out = tmp.path().join(format.extension());
        let rec = simulate_scenario(&sc, &cfg, &out, format).unwrap();
        assert_eq!(rec.seeds, vec![0, 1, 2]);
        let map = load_rollouts(&out).unwrap();
        let prep = trafsim_core::pipeline::prepare(&sc, &cfg).unwrap();
        let direct = trafsim_core::engine::rollouts(&sc, &prep.network, &prep.programs, &cfg);
        assert_eq!(map[&sc.id].len(), 3);
        for (a, b) in map[&sc.id].iter().zip(&direct) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.agents.len(), b.agents.len());
            for (x, y) in a.agents.iter().zip(&b.agents) {
                assert_eq!(x.states, y.states);
            }
        }
        let rep = evaluate_scenario(&sc, &map, &cfg, &out.join("reports")).unwrap();
        assert_eq!(rep.n_rollouts, 3);
        assert!(out.join("reports").join(format!("{}.report.json", sc.id)).is_file());
    }
}

#[test]
fn evaluate_names_missing_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = single_lane_corridor(3, 300.0);
    let mut map = std::collections::BTreeMap::new();
    map.insert("other_scene".to_string(), vec![ground_truth_rollout(&sc, 80)]);
    let err = evaluate_scenario(&sc, &map, &RunConfig::default(), tmp.path()).unwrap_err().to_string();
    assert!(err.contains(&sc.id) && err.contains("other_scene"), "{err}");
}

fn sample_reports(n: usize) -> Vec<MetricsReport> {
    let sc = single_lane_corridor(4, 300.0);
    let gt = ground_truth_rollout(&sc, 80);
    let base = trafsim_core::metrics::evaluate(&sc, &[gt], &Default::default()).unwrap();
    (0..n)
        .map(|i| {
            let mut r = base.clone();
            r.scenario_id = format!("scene_{i}");
            r.realism_meta = Some(0.05 + 0.9 * i as f64 / n.max(1) as f64);
            r.collision_rate = (i % 3) as f64 / 10.0;
            if i % 2 == 1 {
                r.groups.map = None;
            }
            r
        })
        .collect()
}

#[test]
fn aggregate_means_equal_recomputed_means() {
    let reports = sample_reports(7);
    let agg = aggregate(&reports);
    assert_eq!(agg.n_reports, 7);
    let realism: f64 = reports.iter().map(|r| r.realism_meta.unwrap()).sum::<f64>() / 7.0;
    let map: Vec<f64> = reports.iter().filter_map(|r| r.groups.map).collect();
    let lookup = |n: &str| agg.means.iter().find(|m| m.0 == n).unwrap().1;
    assert!((lookup("realism_meta").unwrap() - realism).abs() < 1e-12);
    assert!((lookup("map").unwrap() - map.iter().sum::<f64>() / map.len() as f64).abs() < 1e-12);
    let csv = aggregate_csv(&agg);
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("n_reports,mean_realism_meta,"));
}

#[test]
fn histogram_is_deterministic_and_labelled() {
    let values = [0.0, 0.05, 0.15, 0.5, 0.99, 1.0, 1.0];
    let svg = histogram_svg("x", &values);
    assert_eq!(svg, histogram_svg("x", &values));
    assert!(svg.contains("(n=7)"));
    assert_eq!(svg.matches("fill=\"#4878a8\"").count(), 10);
    let empty = histogram_svg("none", &[]);
    assert!(empty.contains("(n=0)") && empty.ends_with("</svg>\n"));
}

#[test]
fn report_artifacts_cover_every_series() {
    let tmp = tempfile::tempdir().unwrap();
    let reports = sample_reports(3);
    for r in &reports {
        trafsim_core::metrics::write_report(&tmp.path().join(format!("{}.report.json", r.scenario_id)), r).unwrap();
    }
    let loaded = load_reports(tmp.path()).unwrap();
    assert_eq!(loaded, reports);
    let out = tmp.path().join("out");
    let files = write_report_artifacts(&loaded, &out).unwrap();
    assert_eq!(files.len(), 2 + series(&loaded).len());
    assert!(load_reports(&out).is_err());
}

fn svg_bars(svg: &str) -> Result<usize, quick_xml::Error> {
    let mut reader = quick_xml::Reader::from_str(svg);
    let mut bars = 0;
    loop {
        match reader.read_event()? {
            quick_xml::events::Event::Empty(e) if e.name().as_ref() == b"rect" => {
                bars += e.attributes().flatten().any(|a| a.key.as_ref() == b"x") as usize;
            }
            quick_xml::events::Event::Eof => return Ok(bars),
            _ => {}
        }
    }
}

proptest! {
    #[test]
    fn histogram_is_well_formed(values in proptest::collection::vec(0.0f64..3.0, 0..50)) {
        let svg = histogram_svg("p", &values);
        prop_assert_eq!(svg_bars(&svg).unwrap(), 10);
        let n = format!("(n={})", values.len());
        prop_assert!(svg.contains(&n));
    }
}
