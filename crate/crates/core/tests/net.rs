use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafsim_core::config::NetConfig;
use trafsim_core::fixtures::{self, FixtureBuilder};
use trafsim_core::geom::Point2;
use trafsim_core::net::*;
use trafsim_core::scenario::{LaneId, Scenario};

mod common;
use common::*;

fn cfg() -> NetConfig {
    NetConfig::default()
}

/// Lanes between random lattice points, so that starts and ends coincide
/// often and diverge/merge patterns are plentiful.
fn lattice_scene(seed: u64, n: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = FixtureBuilder::new("lattice");
    let pt = |rng: &mut ChaCha8Rng| {
        let x = rng.gen_range(0..6) as f64 * 12.0;
        let y = rng.gen_range(0..6) as f64 * 12.0;
        let jitter = if rng.gen_bool(0.3) { rng.gen_range(-0.7..0.7) } else { 0.0 };
        Point2::new(x + jitter, y)
    };
    let mut made = 0;
    while made < n {
        let a = pt(&mut rng);
        let c = pt(&mut rng);
        if a.dist(c) < 5.0 {
            continue;
        }
        b.lane(fixtures::line(a, c, 3.0), 10.0);
        made += 1;
    }
    b.build()
}

#[test]
fn suite_truncation_partition_grouping() {
    for f in fixtures::conversion_suite() {
        check_truncation(&f.scenario);
        check_partition(&f.scenario);
        check_grouping(&f.scenario);
        let net = build_network(&f.scenario, &cfg()).unwrap();
        assert!(net.check_well_formed(cfg().node_eps).is_empty(), "{}: {:?}", f.name, net.check_well_formed(1.0));
        assert!(lane_coverage(&f.scenario, &net, 2.0) >= 0.99, "{}", f.name);
    }
}

#[test]
fn corridor_splits_four_ways() {
    let s = fixtures::fig2_corridor();
    let t = truncate_lane_centers(&s.lane_centers, &cfg()).unwrap();
    assert_eq!(t.fragments_of(1).len(), 4);
    assert_eq!(t.lanes.len(), 18);
    let cands = group_into_edges(&t.lanes).unwrap();
    assert_eq!(cands.len(), 4);
    let sizes: Vec<usize> = cands.iter().map(|c| c.lanes.len()).collect();
    assert_eq!(sizes.iter().sum::<usize>(), 18);
    let net = build_network(&s, &cfg()).unwrap();
    assert_eq!(net.edges.len(), 4);
    assert!(net.nodes.iter().all(|n| n.kind == NodeKind::Endpoint));
}

#[test]
fn intersection_lanes_share_one_node() {
    let s = fixtures::fig3_intersection();
    let (net, art) = build_network_with_artifacts(&s, &cfg()).unwrap();
    let member: HashMap<LaneId, usize> = art
        .candidates
        .iter()
        .enumerate()
        .flat_map(|(c, cand)| cand.lanes.iter().map(move |&l| (l, c)))
        .collect();
    let group_of = |lane: LaneId| art.topology.groups.iter().position(|g| g.contains(&member[&lane]));
    let g = group_of(fixtures::FIG3_TURNS[0]).expect("c1 grouped");
    for lane in fixtures::FIG3_TURNS {
        assert_eq!(group_of(lane), Some(g), "lane {lane}");
    }
    assert_eq!(art.topology.groups.len(), 1);
    let junctions: Vec<&Node> = net.nodes.iter().filter(|n| n.kind != NodeKind::Endpoint).collect();
    assert_eq!(junctions.len(), 1);
    assert_eq!(junctions[0].connections.len(), 6);
    let covered: BTreeSet<LaneId> = net.connections.iter().flat_map(|c| c.source_lane_ids.iter().copied()).collect();
    assert!(fixtures::FIG3_TURNS.iter().all(|l| covered.contains(l)));
}

#[test]
fn aligned_input_is_unchanged() {
    let s = fixtures::straight_road(3, 120.0);
    let t = truncate_lane_centers(&s.lane_centers, &cfg()).unwrap();
    assert_eq!(t.lanes, s.lane_centers);
}

#[test]
fn straight_two_lane_road() {
    let s = fixtures::straight_road(2, 200.0);
    let net = build_network(&s, &cfg()).unwrap();
    assert_eq!(net.edges.len(), 1);
    assert_eq!(net.edges[0].lanes.len(), 2);
    assert_eq!(net.nodes.len(), 2);
    assert!(net.nodes.iter().all(|n| n.kind == NodeKind::Endpoint));
    assert!(net.connections.is_empty());
}

#[test]
fn collinear_edges_join_at_endpoint_node() {
    let s = fixtures::collinear_segments();
    let (net, art) = build_network_with_artifacts(&s, &cfg()).unwrap();
    assert!(art.topology.groups.is_empty());
    assert_eq!(net.edges.len(), 2);
    assert_eq!(net.nodes.len(), 3);
    assert_eq!(net.edges[0].to_node, net.edges[1].from_node);
    assert_eq!(net.connections.len(), 1);
    assert_eq!(net.node(net.connections[0].via_node).kind, NodeKind::Endpoint);
}

#[test]
fn four_way_topology() {
    let (s, _) = fixtures::four_way();
    let net = build_network(&s, &cfg()).unwrap();
    let approach = net.edges.iter().filter(|e| e.lanes.len() == 2).count();
    let departure = net.edges.iter().filter(|e| e.lanes.len() == 1).count();
    assert_eq!((approach, departure), (4, 4));
    let junctions: Vec<&Node> = net.nodes.iter().filter(|n| n.kind == NodeKind::Junction).collect();
    assert_eq!(junctions.len(), 1);
    assert_eq!(net.connections.len(), 12);
    assert!(net.connections.iter().all(|c| c.via_node == junctions[0].id));
    let count = |m: Movement| net.connections.iter().filter(|c| c.movement == m).count();
    assert_eq!((count(Movement::Straight), count(Movement::Left), count(Movement::Right)), (4, 4, 4));
}

#[test]
fn semantics_speed_stop_and_heads() {
    let s = fixtures::straight_road(1, 100.0);
    let net = build_network(&s, &cfg()).unwrap();
    assert_eq!(net.edges[0].speed_limit, 13.4);
    assert_eq!(net.edges[0].lanes[0].width, 3.5);

    let (s, j) = fixtures::four_way_all_stop();
    let net = build_network(&s, &cfg()).unwrap();
    let node = net.nodes.iter().find(|n| n.kind == NodeKind::Junction).unwrap();
    assert_eq!(node.stop_controlled.len(), node.connections.len());
    assert!(net.connections.iter().all(|c| c.stop_controlled));
    assert_eq!(j.inbound.len(), 4);

    let (mut s, _) = fixtures::four_way_signalized();
    let heads: BTreeSet<LaneId> = s.signal_observations.iter().map(|o| o.lane_id).collect();
    let outbound = s.lane_centers.iter().find(|l| !heads.contains(&l.id) && l.exit_ids.is_empty()).unwrap().id;
    let mut stray = s.signal_observations[0].clone();
    stray.lane_id = outbound;
    s.signal_observations.push(stray);
    let net = build_network(&s, &cfg()).unwrap();
    let node = net.nodes.iter().find(|n| n.kind == NodeKind::Junction).unwrap();
    assert!(node.signalized);
    assert_eq!(node.signal_heads.len(), heads.len());
    assert!(net.warnings.iter().any(|w| w.contains(&format!("lane {outbound}"))));
}

#[test]
fn conversion_is_deterministic() {
    for f in fixtures::conversion_suite() {
        let a = serde_json::to_string(&build_network(&f.scenario, &cfg()).unwrap()).unwrap();
        let b = serde_json::to_string(&build_network(&f.scenario, &cfg()).unwrap()).unwrap();
        assert_eq!(a, b, "{}", f.name);
    }
}

#[test]
fn adjacency_cycle_reports_stage() {
    let mut s = fixtures::straight_road(2, 50.0);
    let adj = s.lane_centers[0].left_neighbors[0].clone();
    let mut back = adj.clone();
    back.neighbor_id = s.lane_centers[0].id;
    s.lane_centers[1].left_neighbors.push(back);
    let err = build_network(&s, &cfg()).unwrap_err();
    assert_eq!(err.stage, Stage::Group);
}

#[test]
fn split_guard_trips() {
    let s = fixtures::fig2_corridor();
    let tight = NetConfig { max_split_rounds: 0, ..cfg() };
    match truncate_lane_centers(&s.lane_centers, &tight) {
        Err(ConversionError::SplitNonTermination { lane_ids }) => assert!(lane_ids.contains(&10)),
        other => panic!("expected guard error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_corridor_properties(seed in 0u64..10_000, rows in 2usize..10) {
        let s = fixtures::random_corridor(seed, rows, 160.0);
        check_truncation(&s);
        check_partition(&s);
        check_grouping(&s);
    }

    #[test]
    fn lattice_grouping_matches_closure(seed in 0u64..10_000, n in 5usize..150) {
        let s = lattice_scene(seed, n);
        check_grouping(&s);
        let net = build_network(&s, &cfg()).unwrap();
        prop_assert!(net.check_well_formed(cfg().node_eps).is_empty());
    }
}
