//! Oracles and fixtures shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use quick_xml::events::Event;
use quick_xml::Reader;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafsim_core::config::{NetConfig, RunConfig, SignalConfig};
use trafsim_core::demand::Demand;
use trafsim_core::engine::{self, Rollout};
use trafsim_core::export::{export_bundle, ExportBundle};
use trafsim_core::fixtures::{self, four_arms, junction, line, plan_all, FixtureBuilder, JunctionLanes};
use trafsim_core::geom::{Obb, Point2, Polyline};
use trafsim_core::metrics::{future_steps, ground_truth_rollout};
use trafsim_core::net::*;
use trafsim_core::overrides::OverrideClass;
use trafsim_core::scenario::{lane_length, LaneCenter, LaneId, ObjectType, RoadEdge, Scenario, SignalState, TrackId};
use trafsim_core::signal::{estimate_signals, infer_states, SignalProgram};

pub type Programs = BTreeMap<NodeId, SignalProgram>;

pub fn net_cfg() -> NetConfig {
    NetConfig::default()
}

/// Label propagation over the symmetric adjacency relation.
pub fn components_oracle(lanes: &[LaneCenter]) -> BTreeSet<BTreeSet<LaneId>> {
    let ids: Vec<LaneId> = lanes.iter().map(|l| l.id).collect();
    let mut label: HashMap<LaneId, LaneId> = ids.iter().map(|&i| (i, i)).collect();
    loop {
        let mut changed = false;
        for l in lanes {
            for a in l.left_neighbors.iter().chain(&l.right_neighbors) {
                let m = label[&l.id].min(label[&a.neighbor_id]);
                for id in [l.id, a.neighbor_id] {
                    if label[&id] != m {
                        label.insert(id, m);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: HashMap<LaneId, BTreeSet<LaneId>> = HashMap::new();
    for id in ids {
        groups.entry(label[&id]).or_default().insert(id);
    }
    groups.into_values().collect()
}

/// Warshall closure of the candidate-level pattern relation.
pub fn closure_oracle(trunc: &Truncation, cands: &[EdgeCandidate], eps: f64) -> BTreeSet<BTreeSet<usize>> {
    let by_id: HashMap<LaneId, &LaneCenter> = trunc.lanes.iter().map(|l| (l.id, l)).collect();
    let mut lanes: Vec<(usize, Polyline)> = Vec::new();
    for (c, cand) in cands.iter().enumerate() {
        for id in &cand.lanes {
            lanes.push((c, Polyline::new(by_id[id].polyline.clone()).unwrap()));
        }
    }
    let n = cands.len();
    let mut rel = vec![vec![false; n]; n];
    let mut flagged = vec![false; n];
    for i in 0..lanes.len() {
        for j in 0..lanes.len() {
            if i != j && pattern_holds(&lanes[i].1, &lanes[j].1, eps) {
                let (a, b) = (lanes[i].0, lanes[j].0);
                rel[a][b] = true;
                rel[b][a] = true;
                flagged[a] = true;
                flagged[b] = true;
            }
        }
    }
    for (i, row) in rel.iter_mut().enumerate() {
        row[i] = flagged[i];
    }
    for k in 0..n {
        for i in 0..n {
            if rel[i][k] {
                for j in 0..n {
                    if rel[k][j] {
                        rel[i][j] = true;
                    }
                }
            }
        }
    }
    (0..n).filter(|&i| flagged[i]).map(|i| (0..n).filter(|&j| rel[i][j]).collect()).collect()
}

pub fn as_sets(groups: &[Vec<usize>]) -> BTreeSet<BTreeSet<usize>> {
    groups.iter().map(|g| g.iter().copied().collect()).collect()
}

pub fn check_truncation(s: &Scenario) {
    let t = truncate_lane_centers(&s.lane_centers, &net_cfg()).unwrap();
    assert!(misaligned_pairs(&t.lanes, net_cfg().split_eps).is_empty(), "{}", s.id);
    let again = truncate_lane_centers(&t.lanes, &net_cfg()).unwrap();
    assert_eq!(again.lanes, t.lanes, "idempotence on {}", s.id);
    let by_id: HashMap<LaneId, &LaneCenter> = t.lanes.iter().map(|l| (l.id, l)).collect();
    for orig in &s.lane_centers {
        let frags = t.fragments_of(orig.id);
        let total: f64 = frags.iter().map(|f| lane_length(by_id[f])).sum();
        assert!((total - lane_length(orig)).abs() < 1e-9, "length of {} in {}", orig.id, s.id);
        // concatenation keeps every original vertex, in order
        let mut concat: Vec<Point2> = Vec::new();
        for f in &frags {
            for &p in &by_id[f].polyline {
                if concat.last() != Some(&p) {
                    concat.push(p);
                }
            }
        }
        let mut k = 0;
        for p in &concat {
            if k < orig.polyline.len() && *p == orig.polyline[k] {
                k += 1;
            }
        }
        assert_eq!(k, orig.polyline.len(), "vertices of {} in {}", orig.id, s.id);
    }
}

pub fn check_partition(s: &Scenario) {
    let t = truncate_lane_centers(&s.lane_centers, &net_cfg()).unwrap();
    let cands = group_into_edges(&t.lanes).unwrap();
    let got: BTreeSet<BTreeSet<LaneId>> = cands.iter().map(|c| c.lanes.iter().copied().collect()).collect();
    let total: usize = cands.iter().map(|c| c.lanes.len()).sum();
    assert_eq!(total, t.lanes.len(), "disjoint cover on {}", s.id);
    assert_eq!(got, components_oracle(&t.lanes), "components on {}", s.id);
    // right-to-left order by lateral offset
    let by_id: HashMap<LaneId, &LaneCenter> = t.lanes.iter().map(|l| (l.id, l)).collect();
    for c in &cands {
        if c.lanes.len() < 2 {
            continue;
        }
        let reference = Polyline::new(by_id[&c.lanes[0]].polyline.clone()).unwrap();
        let lat: Vec<f64> = c
            .lanes
            .iter()
            .map(|id| {
                let p = Polyline::new(by_id[id].polyline.clone()).unwrap();
                reference.project(p.point_at(p.length() / 2.0)).lateral
            })
            .collect();
        assert!(lat.windows(2).all(|w| w[1] >= w[0] - 1e-6), "order {:?} on {}", lat, s.id);
    }
}

pub fn check_grouping(s: &Scenario) {
    let t = truncate_lane_centers(&s.lane_centers, &net_cfg()).unwrap();
    let cands = group_into_edges(&t.lanes).unwrap();
    let groups = heuristic_groups(&t, &cands, net_cfg().node_eps);
    assert_eq!(as_sets(&groups), closure_oracle(&t, &cands, net_cfg().node_eps), "closure on {}", s.id);
}

pub fn prepare(s: &Scenario, cfg: &RunConfig) -> (Network, Programs) {
    let net = build_network(s, &cfg.net).expect("fixture converts");
    let programs = estimate_signals(&net, s, &cfg.signal, s.history_length + cfg.horizon_steps);
    (net, programs)
}

/// (step, agent a, agent b) for every overlapping pair of valid boxes.
pub fn overlaps(r: &Rollout) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for k in 0..r.horizon {
        let boxes: Vec<Option<Obb>> = r
            .agents
            .iter()
            .map(|a| {
                let s = a.states[k];
                s.valid.then(|| Obb::new(Point2::new(s.x, s.y), s.heading, a.length, a.width))
            })
            .collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if let (Some(a), Some(b)) = (&boxes[i], &boxes[j]) {
                    if a.overlaps(b) {
                        out.push((k, i, j));
                    }
                }
            }
        }
    }
    out
}

pub fn classes(s: &Scenario, cfg: &RunConfig) -> BTreeMap<TrackId, OverrideClass> {
    let (net, programs) = prepare(s, cfg);
    let d = engine::prepare_demand(s, &net, &programs, cfg, cfg.seed);
    d.specs.iter().map(|x| (x.track_id, x.override_class)).collect()
}

/// Stationary vehicle on inbound lane `lane` of a red approach, `past`
/// meters beyond the stop line (front bumper measured from the center).
pub fn red_approach(n_in: usize, lane: usize, past: f64) -> Scenario {
    let mut b = FixtureBuilder::new("red_approach");
    let arms = four_arms(n_in, 1, 60.0);
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 12.0, 11.0, plan_all);
    for &l in &j.inbound[2] {
        b.observe_all(l, SignalState::Red);
    }
    let inbound = j.inbound[2][lane];
    let &(_, _, m, jo, turn) = j.turns_from(2, lane).find(|t| t.2 == 0).unwrap();
    let path = b.path(&[inbound, turn, j.outbound[m][jo]]);
    let line_s = b.path(&[inbound]).length();
    b.vehicle_on(&path, line_s + past, 0.0, 0.0, ObjectType::Vehicle);
    b.build()
}

/// Two-lane road with a kerb-side parked car, a car 12 m off the road and
/// a car crossing the road at right angles.
pub fn roadside() -> Scenario {
    let mut b = FixtureBuilder::new("roadside");
    let r = b.lane(line(Point2::new(0.0, 0.0), Point2::new(300.0, 0.0), 5.0), 13.4);
    let l = b.lane(line(Point2::new(0.0, 3.5), Point2::new(300.0, 3.5), 5.0), 13.4);
    b.adjacent(r, l);
    b.curb_right_of(r);
    b.curb_left_of(l);
    b.vehicle(&[r], 20.0, 10.0);
    b.parked(Point2::new(150.0, -2.3), 0.0);
    b.parked(Point2::new(200.0, -12.0), 0.3);
    // one second of history at 2 m/s ends 1 m right of the right lane
    let cross = Polyline::new(line(Point2::new(250.0, -3.0), Point2::new(250.0, 40.0), 1.0)).unwrap();
    b.vehicle_on(&cross, 0.0, 2.0, 0.0, ObjectType::Vehicle);
    b.build()
}

pub fn agent(r: &Rollout, id: TrackId) -> &engine::AgentRollout {
    r.agents.iter().find(|a| a.id == id).unwrap()
}

pub struct Elem {
    pub name: String,
    pub attrs: BTreeMap<String, String>,
}

/// Every element with its attributes, and the number of comments.
pub fn parse(xml: &str) -> (Vec<Elem>, usize) {
    let mut reader = Reader::from_str(xml);
    let mut out = Vec::new();
    let mut comments = 0;
    loop {
        match reader.read_event().expect("well-formed XML") {
            Event::Start(e) | Event::Empty(e) => {
                let attrs = e
                    .attributes()
                    .map(|a| {
                        let a = a.expect("attribute");
                        (String::from_utf8(a.key.as_ref().to_vec()).unwrap(), a.unescape_value().unwrap().into_owned())
                    })
                    .collect();
                out.push(Elem { name: String::from_utf8(e.name().as_ref().to_vec()).unwrap(), attrs });
            }
            Event::Comment(_) => comments += 1,
            Event::Eof => break,
            _ => {}
        }
    }
    (out, comments)
}

pub fn of<'a>(elems: &'a [Elem], name: &str) -> Vec<&'a Elem> {
    elems.iter().filter(|e| e.name == name).collect()
}

pub fn bundle(s: &Scenario, seed: u64) -> (Network, Demand, ExportBundle) {
    let cfg = RunConfig::default();
    let (net, programs) = prepare(s, &cfg);
    let demand = engine::prepare_demand(s, &net, &programs, &cfg, seed);
    let b = export_bundle(&s.id, &net, &programs, &demand, s.current_step(), s.timestep_s).expect("exports");
    (net, demand, b)
}

pub fn seg_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o = |p: Point2, q: Point2, r: Point2| (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    (d1 * d2 <= 0.0) && (d3 * d4 <= 0.0)
}

/// Dense sampling of each box's interior for containment in the other, plus
/// an exact edge-crossing check for overlaps thinner than the sample grid.
pub fn overlap_oracle(a: &Obb, b: &Obb) -> bool {
    let sample = |p: &Obb, q: &Obb| {
        let (u, v) = p.axes();
        let n = 24;
        (0..=n).any(|i| {
            (0..=n).any(|j| {
                let s = (i as f64 / n as f64 - 0.5) * p.length;
                let t = (j as f64 / n as f64 - 0.5) * p.width;
                q.contains(p.center + u * s + v * t)
            })
        })
    };
    if sample(a, b) || sample(b, a) {
        return true;
    }
    let (ca, cb) = (a.corners(), b.corners());
    (0..4).any(|i| (0..4).any(|j| seg_cross(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4])))
}

pub fn brute_distance(lines: &[Vec<Point2>], p: Point2) -> f64 {
    let mut best = f64::INFINITY;
    for l in lines {
        for w in l.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ab = b - a;
            let t = if ab.dot(ab) == 0.0 { 0.0 } else { ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0) };
            best = best.min(p.dist(a + ab * t));
        }
    }
    best
}

pub fn edge_scenario(polylines: Vec<Vec<Point2>>) -> Scenario {
    let mut s = fixtures::straight_road(1, 50.0);
    s.road_edges = polylines.into_iter().enumerate().map(|(i, polyline)| RoadEdge { id: i as i64, polyline }).collect();
    s
}

/// Five fixtures with moving traffic, plus the road grid.
pub fn scoring_fixtures() -> Vec<Scenario> {
    vec![
        fixtures::single_lane_corridor(10, 500.0),
        fixtures::four_way().0,
        fixtures::tee_junction().0,
        fixtures::roundabout(),
        fixtures::curved_road(),
        fixtures::grid(120.0, 2).scenario,
    ]
}

pub fn replay(s: &Scenario) -> Rollout {
    ground_truth_rollout(s, future_steps(s))
}

pub fn perturbed(s: &Scenario, seed: u64, sigma: f64) -> Rollout {
    let mut r = replay(s);
    r.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for a in &mut r.agents {
        for st in &mut a.states {
            st.x += sigma * rng.gen_range(-1.0..1.0);
            st.y += sigma * rng.gen_range(-1.0..1.0);
            st.heading += 0.1 * sigma * rng.gen_range(-1.0..1.0);
        }
    }
    r
}

pub fn single_lane_junction(name: &str) -> (FixtureBuilder, JunctionLanes) {
    let mut b = FixtureBuilder::new(name);
    let arms = four_arms(1, 1, 60.0);
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 10.0, 11.0, plan_all);
    (b, j)
}

pub fn program(s: &Scenario) -> (Network, SignalProgram) {
    let network = build_network(s, &net_cfg()).unwrap();
    let node = network.nodes.iter().find(|n| n.kind == NodeKind::Junction).unwrap().id;
    let p = infer_states(&network, node, s, &SignalConfig::default());
    (network, p)
}

/// Connections leaving inbound lane `lane` of the junction.
pub fn conns_from(network: &Network, lane: LaneId) -> Vec<ConnId> {
    network
        .connections
        .iter()
        .filter(|c| network.edges[c.from_edge.0].lanes[c.from_lane].source_lane_ids.contains(&lane))
        .map(|c| c.id)
        .collect()
}

/// First contact time of two bodies moving at constant velocity, found by
/// stepping `step` seconds up to `horizon`.
pub fn integrated_ttc(f: &trafsim_core::metrics::Body, l: &trafsim_core::metrics::Body, horizon: f64, step: f64) -> Option<f64> {
    let obb = |b: &trafsim_core::metrics::Body, t: f64| Obb::new(b.center + Point2::from_heading(b.heading) * (b.speed * t), b.heading, b.length, b.width);
    let mut t = 0.0;
    while t <= horizon {
        if obb(f, t).overlaps(&obb(l, t)) {
            return Some(t);
        }
        t += step;
    }
    None
}

/// Random-walk polylines inside roughly 200 m by 200 m.
pub fn random_lines(rng: &mut ChaCha8Rng) -> Vec<Vec<Point2>> {
    (0..rng.gen_range(1..6))
        .map(|_| {
            let mut p = Point2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
            (0..rng.gen_range(2..15))
                .map(|_| {
                    p = p + Point2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
                    p
                })
                .collect()
        })
        .collect()
}

/// Observed-red approach crossed at 8 m/s during the history window; returns
/// the straight-through connection.
pub fn rectification_case() -> (Scenario, Network, SignalProgram, ConnId) {
    let (mut b, j) = single_lane_junction("rectify");
    let lane = j.inbound[0][0];
    b.observe_all(lane, SignalState::Red);
    let &(_, _, m, jo, turn) = j.turns_from(0, 0).find(|t| t.2 == 2).unwrap();
    let path = b.path(&[lane, turn, j.outbound[m][jo]]);
    let speeds: Vec<f64> = (0..b.total_steps).map(|t| 8.0 + 0.05 * t as f64).collect();
    b.scripted(&path, 60.0 - 4.0, &speeds, 0.0, ObjectType::Vehicle);
    let s = b.build();
    let (network, p) = program(&s);
    let out = j.outbound[m][jo];
    let straight = conns_from(&network, lane)
        .into_iter()
        .find(|&c| {
            let conn = network.connection(c);
            network.edges[conn.to_edge.0].lanes[conn.to_lane].source_lane_ids.contains(&out)
        })
        .unwrap();
    (s, network, p, straight)
}
