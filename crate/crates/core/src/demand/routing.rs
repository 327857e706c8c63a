//! Weighted depth-first route inference.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RoutingConfig;
use crate::net::{ConnId, EdgeId, Network};
use crate::rng::{domain, substream};
use crate::scenario::TrackId;

use super::Placement;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub edges: Vec<EdgeId>,
    /// `connections[i]` joins `edges[i]` to `edges[i + 1]`.
    pub connections: Vec<ConnId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessorWeight {
    pub edge: EdgeId,
    /// Connection used to reach `edge`, the one needing fewest lane changes.
    pub connection: ConnId,
    pub lane_changes: usize,
    pub weight: f64,
}

/// Branch weights out of `edge` for an agent on `lane` with `remaining`
/// meters left on the edge: main roads (highest priority among the
/// successors) get `w_main`, the rest `w_side`, and successors needing more
/// lane changes than the remaining length allows get zero.
pub fn successor_weights(network: &Network, edge: EdgeId, lane: usize, remaining: f64, cfg: &RoutingConfig) -> Vec<SuccessorWeight> {
    let mut best: Vec<SuccessorWeight> = Vec::new();
    for c in network.outgoing_from_edge(edge) {
        let usable = network.lane(c.from_edge, c.from_lane).lane_type.is_drivable() && network.lane(c.to_edge, c.to_lane).lane_type.is_drivable();
        if !usable {
            continue;
        }
        let changes = c.from_lane.abs_diff(lane);
        match best.iter_mut().find(|s| s.edge == c.to_edge) {
            Some(s) if changes < s.lane_changes || (changes == s.lane_changes && c.id < s.connection) => {
                s.connection = c.id;
                s.lane_changes = changes;
            }
            Some(_) => {}
            None => best.push(SuccessorWeight { edge: c.to_edge, connection: c.id, lane_changes: changes, weight: 0.0 }),
        }
    }
    let top = best.iter().map(|s| network.edge(s.edge).priority).max().unwrap_or(0);
    for s in &mut best {
        let feasible = s.lane_changes as f64 * cfg.lane_change_distance <= remaining;
        let w = if network.edge(s.edge).priority == top { cfg.w_main } else { cfg.w_side };
        s.weight = if feasible { w } else { 0.0 };
    }
    best.sort_by_key(|s| s.edge);
    best
}

/// Successor order for the search: a weighted random permutation of the
/// positive-weight choices. When every choice is infeasible the ones with
/// the fewest lane changes are kept with equal weight, so the agent is not
/// stranded at a junction.
fn order<R: Rng>(rng: &mut R, mut succ: Vec<SuccessorWeight>) -> Vec<SuccessorWeight> {
    if succ.iter().all(|s| s.weight <= 0.0) {
        let min = succ.iter().map(|s| s.lane_changes).min().unwrap_or(0);
        succ.retain(|s| s.lane_changes == min);
        for s in &mut succ {
            s.weight = 1.0;
        }
    }
    succ.retain(|s| s.weight > 0.0);
    // Efraimidis-Spirakis keys: u^(1/w), largest first
    let mut keyed: Vec<(f64, SuccessorWeight)> = succ.into_iter().map(|s| (rng.gen::<f64>().ln() / s.weight, s)).collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    keyed.into_iter().map(|(_, s)| s).collect()
}

struct Frame {
    edge: EdgeId,
    via: Option<ConnId>,
    options: Vec<SuccessorWeight>,
    next: usize,
}

/// Randomized DFS from the placement edge to a network boundary (an edge
/// with no usable successor) or the depth cap. Edges are never revisited; if
/// the search exhausts without reaching a boundary, the deepest path found is
/// returned.
pub fn infer_route(placement: &Placement, network: &Network, seed: u64, track: TrackId, cfg: &RoutingConfig) -> Route {
    let mut rng = substream(seed, domain::ROUTE, track as u64);
    let (start, lane, remaining, fixed) = match *placement {
        Placement::Lane { edge, lane, offset, .. } => (edge, lane, network.lane(edge, lane).shape.length() - offset, None),
        Placement::Connection { connection, .. } => {
            let c = network.connection(connection);
            (c.from_edge, c.from_lane, 0.0, Some(connection))
        }
        Placement::OffNetwork { .. } => return Route { edges: vec![], connections: vec![] },
    };

    let mut visited: BTreeSet<EdgeId> = BTreeSet::from([start]);
    let first_options = match fixed {
        Some(c) => {
            let conn = network.connection(c);
            vec![SuccessorWeight { edge: conn.to_edge, connection: c, lane_changes: 0, weight: 1.0 }]
        }
        None => order(&mut rng, successor_weights(network, start, lane, remaining, cfg)),
    };
    let mut stack = vec![Frame { edge: start, via: None, options: first_options, next: 0 }];
    let mut deepest: Vec<(EdgeId, Option<ConnId>)> = vec![(start, None)];

    let path_of = |stack: &[Frame]| stack.iter().map(|f| (f.edge, f.via)).collect::<Vec<_>>();
    loop {
        let depth = stack.len();
        let top = stack.last_mut().expect("stack holds the start frame");
        if top.options.is_empty() || depth >= cfg.max_depth {
            deepest = path_of(&stack);
            break;
        }
        if top.next >= top.options.len() {
            if depth > deepest.len() {
                deepest = path_of(&stack);
            }
            stack.pop();
            if stack.is_empty() {
                break;
            }
            continue;
        }
        let choice = top.options[top.next];
        top.next += 1;
        if !visited.insert(choice.edge) {
            continue;
        }
        let entry_lane = network.connection(choice.connection).to_lane;
        let len = network.lane(choice.edge, entry_lane).shape.length();
        let options = order(&mut rng, successor_weights(network, choice.edge, entry_lane, len, cfg));
        stack.push(Frame { edge: choice.edge, via: Some(choice.connection), options, next: 0 });
    }
    Route { edges: deepest.iter().map(|x| x.0).collect(), connections: deepest.iter().filter_map(|x| x.1).collect() }
}
