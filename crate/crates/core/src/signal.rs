//! Signal programs for signalized nodes: observations first, then vehicle
//! behavior, then carry-forward; after the history window every movement
//! holds its last state.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SignalConfig;
use crate::geom::{segment_intersection, wrap_angle, Point2};
use crate::net::{ConnId, Network, NodeId};
use crate::scenario::{LaneId, ObjectType, Scenario, SignalState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightState {
    Red,
    Yellow,
    Green,
}

impl LightState {
    pub fn from_observed(s: SignalState) -> Option<LightState> {
        match s {
            SignalState::Red => Some(LightState::Red),
            SignalState::Yellow => Some(LightState::Yellow),
            SignalState::Green => Some(LightState::Green),
            SignalState::Unknown => None,
        }
    }

    /// Single-character state code used in exported programs.
    pub fn code(self) -> char {
        match self {
            LightState::Red => 'r',
            LightState::Yellow => 'y',
            LightState::Green => 'G',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalProgram {
    pub node_id: NodeId,
    /// Column order of `states`.
    pub connections: Vec<ConnId>,
    /// `states[t][k]` is the state of `connections[k]` at step `t`.
    pub states: Vec<Vec<LightState>>,
    pub history_length: usize,
    pub extended_to: usize,
    /// Connections whose opening state came from the red default rather than
    /// any observation or behavioral cue.
    pub defaulted: Vec<ConnId>,
    pub warnings: Vec<String>,
}

impl SignalProgram {
    /// State at step `t`; steps past the end hold the last state.
    pub fn state(&self, t: usize, conn: ConnId) -> Option<LightState> {
        let k = self.connections.iter().position(|&c| c == conn)?;
        let row = self.states.get(t).or_else(|| self.states.last())?;
        Some(row[k])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Nodes with at least one attached signal head.
pub fn identify_signalized_nodes(network: &Network) -> BTreeSet<NodeId> {
    network.nodes.iter().filter(|n| !n.signal_heads.is_empty()).map(|n| n.id).collect()
}

struct Approach {
    stop: Point2,
    tangent: Point2,
    heading: f64,
}

impl Approach {
    /// (along, |lateral|) of a point relative to the stop point.
    fn frame(&self, p: Point2) -> (f64, f64) {
        let d = p - self.stop;
        (d.dot(self.tangent), d.cross(self.tangent).abs())
    }
}

#[derive(Clone, Copy)]
struct Kin {
    pos: Point2,
    heading: f64,
    speed: f64,
}

/// Applies the per-step cascade for one node over the history window.
pub fn infer_states(network: &Network, node: NodeId, scenario: &Scenario, cfg: &SignalConfig) -> SignalProgram {
    let n = network.node(node);
    let conns: Vec<ConnId> = n.connections.clone();
    let h = scenario.history_length;
    let dt = scenario.timestep_s;
    let mut warnings = Vec::new();

    let approaches: Vec<Approach> = conns
        .iter()
        .map(|&c| {
            let conn = network.connection(c);
            let lane = network.lane(conn.from_edge, conn.from_lane);
            let heading = lane.shape.end_heading();
            Approach { stop: conn.shape.first(), tangent: Point2::from_heading(heading), heading }
        })
        .collect();

    // observed[t][k]
    let mut obs_map: HashMap<(LaneId, usize), LightState> = HashMap::new();
    for o in &scenario.signal_observations {
        if let Some(s) = LightState::from_observed(o.state) {
            obs_map.entry((o.lane_id, o.time_index)).or_insert(s);
        }
    }
    let heads_of: Vec<Vec<LaneId>> = conns
        .iter()
        .map(|c| n.signal_heads.iter().filter(|(_, cs)| cs.contains(c)).map(|(&l, _)| l).collect())
        .collect();
    let mut observed: Vec<Vec<Option<LightState>>> = vec![vec![None; conns.len()]; h];
    for (t, row) in observed.iter_mut().enumerate() {
        for (k, heads) in heads_of.iter().enumerate() {
            row[k] = heads.iter().find_map(|&l| obs_map.get(&(l, t)).copied());
        }
    }

    // Vehicle kinematics inside the history window.
    let tracks: Vec<Vec<Option<Kin>>> = scenario
        .tracks
        .iter()
        .filter(|t| t.object_type == ObjectType::Vehicle)
        .map(|tr| {
            (0..h)
                .map(|t| tr.state_at(t).map(|s| Kin { pos: s.position(), heading: s.heading, speed: s.speed() }))
                .collect()
        })
        .collect();

    let aligned = |a: &Approach, k: &Kin| wrap_angle(k.heading - a.heading).abs() < std::f64::consts::FRAC_PI_3;
    let mut green_ev = vec![vec![false; conns.len()]; h];
    let mut red_ev = vec![vec![false; conns.len()]; h];

    // Which connection a vehicle ends up on: among connections starting at
    // the crossed stop point, the one whose shape is closest at the latest
    // history state.
    let pick = |k0: usize, latest: Point2| -> usize {
        let stop = approaches[k0].stop;
        let mut best = (f64::INFINITY, k0);
        for (k, a) in approaches.iter().enumerate() {
            if a.stop.dist(stop) > 0.5 {
                continue;
            }
            let d = network.connection(conns[k]).shape.project(latest).distance;
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    };

    for states in &tracks {
        let latest = states.iter().rev().flatten().next().map(|k| k.pos);
        let Some(latest) = latest else { continue };
        let mut crossings: Vec<(usize, usize, bool)> = Vec::new();
        for t in 1..h {
            let (Some(prev), Some(cur)) = (states[t - 1], states[t]) else { continue };
            for (k, a) in approaches.iter().enumerate() {
                let (s0, lat0) = a.frame(prev.pos);
                let (s1, _) = a.frame(cur.pos);
                if s0 < 0.0 && s1 >= 0.0 && lat0 <= cfg.lateral_tolerance && aligned(a, &prev) {
                    let accel = (cur.speed - prev.speed) / dt;
                    let fast = cur.speed >= cfg.v_go && accel >= cfg.min_go_accel;
                    crossings.push((t, pick(k, latest), fast));
                    break;
                }
            }
        }
        for &(t, k, fast) in &crossings {
            if fast {
                green_ev[t][k] = true;
            }
        }
        // A vehicle standing at the line that pulls away and later crosses
        // marks the onset of green for its movement.
        for t in 1..h {
            let (Some(prev), Some(cur)) = (states[t - 1], states[t]) else { continue };
            if prev.speed >= cfg.stopped_speed || cur.speed < cfg.stopped_speed || cur.speed <= prev.speed {
                continue;
            }
            for (k, a) in approaches.iter().enumerate() {
                let (s, lat) = a.frame(prev.pos);
                if s >= -cfg.d_stopline && s < 0.0 && lat <= cfg.lateral_tolerance && aligned(a, &prev) {
                    let target = crossings.iter().find(|c| c.0 >= t).map(|c| c.1).or_else(|| {
                        let moved = states[t..].iter().flatten().last().map(|k| k.pos.dist(prev.pos)).unwrap_or(0.0);
                        (moved >= 1.0).then(|| pick(k, latest))
                    });
                    if let Some(target) = target {
                        green_ev[t][target] = true;
                    }
                    break;
                }
            }
        }
    }

    // A stopped lead vehicle just before the stop point implies red.
    for t in 0..h {
        for (k, a) in approaches.iter().enumerate() {
            let mut lead: Option<(f64, Kin)> = None;
            for states in &tracks {
                let Some(kin) = states[t] else { continue };
                let (s, lat) = a.frame(kin.pos);
                if s >= -cfg.d_stopline && s < 0.0 && lat <= cfg.lateral_tolerance && aligned(a, &kin)
                    && lead.is_none_or(|(ls, _)| s > ls) {
                        lead = Some((s, kin));
                    }
            }
            if let Some((_, kin)) = lead {
                if kin.speed < cfg.stopped_speed {
                    red_ev[t][k] = true;
                }
            }
        }
    }

    // Rectify observed-red runs contradicted by green evidence.
    let mut effective_obs = observed.clone();
    let mut rectified = vec![vec![false; conns.len()]; h];
    for k in 0..conns.len() {
        let mut t = 0;
        while t < h {
            if observed[t][k] != Some(LightState::Red) {
                t += 1;
                continue;
            }
            let start = t;
            while t < h && observed[t][k] == Some(LightState::Red) {
                t += 1;
            }
            if (start..t).any(|u| green_ev[u][k]) {
                for u in start..t {
                    effective_obs[u][k] = Some(LightState::Green);
                    rectified[u][k] = true;
                }
                warnings.push(format!("{}: observed red over steps {start}..{t} rectified to green", conns[k]));
            }
        }
    }

    let mut states: Vec<Vec<LightState>> = Vec::with_capacity(h);
    let mut inferred = vec![vec![false; conns.len()]; h];
    let mut defaulted = Vec::new();
    for t in 0..h {
        let mut row = Vec::with_capacity(conns.len());
        for k in 0..conns.len() {
            let s = if let Some(s) = effective_obs[t][k] {
                inferred[t][k] = rectified[t][k];
                s
            } else if green_ev[t][k] {
                inferred[t][k] = true;
                LightState::Green
            } else if red_ev[t][k] {
                inferred[t][k] = true;
                LightState::Red
            } else if t == 0 {
                defaulted.push(conns[k]);
                inferred[t][k] = true;
                LightState::Red
            } else {
                inferred[t][k] = inferred[t - 1][k];
                states[t - 1][k]
            };
            row.push(s);
        }
        states.push(row);
    }

    // Crossing movements may not both be green; an observed green outranks an
    // inferred one, and two observed greens are kept with a warning.
    let conflicts = crossing_pairs(network, &conns);
    let mut warned: BTreeSet<(usize, usize)> = BTreeSet::new();
    for t in 0..h {
        for &(a, b) in &conflicts {
            if states[t][a] != LightState::Green || states[t][b] != LightState::Green {
                continue;
            }
            match (inferred[t][a], inferred[t][b]) {
                (false, true) => states[t][b] = LightState::Red,
                (true, false) => states[t][a] = LightState::Red,
                (false, false) => {
                    if warned.insert((a, b)) {
                        warnings.push(format!("observed greens on crossing movements {} and {}", conns[a], conns[b]));
                    }
                }
                (true, true) => {}
            }
        }
    }

    SignalProgram { node_id: node, connections: conns, states, history_length: h, extended_to: h, defaulted, warnings }
}

/// Index pairs of connections from different approaches whose shapes cross.
fn crossing_pairs(network: &Network, conns: &[ConnId]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..conns.len() {
        for b in a + 1..conns.len() {
            let ca = network.connection(conns[a]);
            let cb = network.connection(conns[b]);
            if ca.from_edge == cb.from_edge || (ca.to_edge == cb.to_edge && ca.to_lane == cb.to_lane) {
                continue;
            }
            let pa = ca.shape.points();
            let pb = cb.shape.points();
            let hit = pa.windows(2).any(|s| {
                pb.windows(2).any(|r| {
                    segment_intersection(s[0], s[1], r[0], r[1]).is_some_and(|(u, v)| u > 1e-6 && u < 1.0 - 1e-6 && v > 1e-6 && v < 1.0 - 1e-6)
                })
            });
            if hit {
                out.push((a, b));
            }
        }
    }
    out
}

/// Holds each movement's last state until `total_steps`.
pub fn extend_states(mut program: SignalProgram, total_steps: usize) -> SignalProgram {
    if let Some(last) = program.states.last().cloned() {
        while program.states.len() < total_steps {
            program.states.push(last.clone());
        }
    }
    program.extended_to = program.extended_to.max(total_steps);
    program
}

/// Builds and extends programs for every signalized node.
pub fn estimate_signals(network: &Network, scenario: &Scenario, cfg: &SignalConfig, total_steps: usize) -> BTreeMap<NodeId, SignalProgram> {
    let nodes: Vec<NodeId> = identify_signalized_nodes(network).into_iter().collect();
    nodes
        .par_iter()
        .map(|&id| (id, extend_states(infer_states(network, id, scenario, cfg), total_steps)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}
