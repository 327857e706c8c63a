//! Agent specs: sampled behavior, network placement and inferred routes.

mod routing;
pub mod sampling;

use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, RoutingConfig};
use crate::geom::{wrap_angle, Point2};
use crate::net::{ConnId, EdgeId, Network};
use crate::overrides::OverrideClass;
use crate::rng::{domain, substream};
use crate::scenario::{AgentTrack, ObjectType, Scenario, TrackId, TrackState};

pub use routing::{infer_route, successor_weights, Route, SuccessorWeight};
pub use sampling::{sample_with, speed_factor_mean, BehaviorParams, PARAM_BOUNDS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    Lane { edge: EdgeId, lane: usize, offset: f64, lateral: f64 },
    /// Inside a junction, on a connection's internal path.
    Connection { connection: ConnId, offset: f64, lateral: f64 },
    OffNetwork { x: f64, y: f64, heading: f64 },
}

impl Placement {
    pub fn on_network(&self) -> bool {
        !matches!(self, Placement::OffNetwork { .. })
    }

    /// Lane index the agent occupies; connections report their source lane.
    pub fn lane_index(&self, network: &Network) -> Option<usize> {
        match *self {
            Placement::Lane { lane, .. } => Some(lane),
            Placement::Connection { connection, .. } => Some(network.connection(connection).from_lane),
            Placement::OffNetwork { .. } => None,
        }
    }
}

/// Which agents the engine drives and which replay their history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Engine,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub track_id: TrackId,
    pub object_type: ObjectType,
    pub control: Control,
    pub params: Option<BehaviorParams>,
    pub route: Option<Route>,
    pub placement: Placement,
    pub override_class: OverrideClass,
    pub initial_speed: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Demand {
    pub specs: Vec<AgentSpec>,
    pub warnings: Vec<String>,
}

/// Nearest aligned network lane or connection; off-network past the
/// placement tolerance.
pub fn place_agent(state: &TrackState, network: &Network, cfg: &RoutingConfig) -> Placement {
    let p = state.position();
    let max_dh = cfg.max_heading_diff_deg.to_radians();
    let mut best: Option<(f64, Placement)> = None;
    let mut consider = |d: f64, pl: Placement| {
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, pl));
        }
    };
    for edge in &network.edges {
        for (k, lane) in edge.lanes.iter().enumerate() {
            let pr = lane.shape.project(p);
            if wrap_angle(state.heading - lane.shape.heading_at(pr.s)).abs() < max_dh {
                consider(pr.distance, Placement::Lane { edge: edge.id, lane: k, offset: pr.s, lateral: pr.lateral });
            }
        }
    }
    for c in &network.connections {
        let pr = c.shape.project(p);
        // ties go to edge lanes, which were offered first
        if wrap_angle(state.heading - c.shape.heading_at(pr.s)).abs() < max_dh {
            consider(pr.distance, Placement::Connection { connection: c.id, offset: pr.s, lateral: pr.lateral });
        }
    }
    match best {
        Some((d, pl)) if d <= cfg.placement_tolerance => pl,
        _ => Placement::OffNetwork { x: p.x, y: p.y, heading: state.heading },
    }
}

/// Distance from `p` to the nearest lane or connection centerline.
pub fn nearest_lane_distance(network: &Network, p: Point2) -> f64 {
    let lanes = network.edges.iter().flat_map(|e| e.lanes.iter().map(|l| &l.shape));
    let conns = network.connections.iter().map(|c| &c.shape);
    lanes.chain(conns).map(|s| s.project(p).distance).fold(f64::INFINITY, f64::min)
}

fn speed_limit_at(network: &Network, placement: &Placement, p: Point2) -> f64 {
    match *placement {
        Placement::Lane { edge, lane, .. } => network.lane(edge, lane).speed_limit,
        Placement::Connection { connection, .. } => {
            let c = network.connection(connection);
            network.lane(c.from_edge, c.from_lane).speed_limit
        }
        Placement::OffNetwork { .. } => network
            .edges
            .iter()
            .flat_map(|e| e.lanes.iter())
            .map(|l| (l.shape.project(p).distance, l.speed_limit))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map_or(0.0, |x| x.1),
    }
}

/// Mean speed over the valid history states.
pub fn history_speed(track: &AgentTrack, history_length: usize) -> f64 {
    let (sum, n) = track.history(history_length).fold((0.0, 0usize), |(s, n), st| (s + st.speed(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Parameters for one track from its own substream of `seed`.
pub fn sample_params(seed: u64, track: &AgentTrack, history_length: usize, v_limit: f64, engine: &EngineConfig) -> (BehaviorParams, Option<String>) {
    let mut rng = substream(seed, domain::PARAMS, track.id as u64);
    let v_hist = history_speed(track, history_length);
    let (mean, warning) = match speed_factor_mean(v_hist, v_limit) {
        Some(m) => (m, None),
        None => (1.0, Some(format!("track {}: speed limit {v_limit} unusable, speedFactor mean set to 1.0", track.id))),
    };
    (sample_with(&mut rng, mean, engine.jm_ignore_keep_clear_time), warning)
}

/// One spec per track valid at the current step. Vehicles get parameters,
/// placement and a route; pedestrians and cyclists replay.
pub fn build_demand(scenario: &Scenario, network: &Network, seed: u64, routing: &RoutingConfig, engine: &EngineConfig) -> Demand {
    let now = scenario.current_step();
    let mut specs = Vec::new();
    let mut warnings = Vec::new();
    for track in &scenario.tracks {
        let Some(state) = track.state_at(now) else { continue };
        let p = state.position();
        if track.object_type != ObjectType::Vehicle {
            specs.push(AgentSpec {
                track_id: track.id,
                object_type: track.object_type,
                control: Control::Replay,
                params: None,
                route: None,
                placement: Placement::OffNetwork { x: p.x, y: p.y, heading: state.heading },
                override_class: OverrideClass::Normal,
                initial_speed: state.speed(),
                length: state.length,
                width: state.width,
            });
            continue;
        }
        let placement = place_agent(state, network, routing);
        let (params, warning) = sample_params(seed, track, scenario.history_length, speed_limit_at(network, &placement, p), engine);
        warnings.extend(warning);
        let route = placement.on_network().then(|| infer_route(&placement, network, seed, track.id, routing));
        specs.push(AgentSpec {
            track_id: track.id,
            object_type: track.object_type,
            control: Control::Engine,
            params: Some(params),
            route,
            placement,
            override_class: OverrideClass::Normal,
            initial_speed: state.speed(),
            length: state.length,
            width: state.width,
        });
    }
    Demand { specs, warnings }
}
