//! Override classes for agents the car-following engine cannot represent:
//! red-light waiters, parked vehicles and agents off the network.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::OverrideThresholds;
use crate::demand::{nearest_lane_distance, AgentSpec, Control, Placement};
use crate::geom::{wrap_angle, Point2, SegmentIndex};
use crate::net::{ConnId, Network, NodeId};
use crate::scenario::{AgentTrack, Scenario};
use crate::signal::{LightState, SignalProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideClass {
    Normal,
    RedSignalHold,
    ParkedHold,
    OffnetHold,
    OffnetBallistic,
}

impl OverrideClass {
    pub fn is_hold(self) -> bool {
        matches!(self, OverrideClass::RedSignalHold | OverrideClass::ParkedHold | OverrideClass::OffnetHold)
    }
}

/// Shared lookups for classification.
pub struct OverrideContext<'a> {
    pub network: &'a Network,
    pub programs: &'a BTreeMap<NodeId, SignalProgram>,
    pub thresholds: &'a OverrideThresholds,
    road_edges: SegmentIndex,
    now: usize,
    history_length: usize,
}

impl<'a> OverrideContext<'a> {
    pub fn new(scenario: &Scenario, network: &'a Network, programs: &'a BTreeMap<NodeId, SignalProgram>, thresholds: &'a OverrideThresholds) -> Self {
        let polys: Vec<Vec<Point2>> = scenario.road_edges.iter().map(|e| e.polyline.clone()).collect();
        OverrideContext {
            network,
            programs,
            thresholds,
            road_edges: SegmentIndex::new(&polys, 10.0),
            now: scenario.current_step(),
            history_length: scenario.history_length,
        }
    }

    pub fn road_edge_distance(&self, p: Point2) -> f64 {
        self.road_edges.nearest(p).map_or(f64::INFINITY, |(_, d)| d)
    }

    pub fn signal_state(&self, conn: ConnId, t: usize) -> Option<LightState> {
        let node = self.network.connection(conn).via_node;
        self.programs.get(&node).and_then(|p| p.state(t, conn))
    }
}

/// The connection an on-network agent approaches or occupies, with its
/// signed distance past the stop line (negative before it).
pub fn upcoming_connection(spec: &AgentSpec, network: &Network) -> Option<(ConnId, f64)> {
    match spec.placement {
        Placement::Connection { connection, offset, .. } => Some((connection, offset)),
        Placement::Lane { edge, lane, offset, .. } => {
            let route = spec.route.as_ref()?;
            let c = *route.connections.first()?;
            (network.connection(c).from_edge == edge).then(|| (c, offset - network.lane(edge, lane).shape.length()))
        }
        Placement::OffNetwork { .. } => None,
    }
}

/// Every valid history speed below the zero threshold.
pub fn stationary(track: &AgentTrack, history_length: usize, zero_speed: f64) -> bool {
    let mut any = false;
    for s in track.history(history_length) {
        any = true;
        if s.speed() >= zero_speed {
            return false;
        }
    }
    any
}

/// First matching class of the cascade: red hold, parked, off-network hold,
/// off-network ballistic, normal.
pub fn classify(spec: &AgentSpec, track: &AgentTrack, ctx: &OverrideContext) -> OverrideClass {
    if spec.control == Control::Replay {
        return OverrideClass::Normal;
    }
    let th = ctx.thresholds;
    let Some(state) = track.state_at(ctx.now) else { return OverrideClass::Normal };
    let p = state.position();
    let still = stationary(track, ctx.history_length, th.zero_speed);
    let lane_dist = nearest_lane_distance(ctx.network, p);
    if spec.placement.on_network() {
        if still {
            if let Some((conn, past)) = upcoming_connection(spec, ctx.network) {
                let rightmost = spec.placement.lane_index(ctx.network) == Some(0);
                let red = ctx.signal_state(conn, ctx.now) == Some(LightState::Red);
                if red && past.abs() <= th.d_intersection && !rightmost {
                    return OverrideClass::RedSignalHold;
                }
            }
            if ctx.road_edge_distance(p) < th.d_roadedge || lane_dist > th.d_lanecenter_1 {
                return OverrideClass::ParkedHold;
            }
        }
        return OverrideClass::Normal;
    }
    if lane_dist > th.d_lanecenter_2 {
        OverrideClass::OffnetHold
    } else {
        OverrideClass::OffnetBallistic
    }
}

pub fn classify_all(specs: &mut [AgentSpec], scenario: &Scenario, ctx: &OverrideContext) {
    for spec in specs {
        if let Some(track) = scenario.track(spec.track_id) {
            spec.override_class = classify(spec, track, ctx);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl Pose {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Constant speed and yaw rate taken from the end of history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ballistic {
    pub speed: f64,
    pub yaw_rate: f64,
    /// Motion stops once the agent leaves these bounds.
    pub bounds: (Point2, Point2),
}

impl Ballistic {
    pub fn from_track(track: &AgentTrack, now: usize, dt: f64, bounds: (Point2, Point2)) -> Self {
        let cur = track.state_at(now);
        let prev = now.checked_sub(1).and_then(|t| track.state_at(t));
        let yaw_rate = match (prev, cur) {
            (Some(a), Some(b)) => wrap_angle(b.heading - a.heading) / dt,
            _ => 0.0,
        };
        Ballistic { speed: cur.map_or(0.0, |s| s.speed()), yaw_rate, bounds }
    }

    fn inside(&self, p: Point2) -> bool {
        p.x >= self.bounds.0.x && p.x <= self.bounds.1.x && p.y >= self.bounds.0.y && p.y <= self.bounds.1.y
    }
}

/// Final state of an overridden agent for one step. Hold classes freeze the
/// previous pose; the ballistic class integrates a constant twist.
pub fn apply(class: OverrideClass, prev: Pose, proposal: Pose, ballistic: Option<&Ballistic>, dt: f64) -> Pose {
    match class {
        OverrideClass::Normal => proposal,
        OverrideClass::RedSignalHold | OverrideClass::ParkedHold | OverrideClass::OffnetHold => Pose { speed: 0.0, ..prev },
        OverrideClass::OffnetBallistic => {
            let Some(b) = ballistic else { return Pose { speed: 0.0, ..prev } };
            if !b.inside(prev.position()) {
                return Pose { speed: 0.0, ..prev };
            }
            let p = prev.position() + Point2::from_heading(prev.heading) * (b.speed * dt);
            Pose { x: p.x, y: p.y, heading: wrap_angle(prev.heading + b.yaw_rate * dt), speed: b.speed }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ballistic_advances_along_heading() {
        let b = Ballistic { speed: 2.0, yaw_rate: 0.0, bounds: (Point2::new(-100.0, -100.0), Point2::new(100.0, 100.0)) };
        let mut pose = Pose { x: 0.0, y: 0.0, heading: 0.5, speed: 2.0 };
        for k in 1..=50 {
            pose = apply(OverrideClass::OffnetBallistic, pose, pose, Some(&b), 0.1);
            let want = Point2::from_heading(0.5) * (0.2 * k as f64);
            assert!(pose.position().dist(want) < 1e-9);
        }
    }

    #[test]
    fn holds_freeze() {
        let prev = Pose { x: 1.0, y: 2.0, heading: 0.3, speed: 0.0 };
        let moved = Pose { x: 5.0, ..prev };
        for c in [OverrideClass::RedSignalHold, OverrideClass::ParkedHold, OverrideClass::OffnetHold] {
            assert_eq!(apply(c, prev, moved, None, 0.1).position(), prev.position());
        }
        assert_eq!(apply(OverrideClass::Normal, prev, moved, None, 0.1), moved);
    }
}
