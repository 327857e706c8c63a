//! Speed limits, stop control, signal heads and movement classes.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::NetConfig;
use crate::geom::wrap_angle;
use crate::scenario::{LaneId, Scenario};

use super::truncate::Truncation;
use super::{ConnId, Connection, Movement, Network};

/// Movement class from the heading change between entering and leaving.
pub fn classify_movement(entry_heading: f64, exit_heading: f64) -> Movement {
    let delta = wrap_angle(exit_heading - entry_heading).to_degrees();
    let mag = delta.abs();
    let turn = if delta > 0.0 { Movement::Left } else { Movement::Right };
    if mag < 25.0 {
        Movement::Straight
    } else if mag < 142.5 {
        // 135..150 deg is ambiguous; split at the midpoint
        turn
    } else {
        Movement::Uturn
    }
}

/// Whether `lane` regulates the connection: either the connection follows it
/// through the node, or it leaves that lane's downstream end.
fn governed_by(net: &Network, conn: &Connection, lane: LaneId) -> bool {
    if conn.source_lane_ids.contains(&lane) {
        return true;
    }
    let from = &net.edges[conn.from_edge.0].lanes[conn.from_lane];
    let to = &net.edges[conn.to_edge.0].lanes[conn.to_lane];
    from.source_lane_ids.contains(&lane) && !to.source_lane_ids.contains(&lane)
}

pub fn embed_semantics(net: &mut Network, scenario: &Scenario, _trunc: &Truncation, _cfg: &NetConfig) {
    for edge in &mut net.edges {
        edge.speed_limit = edge.lanes.iter().map(|l| l.speed_limit).fold(0.0, f64::max);
    }

    let stops: BTreeSet<LaneId> = scenario.stop_sign_lane_ids.iter().copied().collect();
    let stop_flags: Vec<bool> =
        net.connections.iter().map(|c| stops.iter().any(|&lane| governed_by(net, c, lane))).collect();
    for (c, flag) in net.connections.iter_mut().zip(stop_flags) {
        c.stop_controlled = flag;
    }
    for node in &mut net.nodes {
        node.stop_controlled.clear();
        node.signal_heads.clear();
    }
    for c in &net.connections {
        if c.stop_controlled {
            net.nodes[c.via_node.0].stop_controlled.push(c.id);
        }
    }

    let heads: BTreeSet<LaneId> = scenario.signal_observations.iter().map(|o| o.lane_id).collect();
    let mut attached: BTreeMap<LaneId, Vec<ConnId>> = BTreeMap::new();
    for &lane in &heads {
        let conns: Vec<ConnId> = net.connections.iter().filter(|c| governed_by(net, c, lane)).map(|c| c.id).collect();
        if conns.is_empty() {
            net.warnings.push(format!("signal head on lane {lane} matches no connection; observations dropped"));
        } else {
            attached.insert(lane, conns);
        }
    }
    for (lane, conns) in attached {
        let mut by_node: BTreeMap<usize, Vec<ConnId>> = BTreeMap::new();
        for c in conns {
            by_node.entry(net.connections[c.0].via_node.0).or_default().push(c);
        }
        for (node, cs) in by_node {
            net.nodes[node].signal_heads.insert(lane, cs);
            net.nodes[node].signalized = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn movement_thresholds() {
        let d = |deg: f64| classify_movement(0.3, 0.3 + deg.to_radians());
        assert_eq!(d(0.0), Movement::Straight);
        assert_eq!(d(24.9), Movement::Straight);
        assert_eq!(d(90.0), Movement::Left);
        assert_eq!(d(-90.0), Movement::Right);
        assert_eq!(d(135.0), Movement::Left);
        assert_eq!(d(140.0), Movement::Left);
        assert_eq!(d(145.0), Movement::Uturn);
        assert_eq!(d(-140.0), Movement::Right);
        assert_eq!(d(179.0), Movement::Uturn);
        assert_eq!(classify_movement(PI / 2.0, -PI / 2.0), Movement::Uturn);
    }

    #[test]
    fn left_band_oracle() {
        // headings in +90 +/- 25 deg: left whatever the entry heading
        for k in 0..=50 {
            let delta = (65.0 + k as f64).to_radians();
            for h in [-3.0, -1.0, 0.0, 2.0, 3.1] {
                assert_eq!(classify_movement(h, h + delta), Movement::Left, "h={h} delta={delta}");
            }
        }
    }
}
