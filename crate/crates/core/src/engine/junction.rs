//! Static junction tables: which connections conflict.

use crate::geom::segment_intersection;
use crate::net::{ConnId, Connection, Network};

/// Whether two connection shapes cross strictly inside both.
pub fn shapes_cross(a: &Connection, b: &Connection) -> bool {
    let pa = a.shape.points();
    let pb = b.shape.points();
    pa.windows(2).any(|s| {
        pb.windows(2).any(|r| {
            segment_intersection(s[0], s[1], r[0], r[1]).is_some_and(|(u, v)| u > 1e-6 && u < 1.0 - 1e-6 && v > 1e-6 && v < 1.0 - 1e-6)
        })
    })
}

/// Connections sharing a node conflict when their paths cross or they feed
/// the same lane. Connections leaving the same lane never conflict; the
/// car-following logic orders them.
pub fn conflict_table(network: &Network) -> Vec<Vec<ConnId>> {
    let mut table = vec![Vec::new(); network.connections.len()];
    for node in &network.nodes {
        for (i, &a) in node.connections.iter().enumerate() {
            for &b in &node.connections[i + 1..] {
                let ca = network.connection(a);
                let cb = network.connection(b);
                if ca.from_edge == cb.from_edge && ca.from_lane == cb.from_lane {
                    continue;
                }
                let merge = ca.to_edge == cb.to_edge && ca.to_lane == cb.to_lane;
                if merge || shapes_cross(ca, cb) {
                    table[a.0].push(b);
                    table[b.0].push(a);
                }
            }
        }
    }
    for row in &mut table {
        row.sort();
    }
    table
}
