//! Conversion of lane centers into a directed network of edges, nodes and
//! connections.

mod edges;
mod nodes;
mod semantics;
mod truncate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::NetConfig;
use crate::geom::{GeomError, Point2, Polyline, SegmentIndex};
use crate::scenario::{LaneId, LaneType, Scenario};
use crate::signal::SignalProgram;

pub use edges::{group_into_edges, EdgeCandidate};
pub use nodes::{heuristic_groups, identify_nodes, pattern_holds, NodeTopology};
pub use semantics::{classify_movement, embed_semantics};
pub use truncate::{misaligned_pairs, truncate_lane_centers, Provenance, Truncation};

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub usize);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(EdgeId, "e");
id_type!(NodeId, "n");
id_type!(ConnId, "c");

#[derive(Debug, Error)]
pub enum ConversionError {
    #[error("lane splitting did not converge; lanes involved: {lane_ids:?}")]
    SplitNonTermination { lane_ids: Vec<LaneId> },
    #[error("adjacency cycle on one side through lanes {lane_ids:?}")]
    AdjacencyCycle { lane_ids: Vec<LaneId> },
    #[error("degenerate geometry on lanes {lane_ids:?}: {source}")]
    Geometry {
        lane_ids: Vec<LaneId>,
        #[source]
        source: GeomError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Truncate,
    Group,
    Identify,
    Embed,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Truncate => "truncate",
            Stage::Group => "group",
            Stage::Identify => "identify",
            Stage::Embed => "embed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("network conversion failed at stage {stage}: {source}")]
pub struct BuildError {
    pub stage: Stage,
    #[source]
    pub source: ConversionError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetLane {
    pub id: String,
    /// Original lane-center ids this lane was cut from.
    pub source_lane_ids: Vec<LaneId>,
    /// Id of the refined fragment after truncation.
    pub fragment_id: LaneId,
    pub shape: Polyline,
    pub width: f64,
    pub speed_limit: f64,
    pub lane_type: LaneType,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub id: EdgeId,
    /// Index 0 is the rightmost lane.
    pub lanes: Vec<NetLane>,
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub priority: i32,
    pub speed_limit: f64,
}

impl Edge {
    pub fn length(&self) -> f64 {
        self.lanes.iter().map(|l| l.shape.length()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Junction,
    LaneCountChange,
    MergeSplit,
    Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub id: NodeId,
    /// Convex outline; may be a point or segment for endpoint nodes.
    pub shape: Vec<Point2>,
    pub kind: NodeKind,
    pub signalized: bool,
    pub stop_controlled: Vec<ConnId>,
    pub connections: Vec<ConnId>,
    pub incoming: Vec<EdgeId>,
    pub outgoing: Vec<EdgeId>,
    /// Signal-head lane id to the connections it governs.
    pub signal_heads: BTreeMap<LaneId, Vec<ConnId>>,
    /// Edges absorbed into this node by the grouping heuristic.
    pub member_edges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    Straight,
    Left,
    Right,
    Uturn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Connection {
    pub id: ConnId,
    pub from_edge: EdgeId,
    pub from_lane: usize,
    pub to_edge: EdgeId,
    pub to_lane: usize,
    pub via_node: NodeId,
    pub shape: Polyline,
    pub movement: Movement,
    /// Original ids of the internal lanes this connection follows; empty for
    /// direct end-to-start links.
    pub source_lane_ids: Vec<LaneId>,
    pub stop_controlled: bool,
    pub width: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Network {
    pub edges: Vec<Edge>,
    pub nodes: Vec<Node>,
    pub connections: Vec<Connection>,
    pub signal_programs: BTreeMap<NodeId, SignalProgram>,
    pub warnings: Vec<String>,
}

impl Network {
    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn connection(&self, id: ConnId) -> &Connection {
        &self.connections[id.0]
    }

    pub fn lane(&self, edge: EdgeId, index: usize) -> &NetLane {
        &self.edges[edge.0].lanes[index]
    }

    /// Connections leaving the given lane.
    pub fn outgoing(&self, edge: EdgeId, lane: usize) -> impl Iterator<Item = &Connection> {
        self.connections.iter().filter(move |c| c.from_edge == edge && c.from_lane == lane)
    }

    /// Connections leaving any lane of the edge.
    pub fn outgoing_from_edge(&self, edge: EdgeId) -> impl Iterator<Item = &Connection> {
        self.connections.iter().filter(move |c| c.from_edge == edge)
    }

    pub fn signalized_nodes(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.signalized).map(|n| n.id).collect()
    }

    /// Structural checks: ids are dense, references resolve, every connection
    /// is listed by its node, and endpoints meet their lanes.
    pub fn check_well_formed(&self, snap: f64) -> Vec<String> {
        let mut problems = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            if e.id.0 != i {
                problems.push(format!("edge id {} at position {i}", e.id));
            }
            if e.lanes.is_empty() {
                problems.push(format!("edge {} has no lanes", e.id));
            }
            if e.from_node.0 >= self.nodes.len() || e.to_node.0 >= self.nodes.len() {
                problems.push(format!("edge {} references a missing node", e.id));
            }
        }
        for (i, c) in self.connections.iter().enumerate() {
            if c.id.0 != i {
                problems.push(format!("connection id {} at position {i}", c.id));
            }
            let ok = c.from_edge.0 < self.edges.len()
                && c.to_edge.0 < self.edges.len()
                && c.from_lane < self.edges[c.from_edge.0].lanes.len()
                && c.to_lane < self.edges[c.to_edge.0].lanes.len()
                && c.via_node.0 < self.nodes.len();
            if !ok {
                problems.push(format!("connection {} has a dangling reference", c.id));
                continue;
            }
            if !self.nodes[c.via_node.0].connections.contains(&c.id) {
                problems.push(format!("connection {} not listed by node {}", c.id, c.via_node));
            }
            let from = self.lane(c.from_edge, c.from_lane).shape.last();
            let to = self.lane(c.to_edge, c.to_lane).shape.first();
            if c.shape.first().dist(from) > snap || c.shape.last().dist(to) > snap {
                problems.push(format!("connection {} endpoints do not meet its lanes", c.id));
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.0 != i {
                problems.push(format!("node id {} at position {i}", n.id));
            }
        }
        problems
    }
}

/// Share of drivable original lane-center points lying within `tolerance` of
/// some network lane or connection shape.
pub fn lane_coverage(scenario: &Scenario, network: &Network, tolerance: f64) -> f64 {
    let mut shapes: Vec<Vec<Point2>> = Vec::new();
    for e in &network.edges {
        for l in &e.lanes {
            shapes.push(l.shape.points().to_vec());
        }
    }
    for c in &network.connections {
        shapes.push(c.shape.points().to_vec());
    }
    let index = SegmentIndex::new(&shapes, 10.0);
    let mut total = 0usize;
    let mut covered = 0usize;
    for lane in scenario.lane_centers.iter().filter(|l| l.lane_type.is_drivable()) {
        for &p in &lane.polyline {
            total += 1;
            if index.nearest(p).is_some_and(|(_, d)| d <= tolerance) {
                covered += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        covered as f64 / total as f64
    }
}

/// Intermediate results kept for reporting and testing.
#[derive(Debug, Clone)]
pub struct BuildArtifacts {
    pub truncation: Truncation,
    pub candidates: Vec<EdgeCandidate>,
    pub topology: NodeTopology,
}

/// Full conversion: truncate, group, identify nodes, embed semantics.
pub fn build_network(scenario: &Scenario, cfg: &NetConfig) -> Result<Network, BuildError> {
    build_network_with_artifacts(scenario, cfg).map(|(n, _)| n)
}

pub fn build_network_with_artifacts(scenario: &Scenario, cfg: &NetConfig) -> Result<(Network, BuildArtifacts), BuildError> {
    let truncation =
        truncate_lane_centers(&scenario.lane_centers, cfg).map_err(|source| BuildError { stage: Stage::Truncate, source })?;
    let candidates = group_into_edges(&truncation.lanes).map_err(|source| BuildError { stage: Stage::Group, source })?;
    let topology =
        identify_nodes(&truncation, &candidates, cfg).map_err(|source| BuildError { stage: Stage::Identify, source })?;
    let mut network = topology.network.clone();
    embed_semantics(&mut network, scenario, &truncation, cfg);
    Ok((network, BuildArtifacts { truncation, candidates, topology }))
}
