//! SUMO plain-XML export: node, edge, connection, traffic-light and route
//! files plus a checksummed manifest. Coordinates carry two decimals and
//! parameters four, so identical input gives identical bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use quick_xml::escape::escape;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::demand::{AgentSpec, Demand, Placement};
use crate::geom::Point2;
use crate::net::{Edge, Network, Node, NodeId};
use crate::overrides::OverrideClass;
use crate::scenario::ObjectType;
use crate::signal::SignalProgram;

/// Version of the bundle layout recorded in every manifest.
pub const FORMAT_VERSION: &str = "trafsim-sumo-plain/1";
/// Duration given to the final phase, which holds the last state.
pub const HOLD_DURATION_S: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("duplicate {kind} id {id}")]
    IdCollision { kind: &'static str, id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub scenario_id: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDocs {
    pub nodes: String,
    pub edges: String,
    pub connections: String,
    pub tls: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutesDoc {
    pub xml: String,
    pub vehicles: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportBundle {
    pub scenario_id: String,
    pub nodes_doc: String,
    pub edges_doc: String,
    pub connections_doc: String,
    pub tls_doc: String,
    pub routes_doc: String,
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

impl ExportBundle {
    /// `(file name, contents)` in manifest order.
    pub fn files(&self) -> Vec<(String, &str)> {
        let stem = file_stem(&self.scenario_id);
        vec![
            (format!("{stem}.nod.xml"), self.nodes_doc.as_str()),
            (format!("{stem}.edg.xml"), self.edges_doc.as_str()),
            (format!("{stem}.con.xml"), self.connections_doc.as_str()),
            (format!("{stem}.tll.xml"), self.tls_doc.as_str()),
            (format!("{stem}.rou.xml"), self.routes_doc.as_str()),
        ]
    }
}

/// Scenario id reduced to characters safe in file names.
pub fn file_stem(scenario_id: &str) -> String {
    scenario_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn c2(v: f64) -> String {
    format!("{:.2}", v + 0.0)
}

fn p4(v: f64) -> String {
    format!("{:.4}", v + 0.0)
}

fn shape(points: &[Point2]) -> String {
    points.iter().map(|p| format!("{},{}", c2(p.x), c2(p.y))).collect::<Vec<_>>().join(" ")
}

fn header(root: &str, schema: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<{root} version=\"1.20\" xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" xsi:noNamespaceSchemaLocation=\"http://sumo.dlr.de/xsd/{schema}\">\n"
    )
}

fn unique<'a>(kind: &'static str, ids: impl Iterator<Item = String> + 'a) -> Result<(), ExportError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.clone()) {
            return Err(ExportError::IdCollision { kind, id });
        }
    }
    Ok(())
}

fn node_type(node: &Node) -> &'static str {
    if node.signalized {
        "traffic_light"
    } else if !node.connections.is_empty() && node.connections.iter().all(|c| node.stop_controlled.contains(c)) {
        "allway_stop"
    } else {
        "priority"
    }
}

fn node_position(node: &Node) -> Point2 {
    if node.shape.is_empty() {
        return Point2::default();
    }
    let sum = node.shape.iter().fold(Point2::default(), |a, &p| a + p);
    sum * (1.0 / node.shape.len() as f64)
}

/// Edge reference line for `spreadType="center"`: the middle lane, or the
/// boundary between the two middle lanes.
fn edge_shape(e: &Edge) -> Vec<Point2> {
    let n = e.lanes.len();
    if n % 2 == 1 {
        return e.lanes[n / 2].shape.points().to_vec();
    }
    let lane = &e.lanes[n / 2 - 1];
    lane.shape.offset(lane.width / 2.0)
}

/// Phases from the current step onward, merging runs of equal rows. The
/// last phase holds.
fn phases(node: &Node, program: Option<&SignalProgram>, from_step: usize, dt: f64) -> Vec<(f64, String)> {
    let row_at = |t: usize| -> String {
        node.connections
            .iter()
            .map(|&c| program.and_then(|p| p.state(t, c)).map(|s| s.code()).unwrap_or('O'))
            .collect()
    };
    let end = program.map(|p| p.len()).unwrap_or(0).max(from_step + 1);
    let mut out: Vec<(f64, String)> = Vec::new();
    for t in from_step..end {
        let row = row_at(t);
        match out.last_mut() {
            Some((d, last)) if *last == row => *d += dt,
            _ => out.push((dt, row)),
        }
    }
    if let Some(last) = out.last_mut() {
        last.0 = HOLD_DURATION_S;
    }
    out
}

/// Node, edge, connection and traffic-light documents for a network.
/// `from_step` is the program step that maps to SUMO time 0.
pub fn export_network(network: &Network, programs: &BTreeMap<NodeId, SignalProgram>, from_step: usize, dt: f64) -> Result<NetworkDocs, ExportError> {
    unique("node", network.nodes.iter().map(|n| n.id.to_string()))?;
    unique("edge", network.edges.iter().map(|e| e.id.to_string()))?;
    unique("connection", network.connections.iter().map(|c| format!("{}_{}>{}_{}", c.from_edge, c.from_lane, c.to_edge, c.to_lane)))?;

    let mut nodes = header("nodes", "nodes_file.xsd");
    for n in &network.nodes {
        let p = node_position(n);
        let _ = writeln!(nodes, "    <node id=\"{}\" x=\"{}\" y=\"{}\" type=\"{}\"/>", n.id, c2(p.x), c2(p.y), node_type(n));
    }
    nodes.push_str("</nodes>\n");

    let mut edges = header("edges", "edges_file.xsd");
    for e in &network.edges {
        let width = e.lanes.iter().map(|l| l.width).sum::<f64>() / e.lanes.len().max(1) as f64;
        let _ = writeln!(
            edges,
            "    <edge id=\"{}\" from=\"{}\" to=\"{}\" priority=\"{}\" numLanes=\"{}\" speed=\"{}\" width=\"{}\" spreadType=\"center\" shape=\"{}\">",
            e.id,
            e.from_node,
            e.to_node,
            e.priority,
            e.lanes.len(),
            p4(e.speed_limit),
            c2(width),
            shape(&edge_shape(e))
        );
        for (i, l) in e.lanes.iter().enumerate() {
            let _ = writeln!(edges, "        <lane index=\"{i}\" speed=\"{}\" width=\"{}\" shape=\"{}\"/>", p4(l.speed_limit), c2(l.width), shape(l.shape.points()));
        }
        edges.push_str("    </edge>\n");
    }
    edges.push_str("</edges>\n");

    let mut connections = header("connections", "connections_file.xsd");
    for c in &network.connections {
        let _ = writeln!(
            connections,
            "    <connection from=\"{}\" to=\"{}\" fromLane=\"{}\" toLane=\"{}\" shape=\"{}\"/>",
            c.from_edge,
            c.to_edge,
            c.from_lane,
            c.to_lane,
            shape(c.shape.points())
        );
    }
    connections.push_str("</connections>\n");

    let mut tls = header("tlLogics", "tllogic_file.xsd");
    for n in network.nodes.iter().filter(|n| n.signalized) {
        let _ = writeln!(tls, "    <tlLogic id=\"{}\" type=\"static\" programID=\"0\" offset=\"0\">", n.id);
        for (d, state) in phases(n, programs.get(&n.id), from_step, dt) {
            let _ = writeln!(tls, "        <phase duration=\"{}\" state=\"{state}\"/>", c2(d));
        }
        tls.push_str("    </tlLogic>\n");
    }
    for n in network.nodes.iter().filter(|n| n.signalized) {
        for (k, &cid) in n.connections.iter().enumerate() {
            let c = network.connection(cid);
            let _ = writeln!(
                tls,
                "    <connection from=\"{}\" to=\"{}\" fromLane=\"{}\" toLane=\"{}\" tl=\"{}\" linkIndex=\"{k}\"/>",
                c.from_edge, c.to_edge, c.from_lane, c.to_lane, n.id
            );
        }
    }
    tls.push_str("</tlLogics>\n");
    Ok(NetworkDocs { nodes, edges, connections, tls })
}

fn vclass(t: ObjectType) -> &'static str {
    match t {
        ObjectType::Vehicle => "passenger",
        ObjectType::Cyclist => "bicycle",
        ObjectType::Pedestrian => "pedestrian",
    }
}

fn class_name(c: OverrideClass) -> String {
    serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Lane index and position along the first route edge. Agents inside a
/// junction depart at the end of their connection's source lane.
fn depart(spec: &AgentSpec, network: &Network) -> Option<(usize, f64)> {
    match spec.placement {
        Placement::Lane { edge, lane, offset, .. } => {
            let len = network.lane(edge, lane).shape.length();
            Some((lane, offset.clamp(0.0, len)))
        }
        Placement::Connection { connection, .. } => {
            let c = network.connection(connection);
            Some((c.from_lane, network.lane(c.from_edge, c.from_lane).shape.length()))
        }
        Placement::OffNetwork { .. } => None,
    }
}

/// Route file with one vType and vehicle per routed on-network agent.
/// Off-network agents become comments with their pose.
pub fn export_routes(network: &Network, demand: &Demand) -> Result<RoutesDoc, ExportError> {
    unique("vehicle", demand.specs.iter().map(|s| s.track_id.to_string()))?;
    let mut xml = header("routes", "routes_file.xsd");
    let mut warnings = Vec::new();
    let mut vehicles = 0;
    for spec in &demand.specs {
        let id = spec.track_id;
        if let Placement::OffNetwork { x, y, heading } = spec.placement {
            let class = escape(&class_name(spec.override_class)).into_owned();
            let _ = writeln!(xml, "    <!-- off-network agent {id}: x={} y={} heading={} class={class} -->", c2(x), c2(y), p4(heading));
            continue;
        }
        let (Some(route), Some(params), Some((lane, pos))) = (&spec.route, &spec.params, depart(spec, network)) else {
            let msg = format!("agent {id} has no route or behavior parameters; not exported");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        };
        if route.edges.is_empty() {
            let msg = format!("agent {id} has an empty route; not exported");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let mut attrs = String::new();
        for (name, v) in params.named() {
            let _ = write!(attrs, " {name}=\"{}\"", p4(v));
        }
        if let Some(t) = params.jm_ignore_keep_clear_time {
            let _ = write!(attrs, " jmIgnoreKeepClearTime=\"{}\"", p4(t));
        }
        let _ = writeln!(
            xml,
            "    <vType id=\"t{id}\" vClass=\"{}\" length=\"{}\" width=\"{}\" carFollowModel=\"Krauss\" laneChangeModel=\"SL2015\"{attrs}/>",
            vclass(spec.object_type),
            c2(spec.length),
            c2(spec.width)
        );
        let edges = route.edges.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            xml,
            "    <vehicle id=\"{id}\" type=\"t{id}\" depart=\"0.00\" departLane=\"{lane}\" departPos=\"{}\" departSpeed=\"{}\">",
            c2(pos),
            p4(spec.initial_speed)
        );
        let _ = writeln!(xml, "        <route edges=\"{edges}\"/>");
        if spec.override_class != OverrideClass::Normal {
            let _ = writeln!(xml, "        <param key=\"overrideClass\" value=\"{}\"/>", class_name(spec.override_class));
        }
        xml.push_str("    </vehicle>\n");
        vehicles += 1;
    }
    xml.push_str("</routes>\n");
    Ok(RoutesDoc { xml, vehicles, warnings })
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn export_bundle(
    scenario_id: &str,
    network: &Network,
    programs: &BTreeMap<NodeId, SignalProgram>,
    demand: &Demand,
    from_step: usize,
    dt: f64,
) -> Result<ExportBundle, ExportError> {
    let net = export_network(network, programs, from_step, dt)?;
    let routes = export_routes(network, demand)?;
    let mut bundle = ExportBundle {
        scenario_id: scenario_id.to_owned(),
        nodes_doc: net.nodes,
        edges_doc: net.edges,
        connections_doc: net.connections,
        tls_doc: net.tls,
        routes_doc: routes.xml,
        manifest: Manifest { format_version: FORMAT_VERSION.into(), scenario_id: scenario_id.to_owned(), files: vec![] },
        warnings: routes.warnings,
    };
    bundle.manifest.files = bundle.files().into_iter().map(|(name, text)| ManifestEntry { name, bytes: text.len(), sha256: digest(text) }).collect();
    Ok(bundle)
}

/// Writes the five documents and `manifest.json` into `dir`; returns the
/// paths written.
pub fn write_bundle(dir: &Path, bundle: &ExportBundle) -> Result<Vec<PathBuf>, ExportError> {
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| ExportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Vec::new();
    for (name, text) in bundle.files() {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        out.push(path);
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&bundle.manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))?;
    out.push(path);
    Ok(out)
}
