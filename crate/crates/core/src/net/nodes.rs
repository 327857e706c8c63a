//! Node identification: diverge/merge grouping of edges, connection
//! creation through grouped lanes, and graph closure with endpoint nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::config::NetConfig;
use crate::geom::{convex_hull, dedup_points, wrap_angle, Point2, Polyline};
use crate::scenario::LaneId;

use super::semantics::classify_movement;
use super::truncate::Truncation;
use super::{ConnId, Connection, ConversionError, Edge, EdgeCandidate, EdgeId, NetLane, Network, Node, NodeId, NodeKind};

const MAX_PATHS_PER_NODE: usize = 10_000;
const SUCCESSOR_SLACK: f64 = 0.25;

/// Diverge or merge pattern between two distinct lanes: near-identical starts
/// with separated ends, or separated starts with near-identical ends. Lanes
/// chained end to start are never a pattern, which keeps short fragments of
/// one lane apart.
pub fn pattern_holds(a: &Polyline, b: &Polyline, eps: f64) -> bool {
    if a.last().dist(b.first()) < eps || b.last().dist(a.first()) < eps {
        return false;
    }
    let ds = a.first().dist(b.first());
    let de = a.last().dist(b.last());
    (ds < eps && de >= eps) || (de < eps && ds >= eps)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root for stable ordering
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Uniform hash grid over points; queries return candidates within one cell.
struct PointGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl PointGrid {
    fn new(points: &[Point2], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(*p, cell)).or_default().push(i);
        }
        PointGrid { cell, buckets }
    }

    fn key(p: Point2, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    fn near(&self, p: Point2) -> impl Iterator<Item = usize> + '_ {
        let (kx, ky) = Self::key(p, self.cell);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (kx + dx, ky + dy)))
            .filter_map(|k| self.buckets.get(&k))
            .flatten()
            .copied()
    }
}

/// Edge groups formed by the pairwise pattern, as candidate indices. An edge
/// belongs to a group only when at least one pattern involves one of its
/// lanes; `active` masks out candidates.
fn pattern_groups(polys: &[Polyline], owner: &[usize], n_candidates: usize, active: &[bool], eps: f64) -> Vec<Vec<usize>> {
    let starts: Vec<Point2> = polys.iter().map(|p| p.first()).collect();
    let ends: Vec<Point2> = polys.iter().map(|p| p.last()).collect();
    let start_grid = PointGrid::new(&starts, eps);
    let end_grid = PointGrid::new(&ends, eps);
    let mut uf = UnionFind::new(n_candidates);
    let mut flagged = vec![false; n_candidates];
    for m in 0..polys.len() {
        if !active[owner[m]] {
            continue;
        }
        let near: BTreeSet<usize> = start_grid.near(starts[m]).chain(end_grid.near(ends[m])).collect();
        for n in near {
            if n == m || !active[owner[n]] {
                continue;
            }
            if pattern_holds(&polys[m], &polys[n], eps) {
                flagged[owner[m]] = true;
                flagged[owner[n]] = true;
                uf.union(owner[m], owner[n]);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in 0..n_candidates {
        if flagged[c] {
            groups.entry(uf.find(c)).or_default().push(c);
        }
    }
    groups.into_values().collect()
}

/// Groups of edge candidates induced by the diverge/merge pattern, before any
/// topological clean-up.
pub fn heuristic_groups(trunc: &Truncation, candidates: &[EdgeCandidate], eps: f64) -> Vec<Vec<usize>> {
    let (polys, owner) = lane_table(trunc, candidates);
    pattern_groups(&polys, &owner, candidates.len(), &vec![true; candidates.len()], eps)
}

fn lane_table(trunc: &Truncation, candidates: &[EdgeCandidate]) -> (Vec<Polyline>, Vec<usize>) {
    let by_id: HashMap<LaneId, usize> = trunc.lanes.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
    let mut polys = Vec::new();
    let mut owner = Vec::new();
    for (c, cand) in candidates.iter().enumerate() {
        for id in &cand.lanes {
            let lane = &trunc.lanes[by_id[id]];
            polys.push(Polyline::new(lane.polyline.clone()).expect("validated lane"));
            owner.push(c);
        }
    }
    (polys, owner)
}

/// Output of node identification.
#[derive(Debug, Clone)]
pub struct NodeTopology {
    pub network: Network,
    /// Candidate indices absorbed into each heuristic node group.
    pub groups: Vec<Vec<usize>>,
    pub group_node: Vec<NodeId>,
    /// Candidates removed from a group because a lane had no geometric
    /// predecessor or successor.
    pub ejected: Vec<usize>,
    /// Candidate index of each remaining edge.
    pub edge_candidate: Vec<usize>,
}

struct LaneRef {
    index: usize,
}

pub fn identify_nodes(trunc: &Truncation, candidates: &[EdgeCandidate], cfg: &NetConfig) -> Result<NodeTopology, ConversionError> {
    let eps = cfg.node_eps;
    let (polys, owner) = lane_table(trunc, candidates);
    let by_id: HashMap<LaneId, usize> = trunc.lanes.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
    let mut flat_ids = Vec::with_capacity(polys.len());
    let mut lane_ref = Vec::with_capacity(polys.len());
    for cand in candidates {
        for (k, id) in cand.lanes.iter().enumerate() {
            flat_ids.push(*id);
            lane_ref.push(LaneRef { index: k });
        }
    }
    let n = polys.len();
    let mut warnings = Vec::new();

    // Geometric successors: end meets start, heading continues. Only the
    // nearest starts count, so a short fragment does not hide the next one.
    let starts: Vec<Point2> = polys.iter().map(|p| p.first()).collect();
    let start_grid = PointGrid::new(&starts, eps);
    let tol = cfg.successor_heading_tol_deg.to_radians();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for m in 0..n {
        let end = polys[m].last();
        let mut found: Vec<usize> = start_grid
            .near(end)
            .filter(|&k| k != m && starts[k].dist(end) < eps)
            .filter(|&k| wrap_angle(polys[k].start_heading() - polys[m].end_heading()).abs() < tol)
            .collect();
        found.sort_unstable();
        found.dedup();
        let nearest = found.iter().map(|&k| starts[k].dist(end)).fold(f64::INFINITY, f64::min);
        found.retain(|&k| starts[k].dist(end) <= nearest + SUCCESSOR_SLACK);
        for &k in &found {
            pred[k].push(m);
        }
        succ[m] = found;
    }

    let flat_index: HashMap<LaneId, usize> = flat_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut mismatched = Vec::new();
    for m in 0..n {
        let lane = &trunc.lanes[by_id[&flat_ids[m]]];
        let declared: BTreeSet<usize> = lane.exit_ids.iter().filter_map(|e| flat_index.get(e).copied()).collect();
        let geometric: BTreeSet<usize> = succ[m].iter().copied().collect();
        if declared != geometric {
            mismatched.push(flat_ids[m]);
        }
    }
    if !mismatched.is_empty() {
        mismatched.sort_unstable();
        warnings.push(format!(
            "declared exits differ from geometric successors on {} lanes (geometry used), e.g. {:?}",
            mismatched.len(),
            &mismatched[..mismatched.len().min(8)]
        ));
    }

    // Group, then drop members whose lanes dangle, then regroup.
    let initial = pattern_groups(&polys, &owner, candidates.len(), &vec![true; candidates.len()], eps);
    let mut lanes_of: Vec<Vec<usize>> = vec![Vec::new(); candidates.len()];
    for (m, &c) in owner.iter().enumerate() {
        lanes_of[c].push(m);
    }
    let mut active = vec![true; candidates.len()];
    let mut ejected = Vec::new();
    for group in &initial {
        for &c in group {
            if lanes_of[c].iter().any(|&m| succ[m].is_empty() || pred[m].is_empty()) {
                active[c] = false;
                ejected.push(c);
            }
        }
    }
    ejected.sort_unstable();
    let groups = if ejected.is_empty() { initial } else { pattern_groups(&polys, &owner, candidates.len(), &active, eps) };

    let mut group_of: Vec<Option<usize>> = vec![None; candidates.len()];
    for (g, members) in groups.iter().enumerate() {
        for &c in members {
            group_of[c] = Some(g);
        }
    }
    let mut edge_of: Vec<Option<EdgeId>> = vec![None; candidates.len()];
    let mut edge_candidate = Vec::new();
    for c in 0..candidates.len() {
        if group_of[c].is_none() {
            edge_of[c] = Some(EdgeId(edge_candidate.len()));
            edge_candidate.push(c);
        }
    }

    // Terminal clustering: groups, then (start, end) of each remaining edge.
    let ng = groups.len();
    let n_edges = edge_candidate.len();
    let start_el = |e: usize| ng + 2 * e;
    let end_el = |e: usize| ng + 2 * e + 1;
    let mut uf = UnionFind::new(ng + 2 * n_edges);
    for (e, &c) in edge_candidate.iter().enumerate() {
        for &m in &lanes_of[c] {
            for &s in &succ[m] {
                let sc = owner[s];
                match group_of[sc] {
                    Some(g) => uf.union(end_el(e), g),
                    None => uf.union(end_el(e), start_el(edge_of[sc].unwrap().0)),
                }
            }
            for &p in &pred[m] {
                if let Some(g) = group_of[owner[p]] {
                    uf.union(start_el(e), g);
                }
            }
        }
    }
    let mut node_of_root: HashMap<usize, NodeId> = HashMap::new();
    let mut element_node = vec![NodeId(0); ng + 2 * n_edges];
    for el in 0..ng + 2 * n_edges {
        let r = uf.find(el);
        let next = NodeId(node_of_root.len());
        element_node[el] = *node_of_root.entry(r).or_insert(next);
    }
    let n_nodes = node_of_root.len();
    let mut node_groups: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for g in 0..ng {
        node_groups[element_node[g].0].push(g);
    }
    for (k, gs) in node_groups.iter().enumerate() {
        if gs.len() > 1 {
            warnings.push(format!("node n{k} merges {} separately detected junction groups", gs.len()));
        }
    }

    let width_of = |m: usize| trunc.lanes[by_id[&flat_ids[m]]].width.unwrap_or(cfg.default_lane_width);
    let mut edges: Vec<Edge> = Vec::with_capacity(n_edges);
    for (e, &c) in edge_candidate.iter().enumerate() {
        let lanes: Vec<NetLane> = lanes_of[c]
            .iter()
            .map(|&m| {
                let lane = &trunc.lanes[by_id[&flat_ids[m]]];
                NetLane {
                    id: format!("e{e}_{}", lane_ref[m].index),
                    source_lane_ids: vec![trunc.original_of(lane.id)],
                    fragment_id: lane.id,
                    shape: polys[m].clone(),
                    width: width_of(m),
                    speed_limit: lane.speed_limit,
                    lane_type: lane.lane_type,
                }
            })
            .collect();
        edges.push(Edge {
            id: EdgeId(e),
            priority: lanes.len() as i32,
            lanes,
            from_node: element_node[start_el(e)],
            to_node: element_node[end_el(e)],
            speed_limit: 0.0,
        });
    }

    let mut connections: Vec<Connection> = Vec::new();
    let edge_lane = |m: usize| -> Option<(EdgeId, usize)> { edge_of[owner[m]].map(|e| (e, lane_ref[m].index)) };

    for (g, members) in groups.iter().enumerate() {
        let node = element_node[g];
        let internal: HashSet<usize> = members.iter().flat_map(|&c| lanes_of[c].iter().copied()).collect();
        let mut entries: Vec<usize> = internal.iter().copied().collect();
        entries.sort_unstable();
        let mut emitted = 0usize;
        let mut truncated = false;
        for &x in &entries {
            let mut outside_preds: Vec<usize> = pred[x].iter().copied().filter(|p| !internal.contains(p)).collect();
            outside_preds.sort_by_key(|&p| edge_lane(p));
            for &p in &outside_preds {
                let Some((from_edge, from_lane)) = edge_lane(p) else { continue };
                let mut path = vec![x];
                let mut stack: Vec<usize> = vec![0];
                while let Some(k) = stack.last_mut() {
                    let y = *path.last().unwrap();
                    if *k >= succ[y].len() {
                        stack.pop();
                        path.pop();
                        continue;
                    }
                    let s = succ[y][*k];
                    *k += 1;
                    if internal.contains(&s) {
                        if !path.contains(&s) {
                            path.push(s);
                            stack.push(0);
                        }
                        continue;
                    }
                    let Some((to_edge, to_lane)) = edge_lane(s) else { continue };
                    if emitted >= MAX_PATHS_PER_NODE {
                        truncated = true;
                        break;
                    }
                    emitted += 1;
                    let shape = concat(path.iter().map(|&m| &polys[m]));
                    let mut sources: Vec<LaneId> = Vec::new();
                    for &m in &path {
                        let orig = trunc.original_of(flat_ids[m]);
                        if !sources.contains(&orig) {
                            sources.push(orig);
                        }
                    }
                    let movement = classify_movement(polys[p].end_heading(), polys[s].start_heading());
                    let width = path.iter().map(|&m| width_of(m)).fold(0.0, f64::max);
                    connections.push(Connection {
                        id: ConnId(connections.len()),
                        from_edge,
                        from_lane,
                        to_edge,
                        to_lane,
                        via_node: node,
                        shape,
                        movement,
                        source_lane_ids: sources,
                        stop_controlled: false,
                        width,
                    });
                }
            }
        }
        if truncated {
            warnings.push(format!("node {node}: connection enumeration capped at {MAX_PATHS_PER_NODE}"));
        }
    }

    // Direct links between remaining edges.
    for (e, &c) in edge_candidate.iter().enumerate() {
        for &m in &lanes_of[c] {
            for &s in &succ[m] {
                let Some((to_edge, to_lane)) = edge_lane(s) else { continue };
                let shape = Polyline::new(vec![polys[m].last(), polys[s].first()]).expect("two points");
                connections.push(Connection {
                    id: ConnId(connections.len()),
                    from_edge: EdgeId(e),
                    from_lane: lane_ref[m].index,
                    to_edge,
                    to_lane,
                    via_node: element_node[end_el(e)],
                    shape,
                    movement: classify_movement(polys[m].end_heading(), polys[s].start_heading()),
                    source_lane_ids: vec![],
                    stop_controlled: false,
                    width: width_of(m),
                });
            }
        }
    }

    let mut nodes: Vec<Node> = (0..n_nodes)
        .map(|k| Node {
            id: NodeId(k),
            shape: vec![],
            kind: NodeKind::Endpoint,
            signalized: false,
            stop_controlled: vec![],
            connections: vec![],
            incoming: vec![],
            outgoing: vec![],
            signal_heads: BTreeMap::new(),
            member_edges: node_groups[k].iter().map(|&g| groups[g].len()).sum(),
        })
        .collect();
    for e in &edges {
        nodes[e.to_node.0].incoming.push(e.id);
        nodes[e.from_node.0].outgoing.push(e.id);
    }
    for c in &connections {
        nodes[c.via_node.0].connections.push(c.id);
    }
    for node in &mut nodes {
        let mut pts = Vec::new();
        if node_groups[node.id.0].is_empty() {
            for &e in &node.incoming {
                pts.extend(edges[e.0].lanes.iter().map(|l| l.shape.last()));
            }
            for &e in &node.outgoing {
                pts.extend(edges[e.0].lanes.iter().map(|l| l.shape.first()));
            }
        } else {
            for &g in &node_groups[node.id.0] {
                for &c in &groups[g] {
                    for &m in &lanes_of[c] {
                        let w = width_of(m) / 2.0;
                        pts.extend(polys[m].offset(w));
                        pts.extend(polys[m].offset(-w));
                    }
                }
            }
            let (ins, outs) = (node.incoming.len(), node.outgoing.len());
            node.kind = if ins >= 2 && outs >= 2 {
                NodeKind::Junction
            } else if ins == 1 && outs == 1 {
                NodeKind::LaneCountChange
            } else {
                NodeKind::MergeSplit
            };
        }
        pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
        dedup_points(&mut pts, 1e-9);
        node.shape = if pts.len() >= 3 { convex_hull(&pts) } else { pts };
    }

    let network = Network { edges, nodes, connections, signal_programs: BTreeMap::new(), warnings };
    let group_node = (0..ng).map(|g| element_node[g]).collect();
    Ok(NodeTopology { network, groups, group_node, ejected, edge_candidate })
}

fn concat<'a>(parts: impl Iterator<Item = &'a Polyline>) -> Polyline {
    let mut pts: Vec<Point2> = Vec::new();
    for p in parts {
        for &q in p.points() {
            if pts.last().is_some_and(|l: &Point2| l.dist(q) < 1e-9) {
                continue;
            }
            pts.push(q);
        }
    }
    if pts.len() < 2 {
        let p = pts[0];
        pts.push(p);
    }
    Polyline::new(pts).expect("at least two points")
}
