//! Lane-center truncation: split lanes at adjacency boundaries until every
//! neighboring pair starts and ends at matching points.

use std::collections::{BTreeSet, HashMap};

use crate::config::NetConfig;
use crate::geom::{Point2, Polyline};
use crate::scenario::{Adjacency, LaneCenter, LaneId};

use super::ConversionError;

/// Where a refined lane came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub original: LaneId,
    /// Arc-length range on the original lane.
    pub s0: f64,
    pub s1: f64,
}

#[derive(Debug, Clone)]
pub struct Truncation {
    pub lanes: Vec<LaneCenter>,
    pub provenance: HashMap<LaneId, Provenance>,
}

impl Truncation {
    pub fn original_of(&self, id: LaneId) -> LaneId {
        self.provenance.get(&id).map(|p| p.original).unwrap_or(id)
    }

    /// Refined lanes derived from `original`, in travel order.
    pub fn fragments_of(&self, original: LaneId) -> Vec<LaneId> {
        let mut frags: Vec<(f64, LaneId)> = self
            .provenance
            .iter()
            .filter(|(_, p)| p.original == original)
            .map(|(&id, p)| (p.s0, id))
            .collect();
        frags.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        frags.into_iter().map(|(_, id)| id).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Span {
    lane: usize,
    nbr: usize,
    left: bool,
    self_range: (f64, f64),
    nbr_range: (f64, f64),
}

/// Arc-length correspondence between a lane and its neighbor: the lateral
/// projection, searched near the linear interpolation between the ranges.
struct Mapper<'a> {
    lines: &'a [Polyline],
}

impl Mapper<'_> {
    fn project(&self, from: usize, to: usize, s: f64, hint: f64, window: f64) -> f64 {
        let p = self.lines[from].point_at(s);
        self.lines[to].project_near(p, hint, window).s
    }

    fn forward(&self, sp: &Span, s: f64) -> f64 {
        let (a, b) = sp.self_range;
        let (c, d) = sp.nbr_range;
        let hint = if b - a <= 0.0 { c } else { c + (s - a) / (b - a) * (d - c) };
        self.project(sp.lane, sp.nbr, s, hint, (d - c).abs() + 10.0)
    }

    fn back(&self, sp: &Span, s: f64) -> f64 {
        let (a, b) = sp.self_range;
        let (c, d) = sp.nbr_range;
        let hint = if d - c <= 0.0 { a } else { a + (s - c) / (d - c) * (b - a) };
        self.project(sp.nbr, sp.lane, s, hint, (b - a).abs() + 10.0)
    }

    /// Index ranges locate the shared portion only to the nearest vertex,
    /// except where an index is a lane endpoint. At each end of the span an
    /// endpoint index wins and the other side takes its projection; otherwise
    /// the shared portion is the intersection of both ranges.
    fn resolve(&self, sp: Span, at_end: [bool; 4]) -> Span {
        let (a, b) = sp.self_range;
        let (c, d) = sp.nbr_range;
        let (fa, fb, bc, bd) = (self.forward(&sp, a), self.forward(&sp, b), self.back(&sp, c), self.back(&sp, d));
        let (a, c) = match (at_end[0], at_end[2]) {
            (true, false) => (a, fa),
            (false, true) => (bc, c),
            _ if bc > a => (bc, c),
            _ => (a, fa),
        };
        let (b, d) = match (at_end[1], at_end[3]) {
            (true, false) => (b, fb),
            (false, true) => (bd, d),
            _ if bd < b => (bd, d),
            _ => (b, fb),
        };
        Span { self_range: (a, b.max(a)), nbr_range: (c, d.max(c)), ..sp }
    }
}

/// Rounding allowance on the split tolerance.
const SLACK: f64 = 1e-6;

/// Inserts `s` unless it lies within `eps` of a lane end. The cut snaps to
/// a vertex within `snap` and is dropped when within `eps - snap` of an
/// existing cut, so a dropped cut is never more than `eps` from the kept one.
fn add_cut(cuts: &mut Vec<f64>, s: f64, vertices: &[f64], snap: f64, eps: f64) -> bool {
    let length = *vertices.last().unwrap();
    let end_tol = eps + SLACK;
    if s <= end_tol || s >= length - end_tol {
        return false;
    }
    let nearest = vertices.iter().copied().min_by(|x, y| (x - s).abs().total_cmp(&(y - s).abs())).unwrap();
    let s = if (nearest - s).abs() <= snap { nearest } else { s };
    if cuts.iter().any(|c| (c - s).abs() <= eps - snap) {
        return false;
    }
    let pos = cuts.partition_point(|c| *c < s);
    cuts.insert(pos, s);
    true
}

/// Splits lanes until adjacency boundaries coincide with lane endpoints.
///
/// Lanes that need no split keep their id; fragments of split lanes get fresh
/// ids above the largest input id, assigned in input order. Adjacency records
/// are rebuilt between fragments and entry/exit ids are rewired.
pub fn truncate_lane_centers(lanes: &[LaneCenter], cfg: &NetConfig) -> Result<Truncation, ConversionError> {
    let eps = cfg.split_eps;
    let snap = cfg.vertex_snap;
    let index: HashMap<LaneId, usize> = lanes.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
    let lines: Vec<Polyline> = lanes
        .iter()
        .map(|l| Polyline::new(l.polyline.clone()).map_err(|e| ConversionError::Geometry { lane_ids: vec![l.id], source: e }))
        .collect::<Result<_, _>>()?;

    let mut spans = Vec::new();
    for (i, lane) in lanes.iter().enumerate() {
        let sides = lane.left_neighbors.iter().map(|a| (a, true)).chain(lane.right_neighbors.iter().map(|a| (a, false)));
        for (adj, left) in sides {
            let Some(&j) = index.get(&adj.neighbor_id) else { continue };
            let ci = lines[i].cumulative();
            let cj = lines[j].cumulative();
            let clamp_i = |k: usize| ci[k.min(ci.len() - 1)];
            let clamp_j = |k: usize| cj[k.min(cj.len() - 1)];
            let span = Span {
                lane: i,
                nbr: j,
                left,
                self_range: (clamp_i(adj.self_start_index), clamp_i(adj.self_end_index)),
                nbr_range: (clamp_j(adj.neighbor_start_index), clamp_j(adj.neighbor_end_index)),
            };
            let at_end = [
                adj.self_start_index == 0,
                adj.self_end_index >= ci.len() - 1,
                adj.neighbor_start_index == 0,
                adj.neighbor_end_index >= cj.len() - 1,
            ];
            spans.push((span, at_end));
        }
    }

    let map = Mapper { lines: &lines };
    let spans: Vec<Span> = spans.into_iter().map(|(sp, at_end)| map.resolve(sp, at_end)).collect();
    let lengths: Vec<f64> = lines.iter().map(|l| l.length()).collect();
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); lanes.len()];
    for sp in &spans {
        let (a, b) = sp.self_range;
        add_cut(&mut cuts[sp.lane], a, lines[sp.lane].cumulative(), snap, eps);
        add_cut(&mut cuts[sp.lane], b, lines[sp.lane].cumulative(), snap, eps);
        // the neighbor sees the same boundary even if its own record is missing
        let (c, d) = sp.nbr_range;
        add_cut(&mut cuts[sp.nbr], c, lines[sp.nbr].cumulative(), snap, eps);
        add_cut(&mut cuts[sp.nbr], d, lines[sp.nbr].cumulative(), snap, eps);
    }

    // Propagate cuts across every span until nothing changes. Kept cuts are
    // at least `eps - snap` from span ends, so that is the forwarding margin.
    let margin = eps - snap - 1e-9;
    let mut rounds = 0usize;
    loop {
        let mut changed = false;
        for sp in &spans {
            let (a, b) = sp.self_range;
            let (c, d) = sp.nbr_range;
            let forward: Vec<f64> = cuts[sp.lane].iter().copied().filter(|&s| s > a + margin && s < b - margin).collect();
            for s in forward {
                changed |= add_cut(&mut cuts[sp.nbr], map.forward(sp, s), lines[sp.nbr].cumulative(), snap, eps);
            }
            let backward: Vec<f64> = cuts[sp.nbr].iter().copied().filter(|&s| s > c + margin && s < d - margin).collect();
            for s in backward {
                changed |= add_cut(&mut cuts[sp.lane], map.back(sp, s), lines[sp.lane].cumulative(), snap, eps);
            }
        }
        if !changed {
            break;
        }
        rounds += 1;
        if rounds > cfg.max_split_rounds {
            let mut ids: Vec<LaneId> = (0..lanes.len()).filter(|&i| !cuts[i].is_empty()).map(|i| lanes[i].id).collect();
            ids.sort_unstable();
            return Err(ConversionError::SplitNonTermination { lane_ids: ids });
        }
    }

    // Materialise the fragments.
    let mut next_id = lanes.iter().map(|l| l.id).max().unwrap_or(0) + 1;
    let mut frag_ranges: Vec<Vec<(f64, f64, LaneId)>> = Vec::with_capacity(lanes.len());
    let mut provenance = HashMap::new();
    for (i, lane) in lanes.iter().enumerate() {
        let mut bounds = vec![0.0];
        bounds.extend(cuts[i].iter().copied());
        bounds.push(lengths[i]);
        let mut ranges = Vec::new();
        for w in bounds.windows(2) {
            let id = if bounds.len() == 2 {
                lane.id
            } else {
                let id = next_id;
                next_id += 1;
                id
            };
            ranges.push((w[0], w[1], id));
            provenance.insert(id, Provenance { original: lane.id, s0: w[0], s1: w[1] });
        }
        frag_ranges.push(ranges);
    }

    let first_frag = |orig: LaneId| index.get(&orig).map(|&i| frag_ranges[i][0].2).unwrap_or(orig);
    let last_frag = |orig: LaneId| index.get(&orig).map(|&i| frag_ranges[i].last().unwrap().2).unwrap_or(orig);

    let mut out = Vec::new();
    let mut polys: HashMap<LaneId, Polyline> = HashMap::new();
    for (i, lane) in lanes.iter().enumerate() {
        let n = frag_ranges[i].len();
        for (k, &(s0, s1, id)) in frag_ranges[i].iter().enumerate() {
            let pts = if n == 1 { lane.polyline.clone() } else { lines[i].slice(s0, s1) };
            let entry_ids = if k == 0 { lane.entry_ids.iter().map(|&e| last_frag(e)).collect() } else { vec![frag_ranges[i][k - 1].2] };
            let exit_ids = if k + 1 == n { lane.exit_ids.iter().map(|&e| first_frag(e)).collect() } else { vec![frag_ranges[i][k + 1].2] };
            polys.insert(id, Polyline::new(pts.clone()).expect("fragment has two points"));
            out.push(LaneCenter {
                id,
                polyline: pts,
                lane_type: lane.lane_type,
                speed_limit: lane.speed_limit,
                width: lane.width,
                entry_ids,
                exit_ids,
                left_neighbors: vec![],
                right_neighbors: vec![],
            });
        }
    }

    // Rebuild adjacency between fragments from the original spans.
    let mut adj_out: HashMap<LaneId, (Vec<Adjacency>, Vec<Adjacency>)> = HashMap::new();
    for sp in &spans {
        let (a, b) = sp.self_range;
        for &(f0, f1, fid) in &frag_ranges[sp.lane] {
            let lo = a.max(f0);
            let hi = b.min(f1);
            if hi - lo <= eps + SLACK {
                continue;
            }
            let (m0, m1) = (map.forward(sp, lo), map.forward(sp, hi));
            let (m0, m1) = (m0.min(m1), m0.max(m1));
            for &(g0, g1, gid) in &frag_ranges[sp.nbr] {
                let nlo = m0.max(g0);
                let nhi = m1.min(g1);
                if nhi - nlo <= eps + SLACK {
                    continue;
                }
                let fpoly = &polys[&fid];
                let gpoly = &polys[&gid];
                let self_lo = map.back(sp, nlo).max(f0) - f0;
                let self_hi = map.back(sp, nhi).min(f1) - f0;
                if self_hi - self_lo <= eps + SLACK {
                    continue;
                }
                let adj = Adjacency {
                    neighbor_id: gid,
                    self_start_index: nearest_index(fpoly, self_lo, eps),
                    self_end_index: nearest_index(fpoly, self_hi, eps),
                    neighbor_start_index: nearest_index(gpoly, nlo - g0, eps),
                    neighbor_end_index: nearest_index(gpoly, nhi - g0, eps),
                };
                let entry = adj_out.entry(fid).or_default();
                let list = if sp.left { &mut entry.0 } else { &mut entry.1 };
                if !list.iter().any(|x| x.neighbor_id == gid) {
                    list.push(adj);
                }
            }
        }
    }
    for lane in &mut out {
        if let Some((l, r)) = adj_out.remove(&lane.id) {
            lane.left_neighbors = l;
            lane.right_neighbors = r;
        }
    }
    Ok(Truncation { lanes: out, provenance })
}

/// Vertex closest to arc length `s`; positions within `eps` of an end map to
/// that end.
fn nearest_index(poly: &Polyline, s: f64, eps: f64) -> usize {
    let cum = poly.cumulative();
    if s <= eps {
        return 0;
    }
    if s >= poly.length() - eps {
        return cum.len() - 1;
    }
    let mut best = 0;
    for (i, c) in cum.iter().enumerate() {
        if (c - s).abs() < (cum[best] - s).abs() {
            best = i;
        }
    }
    best
}

/// All lanes whose adjacency spans do not start and end at their endpoints.
pub fn misaligned_pairs(lanes: &[LaneCenter], eps: f64) -> BTreeSet<(LaneId, LaneId)> {
    let by_id: HashMap<LaneId, &LaneCenter> = lanes.iter().map(|l| (l.id, l)).collect();
    let mut bad = BTreeSet::new();
    for lane in lanes {
        for adj in lane.left_neighbors.iter().chain(&lane.right_neighbors) {
            let Some(nbr) = by_id.get(&adj.neighbor_id) else { continue };
            let a = lane.polyline[adj.self_start_index.min(lane.polyline.len() - 1)];
            let b = lane.polyline[adj.self_end_index.min(lane.polyline.len() - 1)];
            let first = lane.polyline[0];
            let last = *lane.polyline.last().unwrap();
            let c = nbr.polyline[adj.neighbor_start_index.min(nbr.polyline.len() - 1)];
            let d = nbr.polyline[adj.neighbor_end_index.min(nbr.polyline.len() - 1)];
            let nfirst = nbr.polyline[0];
            let nlast = *nbr.polyline.last().unwrap();
            let close = |p: Point2, q: Point2| p.dist(q) <= eps;
            if !(close(a, first) && close(b, last) && close(c, nfirst) && close(d, nlast)) {
                bad.insert((lane.id, nbr.id));
            }
        }
    }
    bad
}
