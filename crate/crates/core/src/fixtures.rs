//! Synthetic scenes with known topology: straight roads, lane drops, merges,
//! junctions with 3 to 6 arms, a roundabout, a grid and randomized corridors.
//! Adjacency index ranges and entry/exit ids are derived from geometry.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;

use crate::geom::{wrap_angle, Point2, Polyline};
use crate::rng::{domain, substream};
use crate::scenario::{
    Adjacency, AgentTrack, LaneCenter, LaneId, LaneType, ObjectType, RoadEdge, Scenario, SignalObservation, SignalState,
    TrackId, TrackState,
};

pub const LANE_WIDTH: f64 = 3.5;
pub const HISTORY: usize = 11;
/// Ground truth spans the history plus an 8 s future.
pub const TOTAL_STEPS: usize = HISTORY + 80;

pub fn line(a: Point2, b: Point2, step: f64) -> Vec<Point2> {
    let n = ((a.dist(b) / step).ceil() as usize).max(1);
    (0..=n).map(|i| a.lerp(b, i as f64 / n as f64)).collect()
}

pub fn arc(center: Point2, radius: f64, a0: f64, a1: f64, step: f64) -> Vec<Point2> {
    let n = (((a1 - a0).abs() * radius / step).ceil() as usize).max(2);
    (0..=n)
        .map(|i| {
            let a = a0 + (a1 - a0) * i as f64 / n as f64;
            center + Point2::from_heading(a) * radius
        })
        .collect()
}

/// Cubic Bezier leaving `p0` along `h0` and arriving at `p1` along `h1`.
pub fn bezier(p0: Point2, h0: f64, p1: Point2, h1: f64, step: f64) -> Vec<Point2> {
    let k = 0.4 * p0.dist(p1);
    let c0 = p0 + Point2::from_heading(h0) * k;
    let c1 = p1 - Point2::from_heading(h1) * k;
    let eval = |t: f64| {
        let u = 1.0 - t;
        p0 * (u * u * u) + c0 * (3.0 * u * u * t) + c1 * (3.0 * u * t * t) + p1 * (t * t * t)
    };
    let approx = p0.dist(c0) + c0.dist(c1) + c1.dist(p1);
    let n = ((approx / step).ceil() as usize).max(2);
    let mut pts: Vec<Point2> = (0..=n).map(|i| eval(i as f64 / n as f64)).collect();
    pts.dedup_by(|b, a| a.dist(*b) < 1e-6);
    pts
}

/// Incrementally assembles a scenario.
#[derive(Debug, Clone)]
pub struct FixtureBuilder {
    id: String,
    lanes: Vec<LaneCenter>,
    next_lane: LaneId,
    next_track: TrackId,
    pairs: Vec<(LaneId, LaneId)>,
    curbs: Vec<Vec<Point2>>,
    stops: Vec<LaneId>,
    observations: Vec<SignalObservation>,
    tracks: Vec<AgentTrack>,
    pub history_length: usize,
    pub total_steps: usize,
}

impl FixtureBuilder {
    pub fn new(id: &str) -> Self {
        FixtureBuilder {
            id: id.to_string(),
            lanes: vec![],
            next_lane: 1,
            next_track: 1,
            pairs: vec![],
            curbs: vec![],
            stops: vec![],
            observations: vec![],
            tracks: vec![],
            history_length: HISTORY,
            total_steps: TOTAL_STEPS,
        }
    }

    pub fn lane(&mut self, points: Vec<Point2>, speed_limit: f64) -> LaneId {
        let id = self.next_lane;
        self.lane_with_id(id, points, speed_limit)
    }

    pub fn lane_with_id(&mut self, id: LaneId, points: Vec<Point2>, speed_limit: f64) -> LaneId {
        self.next_lane = self.next_lane.max(id + 1);
        self.lanes.push(LaneCenter {
            id,
            polyline: points,
            lane_type: LaneType::SurfaceStreet,
            speed_limit,
            width: None,
            entry_ids: vec![],
            exit_ids: vec![],
            left_neighbors: vec![],
            right_neighbors: vec![],
        });
        id
    }

    pub fn set_lane_type(&mut self, id: LaneId, t: LaneType) {
        if let Some(l) = self.lanes.iter_mut().find(|l| l.id == id) {
            l.lane_type = t;
        }
    }

    pub fn lane_points(&self, id: LaneId) -> &[Point2] {
        &self.lanes.iter().find(|l| l.id == id).expect("known lane").polyline
    }

    /// Declares `left` as the left neighbor of `right` wherever they overlap.
    pub fn adjacent(&mut self, right: LaneId, left: LaneId) {
        self.pairs.push((right, left));
    }

    /// Road boundary with the drivable area on its left.
    pub fn curb(&mut self, points: Vec<Point2>) {
        self.curbs.push(points);
    }

    /// Right-side boundary of a lane, offset half a width plus a margin.
    pub fn curb_right_of(&mut self, id: LaneId) {
        let poly = Polyline::new(self.lane_points(id).to_vec()).unwrap();
        self.curbs.push(poly.offset(-(LANE_WIDTH / 2.0 + 0.25)));
    }

    /// Left-side boundary of a one-way road's leftmost lane.
    pub fn curb_left_of(&mut self, id: LaneId) {
        let poly = Polyline::new(self.lane_points(id).to_vec()).unwrap();
        let mut pts = poly.offset(LANE_WIDTH / 2.0 + 0.25);
        pts.reverse();
        self.curbs.push(pts);
    }

    pub fn stop_sign(&mut self, lane: LaneId) {
        self.stops.push(lane);
    }

    pub fn observe(&mut self, lane: LaneId, t: usize, state: SignalState) {
        let stop_point = *self.lane_points(lane).last().unwrap();
        self.observations.push(SignalObservation { time_index: t, lane_id: lane, state, stop_point });
    }

    /// Observes the same state over the whole history window.
    pub fn observe_all(&mut self, lane: LaneId, state: SignalState) {
        for t in 0..self.history_length {
            self.observe(lane, t, state);
        }
    }

    /// Concatenated geometry of a lane sequence.
    pub fn path(&self, lanes: &[LaneId]) -> Polyline {
        let mut pts: Vec<Point2> = Vec::new();
        for id in lanes {
            for &p in self.lane_points(*id) {
                if pts.last().is_some_and(|q: &Point2| q.dist(p) < 1e-6) {
                    continue;
                }
                pts.push(p);
            }
        }
        Polyline::new(pts).unwrap()
    }

    /// Vehicle moving at constant speed along `lanes`, starting `s0` meters
    /// in; invalid once it runs off the path end.
    pub fn vehicle(&mut self, lanes: &[LaneId], s0: f64, speed: f64) -> TrackId {
        let path = self.path(lanes);
        self.vehicle_on(&path, s0, speed, 0.0, ObjectType::Vehicle)
    }

    /// Vehicle with a constant lateral offset (left positive) from its path.
    pub fn vehicle_offset(&mut self, lanes: &[LaneId], s0: f64, speed: f64, lateral: f64) -> TrackId {
        let path = self.path(lanes);
        self.vehicle_on(&path, s0, speed, lateral, ObjectType::Vehicle)
    }

    pub fn vehicle_on(&mut self, path: &Polyline, s0: f64, speed: f64, lateral: f64, kind: ObjectType) -> TrackId {
        let speeds = vec![speed; self.total_steps];
        self.scripted(path, s0, &speeds, lateral, kind)
    }

    /// Track following `path` with a per-step speed profile.
    pub fn scripted(&mut self, path: &Polyline, s0: f64, speeds: &[f64], lateral: f64, kind: ObjectType) -> TrackId {
        let id = self.next_track;
        self.next_track += 1;
        let (length, width) = match kind {
            ObjectType::Vehicle => (4.5, 2.0),
            ObjectType::Cyclist => (1.8, 0.6),
            ObjectType::Pedestrian => (0.6, 0.6),
        };
        let mut s = s0;
        let mut states = Vec::with_capacity(self.total_steps);
        for t in 0..self.total_steps {
            let v = speeds[t.min(speeds.len() - 1)];
            let valid = s <= path.length();
            let h = path.heading_at(s);
            let p = path.point_at(s) + Point2::from_heading(h).left_normal() * lateral;
            states.push(TrackState {
                time_index: t,
                x: p.x,
                y: p.y,
                heading: h,
                vx: v * h.cos(),
                vy: v * h.sin(),
                length,
                width,
                valid,
            });
            s += v * 0.1;
        }
        self.tracks.push(AgentTrack { id, object_type: kind, states });
        id
    }

    /// Stationary object at a fixed pose.
    pub fn parked(&mut self, pos: Point2, heading: f64) -> TrackId {
        let id = self.next_track;
        self.next_track += 1;
        let states = (0..self.total_steps)
            .map(|t| TrackState {
                time_index: t,
                x: pos.x,
                y: pos.y,
                heading,
                vx: 0.0,
                vy: 0.0,
                length: 4.5,
                width: 2.0,
                valid: true,
            })
            .collect();
        self.tracks.push(AgentTrack { id, object_type: ObjectType::Vehicle, states });
        id
    }

    pub fn push_track(&mut self, mut track: AgentTrack) -> TrackId {
        let id = self.next_track;
        self.next_track += 1;
        track.id = id;
        self.tracks.push(track);
        id
    }

    pub fn build(mut self) -> Scenario {
        let index: HashMap<LaneId, usize> = self.lanes.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        for &(r, l) in &self.pairs {
            let (ri, li) = (index[&r], index[&l]);
            let (Some(rs), Some(ls)) =
                (covered_range(&self.lanes[ri].polyline, &self.lanes[li].polyline), covered_range(&self.lanes[li].polyline, &self.lanes[ri].polyline))
            else {
                continue;
            };
            self.lanes[ri].left_neighbors.push(Adjacency {
                neighbor_id: l,
                self_start_index: rs.0,
                self_end_index: rs.1,
                neighbor_start_index: ls.0,
                neighbor_end_index: ls.1,
            });
            self.lanes[li].right_neighbors.push(Adjacency {
                neighbor_id: r,
                self_start_index: ls.0,
                self_end_index: ls.1,
                neighbor_start_index: rs.0,
                neighbor_end_index: rs.1,
            });
        }
        let polys: Vec<Polyline> = self.lanes.iter().map(|l| Polyline::new(l.polyline.clone()).unwrap()).collect();
        for i in 0..self.lanes.len() {
            for j in 0..self.lanes.len() {
                if i == j {
                    continue;
                }
                let joins = polys[i].last().dist(polys[j].first()) < 0.5
                    && wrap_angle(polys[j].start_heading() - polys[i].end_heading()).abs() < FRAC_PI_2;
                if joins {
                    let (a, b) = (self.lanes[i].id, self.lanes[j].id);
                    self.lanes[i].exit_ids.push(b);
                    self.lanes[j].entry_ids.push(a);
                }
            }
        }
        Scenario {
            id: self.id,
            timestep_s: 0.1,
            history_length: self.history_length,
            lane_centers: self.lanes,
            road_edges: self.curbs.into_iter().enumerate().map(|(i, p)| RoadEdge { id: i as i64 + 1, polyline: p }).collect(),
            stop_sign_lane_ids: self.stops,
            signal_observations: self.observations,
            tracks: self.tracks,
        }
    }
}

/// Index range of `a`'s vertices lying alongside `b` (within its longitudinal
/// extent); `None` when fewer than two vertices qualify.
fn covered_range(a: &[Point2], b: &[Point2]) -> Option<(usize, usize)> {
    let pb = Polyline::new(b.to_vec()).ok()?;
    let t0 = Point2::from_heading(pb.start_heading());
    let t1 = Point2::from_heading(pb.end_heading());
    let inside: Vec<usize> = a
        .iter()
        .enumerate()
        .filter(|(_, &p)| (p - pb.first()).dot(t0) >= -0.25 && (p - pb.last()).dot(t1) <= 0.25)
        .map(|(i, _)| i)
        .collect();
    match (inside.first(), inside.last()) {
        (Some(&s), Some(&e)) if e > s => Some((s, e)),
        _ => None,
    }
}

/// Arm description for `junction`.
#[derive(Debug, Clone, Copy)]
pub struct Arm {
    /// Outward direction of the arm, radians.
    pub angle: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub length: f64,
}

impl Arm {
    pub fn new(angle: f64, n_in: usize, n_out: usize, length: f64) -> Self {
        Arm { angle, n_in, n_out, length }
    }
}

/// Lanes created by `junction`.
#[derive(Debug, Clone, Default)]
pub struct JunctionLanes {
    /// Per arm, rightmost lane first.
    pub inbound: Vec<Vec<LaneId>>,
    pub outbound: Vec<Vec<LaneId>>,
    /// (from arm, inbound lane index, to arm, outbound lane index, lane id)
    pub turns: Vec<(usize, usize, usize, usize, LaneId)>,
}

impl JunctionLanes {
    pub fn turns_from(&self, arm: usize, lane: usize) -> impl Iterator<Item = &(usize, usize, usize, usize, LaneId)> {
        self.turns.iter().filter(move |t| t.0 == arm && t.1 == lane)
    }
}

/// Signed heading change from arm `k` inbound to arm `m` outbound.
fn turn_angle(arms: &[Arm], k: usize, m: usize) -> f64 {
    wrap_angle(arms[m].angle - (arms[k].angle + PI))
}

/// Movement plan: (inbound lane index, target arm, outbound lane index).
pub type TurnPlan = Vec<(usize, usize, usize)>;

/// Every inbound lane to every other arm's rightmost outbound lane, except
/// U-turns.
pub fn plan_all(arms: &[Arm], k: usize) -> TurnPlan {
    let mut plan = Vec::new();
    for m in 0..arms.len() {
        if m != k && turn_angle(arms, k, m).abs() < 2.9 {
            for i in 0..arms[k].n_in {
                plan.push((i, m, 0));
            }
        }
    }
    plan
}

/// Rightmost lane turns right and goes straight, leftmost lane turns left.
pub fn plan_split(arms: &[Arm], k: usize) -> TurnPlan {
    let mut plan = Vec::new();
    let left_lane = arms[k].n_in - 1;
    for m in 0..arms.len() {
        if m == k {
            continue;
        }
        let a = turn_angle(arms, k, m);
        // straight and right turns from the right lane, lefts from the left lane
        if a.abs() < PI / 4.0 || a < 0.0 {
            plan.push((0, m, 0));
        } else if a < 2.9 {
            plan.push((left_lane, m, arms[m].n_out - 1));
        }
    }
    plan
}

/// Junction centered at `center` whose stop lines sit `radius` meters out.
pub fn junction(
    b: &mut FixtureBuilder,
    center: Point2,
    arms: &[Arm],
    radius: f64,
    speed: f64,
    plan: impl Fn(&[Arm], usize) -> TurnPlan,
) -> JunctionLanes {
    let w = LANE_WIDTH;
    let mut out = JunctionLanes::default();
    let geom = |k: usize| {
        let u = Point2::from_heading(arms[k].angle);
        let rn_in = u.left_normal();
        (u, rn_in, rn_in * -1.0)
    };
    for (k, arm) in arms.iter().enumerate() {
        let (u, rn_in, rn_out) = geom(k);
        let mut ins = Vec::new();
        for i in 0..arm.n_in {
            let off = rn_in * ((arm.n_in - i) as f64 - 0.5) * w;
            let far = center + u * (radius + arm.length) + off;
            let stop = center + u * radius + off;
            ins.push(b.lane(line(far, stop, 2.0), speed));
        }
        for i in 1..ins.len() {
            b.adjacent(ins[i - 1], ins[i]);
        }
        let mut outs = Vec::new();
        for j in 0..arm.n_out {
            let off = rn_out * ((arm.n_out - j) as f64 - 0.5) * w;
            let near = center + u * radius + off;
            let far = center + u * (radius + arm.length) + off;
            outs.push(b.lane(line(near, far, 2.0), speed));
        }
        for j in 1..outs.len() {
            b.adjacent(outs[j - 1], outs[j]);
        }
        out.inbound.push(ins);
        out.outbound.push(outs);
    }
    for k in 0..arms.len() {
        for (i, m, j) in plan(arms, k) {
            let from = *b.lane_points(out.inbound[k][i]).last().unwrap();
            let to = b.lane_points(out.outbound[m][j])[0];
            let pts = bezier(from, arms[k].angle + PI, to, arms[m].angle, 1.0);
            let id = b.lane(pts, speed);
            out.turns.push((k, i, m, j, id));
        }
    }
    // Corner boundaries: inbound right curb, around the corner, outbound
    // right curb of the next arm counter-clockwise.
    for k in 0..arms.len() {
        let m = (0..arms.len())
            .filter(|&m| m != k)
            .min_by(|&a, &c| {
                let da = (arms[a].angle - arms[k].angle).rem_euclid(TAU);
                let dc = (arms[c].angle - arms[k].angle).rem_euclid(TAU);
                da.partial_cmp(&dc).unwrap()
            })
            .unwrap();
        let (uk, rn_in, _) = geom(k);
        let (um, _, rn_out_m) = geom(m);
        let margin = 0.25;
        let a0 = center + uk * (radius + arms[k].length) + rn_in * (arms[k].n_in as f64 * w + margin);
        let a1 = center + uk * radius + rn_in * (arms[k].n_in as f64 * w + margin);
        let b0 = center + um * radius + rn_out_m * (arms[m].n_out as f64 * w + margin);
        let b1 = center + um * (radius + arms[m].length) + rn_out_m * (arms[m].n_out as f64 * w + margin);
        let mut pts = line(a0, a1, 5.0);
        let corner = bezier(a1, arms[k].angle + PI, b0, arms[m].angle, 1.0);
        pts.extend(corner.into_iter().skip(1));
        pts.extend(line(b0, b1, 5.0).into_iter().skip(1));
        pts.dedup_by(|q, p| p.dist(*q) < 1e-6);
        b.curb(pts);
    }
    out
}

pub fn four_arms(n_in: usize, n_out: usize, length: f64) -> Vec<Arm> {
    (0..4).map(|k| Arm::new(k as f64 * FRAC_PI_2, n_in, n_out, length)).collect()
}

/// Adds one vehicle per inbound lane, taking the first planned movement.
fn approach_traffic(b: &mut FixtureBuilder, j: &JunctionLanes, s0: f64, speed: f64) -> Vec<TrackId> {
    let mut ids = Vec::new();
    for (k, lanes) in j.inbound.iter().enumerate() {
        for (i, &lane) in lanes.iter().enumerate() {
            if let Some(&(_, _, m, jo, turn)) = j.turns_from(k, i).next() {
                let path = [lane, turn, j.outbound[m][jo]];
                ids.push(b.vehicle(&path, s0, speed));
            }
        }
    }
    ids
}

pub fn straight_road(n_lanes: usize, length: f64) -> Scenario {
    let mut b = FixtureBuilder::new(&format!("straight_{n_lanes}"));
    let mut ids = Vec::new();
    for i in 0..n_lanes {
        let y = i as f64 * LANE_WIDTH;
        ids.push(b.lane(line(Point2::new(0.0, y), Point2::new(length, y), 5.0), 13.4));
    }
    for i in 1..ids.len() {
        b.adjacent(ids[i - 1], ids[i]);
    }
    b.curb_right_of(ids[0]);
    b.curb_left_of(*ids.last().unwrap());
    for (i, &id) in ids.iter().enumerate() {
        b.vehicle(&[id], 10.0 + 15.0 * i as f64, 8.0 + i as f64);
    }
    b.build()
}

/// Two single-lane segments meeting end to start.
pub fn collinear_segments() -> Scenario {
    let mut b = FixtureBuilder::new("collinear_segments");
    let a = b.lane(line(Point2::new(0.0, 0.0), Point2::new(80.0, 0.0), 5.0), 13.4);
    let c = b.lane(line(Point2::new(80.0, 0.0), Point2::new(160.0, 0.0), 5.0), 13.4);
    b.curb_right_of(a);
    b.curb_right_of(c);
    b.curb_left_of(a);
    b.curb_left_of(c);
    b.vehicle(&[a, c], 20.0, 10.0);
    b.vehicle(&[a, c], 50.0, 9.0);
    b.build()
}

/// Two-lane road whose right lane tapers into the left one.
pub fn lane_drop() -> Scenario {
    let mut b = FixtureBuilder::new("lane_drop");
    let w = LANE_WIDTH;
    let r = b.lane(line(Point2::new(0.0, 0.0), Point2::new(100.0, 0.0), 5.0), 13.4);
    let l = b.lane(line(Point2::new(0.0, w), Point2::new(100.0, w), 5.0), 13.4);
    b.adjacent(r, l);
    let taper = b.lane(bezier(Point2::new(100.0, 0.0), 0.0, Point2::new(140.0, w), 0.0, 2.0), 13.4);
    let keep = b.lane(line(Point2::new(100.0, w), Point2::new(140.0, w), 2.0), 13.4);
    let after = b.lane(line(Point2::new(140.0, w), Point2::new(240.0, w), 5.0), 13.4);
    b.curb_right_of(r);
    b.curb_left_of(l);
    b.curb_left_of(keep);
    b.curb_left_of(after);
    b.curb_right_of(after);
    b.vehicle(&[r, taper, after], 20.0, 10.0);
    b.vehicle(&[l, keep, after], 5.0, 11.0);
    b.vehicle(&[l, keep, after], 45.0, 10.0);
    b.build()
}

/// One lane widening into two.
pub fn lane_add() -> Scenario {
    let mut b = FixtureBuilder::new("lane_add");
    let w = LANE_WIDTH;
    let before = b.lane(line(Point2::new(0.0, 0.0), Point2::new(100.0, 0.0), 5.0), 13.4);
    let keep = b.lane(line(Point2::new(100.0, 0.0), Point2::new(130.0, 0.0), 2.0), 13.4);
    let flare = b.lane(bezier(Point2::new(100.0, 0.0), 0.0, Point2::new(130.0, w), 0.0, 2.0), 13.4);
    let r = b.lane(line(Point2::new(130.0, 0.0), Point2::new(230.0, 0.0), 5.0), 13.4);
    let l = b.lane(line(Point2::new(130.0, w), Point2::new(230.0, w), 5.0), 13.4);
    b.adjacent(r, l);
    b.curb_right_of(before);
    b.curb_left_of(before);
    b.curb_right_of(r);
    b.curb_left_of(l);
    b.vehicle(&[before, keep, r], 10.0, 10.0);
    b.vehicle(&[before, flare, l], 40.0, 11.0);
    b.build()
}

/// On-ramp joining a single-lane main road.
pub fn on_ramp_merge() -> Scenario {
    let mut b = FixtureBuilder::new("on_ramp_merge");
    let main_in = b.lane(line(Point2::new(0.0, 0.0), Point2::new(100.0, 0.0), 5.0), 20.0);
    let ramp_in = b.lane(line(Point2::new(20.0, -40.0), Point2::new(90.0, -12.0), 5.0), 15.0);
    let main_m = b.lane(line(Point2::new(100.0, 0.0), Point2::new(140.0, 0.0), 2.0), 20.0);
    let ramp_m = b.lane(bezier(Point2::new(90.0, -12.0), (28.0f64).atan2(70.0), Point2::new(140.0, 0.0), 0.0, 2.0), 15.0);
    let out = b.lane(line(Point2::new(140.0, 0.0), Point2::new(260.0, 0.0), 5.0), 20.0);
    b.curb_left_of(main_in);
    b.curb_left_of(main_m);
    b.curb_left_of(out);
    b.curb_right_of(out);
    b.curb_right_of(ramp_in);
    b.vehicle(&[main_in, main_m, out], 30.0, 15.0);
    b.vehicle(&[ramp_in, ramp_m, out], 10.0, 12.0);
    b.build()
}

/// Off-ramp leaving a single-lane main road.
pub fn off_ramp_diverge() -> Scenario {
    let mut b = FixtureBuilder::new("off_ramp_diverge");
    let main_in = b.lane(line(Point2::new(0.0, 0.0), Point2::new(100.0, 0.0), 5.0), 20.0);
    let main_d = b.lane(line(Point2::new(100.0, 0.0), Point2::new(140.0, 0.0), 2.0), 20.0);
    let ramp_d = b.lane(bezier(Point2::new(100.0, 0.0), 0.0, Point2::new(150.0, -12.0), -0.38, 2.0), 15.0);
    let main_out = b.lane(line(Point2::new(140.0, 0.0), Point2::new(260.0, 0.0), 5.0), 20.0);
    let ramp_out = b.lane(line(Point2::new(150.0, -12.0), Point2::new(150.0 + 92.6, -12.0 - 37.0), 5.0), 15.0);
    b.curb_left_of(main_in);
    b.curb_left_of(main_out);
    b.curb_right_of(main_out);
    b.curb_right_of(ramp_out);
    b.curb_left_of(main_d);
    b.vehicle(&[main_in, main_d, main_out], 20.0, 15.0);
    b.vehicle(&[main_in, ramp_d, ramp_out], 60.0, 13.0);
    b.build()
}

/// Two-lane road along a circular arc.
pub fn curved_road() -> Scenario {
    let mut b = FixtureBuilder::new("curved_road");
    let c = Point2::new(0.0, 0.0);
    let r = b.lane(arc(c, 80.0, -0.6, 1.2, 2.0), 13.4);
    let l = b.lane(arc(c, 80.0 - LANE_WIDTH, -0.6, 1.2, 2.0), 13.4);
    b.adjacent(r, l);
    b.curb_right_of(r);
    b.curb_left_of(l);
    b.vehicle(&[r], 10.0, 9.0);
    b.vehicle(&[l], 30.0, 10.0);
    b.build()
}

/// Two-lane S-bend made of two opposite arcs.
pub fn s_curve() -> Scenario {
    let mut b = FixtureBuilder::new("s_curve");
    let w = LANE_WIDTH;
    let mut rp = arc(Point2::new(0.0, 60.0), 60.0, -FRAC_PI_2, 0.0, 2.0);
    let second = arc(Point2::new(120.0, 60.0), 60.0, PI, FRAC_PI_2, 2.0);
    rp.extend(second.into_iter().skip(1));
    let mut lp = arc(Point2::new(0.0, 60.0), 60.0 - w, -FRAC_PI_2, 0.0, 2.0);
    let second_l = arc(Point2::new(120.0, 60.0), 60.0 + w, PI, FRAC_PI_2, 2.0);
    lp.extend(second_l.into_iter().skip(1));
    lp.dedup_by(|q, p| p.dist(*q) < 1e-6);
    let r = b.lane(rp, 13.4);
    let l = b.lane(lp, 13.4);
    b.adjacent(r, l);
    b.curb_right_of(r);
    b.curb_left_of(l);
    b.vehicle(&[r], 5.0, 8.0);
    b.vehicle(&[l], 20.0, 9.0);
    b.build()
}

/// Corridor of nine lanes whose neighbors start and end at different points,
/// so the lanes are split into 18 pieces forming four edges.
///
/// `l1` runs the full length; `l2..l5` follow one another along its left
/// side; `l10` and `l11` run full length to its right; `l12` and `l13` sit
/// left of `l3` and `l4`.
pub fn fig2_corridor() -> Scenario {
    let mut b = FixtureBuilder::new("corridor_split");
    let w = LANE_WIDTH;
    let seg = |b: &mut FixtureBuilder, id: LaneId, y: f64, x0: f64, x1: f64| {
        b.lane_with_id(id, line(Point2::new(x0, y), Point2::new(x1, y), 5.0), 13.4)
    };
    seg(&mut b, 1, 0.0, 0.0, 100.0);
    seg(&mut b, 2, w, 0.0, 25.0);
    seg(&mut b, 3, w, 25.0, 50.0);
    seg(&mut b, 4, w, 50.0, 75.0);
    seg(&mut b, 5, w, 75.0, 100.0);
    seg(&mut b, 10, -w, 0.0, 100.0);
    seg(&mut b, 11, -2.0 * w, 0.0, 100.0);
    seg(&mut b, 12, 2.0 * w, 25.0, 50.0);
    seg(&mut b, 13, 2.0 * w, 50.0, 75.0);
    for left in [2, 3, 4, 5] {
        b.adjacent(1, left);
    }
    b.adjacent(10, 1);
    b.adjacent(11, 10);
    b.adjacent(3, 12);
    b.adjacent(4, 13);
    b.curb_right_of(11);
    b.vehicle(&[1], 5.0, 10.0);
    b.vehicle(&[10], 15.0, 9.0);
    b.vehicle(&[2, 3, 4, 5], 2.0, 8.0);
    b.build()
}

/// Lane ids of the turning lanes in `fig3_intersection`, c1..c6.
pub const FIG3_TURNS: [LaneId; 6] = [101, 102, 103, 104, 105, 106];

/// Intersection where c1, c2, c3 diverge from one approach lane, c3 and c4
/// run side by side, c4 and c5 diverge from the neighboring approach lane and
/// c6 merges with c5.
pub fn fig3_intersection() -> Scenario {
    let mut b = FixtureBuilder::new("intersection_groups");
    let h = LANE_WIDTH / 2.0;
    let w = LANE_WIDTH;
    let v = 11.0;
    // eastbound approach: a_r (outer) and a_l (inner)
    let a_r = b.lane(line(Point2::new(-70.0, -h - w), Point2::new(-10.0, -h - w), 2.0), v);
    let a_l = b.lane(line(Point2::new(-70.0, -h), Point2::new(-10.0, -h), 2.0), v);
    b.adjacent(a_r, a_l);
    let e_r = b.lane(line(Point2::new(10.0, -h - w), Point2::new(70.0, -h - w), 2.0), v);
    let e_l = b.lane(line(Point2::new(10.0, -h), Point2::new(70.0, -h), 2.0), v);
    b.adjacent(e_r, e_l);
    // northbound departure: inner and outer lanes east of the centerline
    let n_out_r = b.lane(line(Point2::new(h + w, 10.0), Point2::new(h + w, 70.0), 2.0), v);
    let n_out_l = b.lane(line(Point2::new(h, 10.0), Point2::new(h, 70.0), 2.0), v);
    b.adjacent(n_out_r, n_out_l);
    // southbound approach and departure west of the centerline
    let s_in = b.lane(line(Point2::new(-h, 70.0), Point2::new(-h, 10.0), 2.0), v);
    let s_out = b.lane(line(Point2::new(-h, -10.0), Point2::new(-h, -70.0), 2.0), v);

    let stop_l = Point2::new(-10.0, -h);
    let stop_r = Point2::new(-10.0, -h - w);
    b.lane_with_id(101, bezier(stop_l, 0.0, Point2::new(h, 10.0), FRAC_PI_2, 1.0), v);
    b.lane_with_id(102, bezier(stop_l, 0.0, Point2::new(h + w, 10.0), FRAC_PI_2, 1.0), v);
    b.lane_with_id(103, line(stop_l, Point2::new(10.0, -h), 1.0), v);
    b.lane_with_id(104, line(stop_r, Point2::new(10.0, -h - w), 1.0), v);
    b.lane_with_id(105, bezier(stop_r, 0.0, Point2::new(-h, -10.0), -FRAC_PI_2, 1.0), v);
    b.lane_with_id(106, line(Point2::new(-h, 10.0), Point2::new(-h, -10.0), 1.0), v);
    b.adjacent(104, 103);

    b.curb_right_of(a_r);
    b.curb_right_of(e_r);
    b.curb_right_of(n_out_r);
    b.curb_right_of(s_in);
    b.curb_right_of(s_out);
    b.vehicle(&[a_l, 103, e_l], 10.0, 10.0);
    b.vehicle(&[a_r, 104, e_r], 20.0, 9.0);
    b.vehicle(&[s_in, 106, s_out], 5.0, 8.0);
    b.vehicle(&[a_l, 101, n_out_l], 35.0, 8.0);
    b.build()
}

/// Four arms, two inbound lanes and one outbound lane each: the right lane
/// turns right or goes straight, the left lane turns left.
pub fn four_way() -> (Scenario, JunctionLanes) {
    let mut b = FixtureBuilder::new("four_way");
    let arms = four_arms(2, 1, 60.0);
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 12.0, 11.0, plan_split);
    approach_traffic(&mut b, &j, 20.0, 9.0);
    (b.build(), j)
}

/// `four_way` with signal heads on the east and west approaches.
pub fn four_way_signalized() -> (Scenario, JunctionLanes) {
    let mut b = FixtureBuilder::new("four_way_signalized");
    let arms = four_arms(2, 1, 60.0);
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 12.0, 11.0, plan_split);
    for arm in [0, 2] {
        for &lane in &j.inbound[arm] {
            b.observe_all(lane, SignalState::Green);
        }
    }
    approach_traffic(&mut b, &j, 20.0, 9.0);
    (b.build(), j)
}

/// Single-lane four-way junction with a stop sign on every approach.
pub fn four_way_all_stop() -> (Scenario, JunctionLanes) {
    let mut b = FixtureBuilder::new("four_way_all_stop");
    let arms = four_arms(1, 1, 60.0);
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 10.0, 11.0, plan_all);
    for arm in &j.inbound {
        b.stop_sign(arm[0]);
    }
    // straight-through traffic from every arm
    for k in 0..4 {
        let lane = j.inbound[k][0];
        let &(_, _, m, jo, turn) = j.turns_from(k, 0).find(|t| t.2 == (k + 2) % 4).unwrap();
        b.vehicle(&[lane, turn, j.outbound[m][jo]], 30.0 + 3.0 * k as f64, 8.0);
    }
    (b.build(), j)
}

pub fn four_way_single() -> (Scenario, JunctionLanes) {
    let mut b = FixtureBuilder::new("four_way_single");
    let arms = four_arms(1, 1, 60.0);
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 10.0, 11.0, plan_all);
    approach_traffic(&mut b, &j, 25.0, 9.0);
    (b.build(), j)
}

pub fn tee_junction() -> (Scenario, JunctionLanes) {
    let mut b = FixtureBuilder::new("tee_junction");
    let arms: Vec<Arm> = [0.0, FRAC_PI_2, PI].iter().map(|&a| Arm::new(a, 1, 1, 60.0)).collect();
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 10.0, 11.0, plan_all);
    approach_traffic(&mut b, &j, 25.0, 9.0);
    (b.build(), j)
}

pub fn wye_junction() -> (Scenario, JunctionLanes) {
    let mut b = FixtureBuilder::new("wye_junction");
    let arms: Vec<Arm> = (0..3).map(|k| Arm::new(FRAC_PI_2 + k as f64 * TAU / 3.0, 1, 1, 60.0)).collect();
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 12.0, 11.0, plan_all);
    approach_traffic(&mut b, &j, 25.0, 9.0);
    (b.build(), j)
}

pub fn six_way() -> (Scenario, JunctionLanes) {
    let mut b = FixtureBuilder::new("six_way");
    let arms: Vec<Arm> = (0..6).map(|k| Arm::new(k as f64 * TAU / 6.0, 1, 1, 60.0)).collect();
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 16.0, 11.0, plan_all);
    approach_traffic(&mut b, &j, 25.0, 9.0);
    (b.build(), j)
}

/// Single-lane roundabout with four arms, circulating counter-clockwise.
pub fn roundabout() -> Scenario {
    let mut b = FixtureBuilder::new("roundabout");
    let w = LANE_WIDTH;
    let c = Point2::new(0.0, 0.0);
    let rr = 20.0;
    let alpha = 0.35;
    let arm_r = rr + 14.0;
    let v = 9.0;
    let n = 4;
    let thetas: Vec<f64> = (0..n).map(|k| k as f64 * TAU / n as f64).collect();
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    let mut entries = Vec::new();
    let mut exits = Vec::new();
    let mut shorts = Vec::new();
    let mut longs = Vec::new();
    for &th in &thetas {
        let u = Point2::from_heading(th);
        let rn_in = u.left_normal();
        let a = c + u * arm_r + rn_in * (w / 2.0);
        let bpt = c + u * arm_r - rn_in * (w / 2.0);
        ins.push(b.lane(line(c + u * (arm_r + 60.0) + rn_in * (w / 2.0), a, 2.0), v));
        outs.push(b.lane(line(bpt, c + u * (arm_r + 60.0) - rn_in * (w / 2.0), 2.0), v));
        let e = c + Point2::from_heading(th + alpha) * rr;
        let x = c + Point2::from_heading(th - alpha) * rr;
        entries.push(b.lane(bezier(a, th + PI, e, th + alpha + FRAC_PI_2, 1.0), v));
        exits.push(b.lane(bezier(x, th - alpha + FRAC_PI_2, bpt, th, 1.0), v));
        shorts.push(b.lane(arc(c, rr, th - alpha, th + alpha, 1.0), v));
    }
    for k in 0..n {
        let a0 = thetas[k] + alpha;
        let a1 = thetas[(k + 1) % n] - alpha + if k + 1 == n { TAU } else { 0.0 };
        longs.push(b.lane(arc(c, rr, a0, a1, 1.0), v));
    }
    for k in 0..n {
        b.curb_right_of(ins[k]);
        b.curb_right_of(outs[k]);
    }
    // clockwise, so the circulating lane lies to the left
    b.curb(arc(c, rr - w / 2.0 - 0.5, TAU, 0.0, 1.0));
    for k in 0..n {
        let m = (k + 2) % n;
        let mut path = vec![ins[k], entries[k], longs[k]];
        let mut at = (k + 1) % n;
        loop {
            if at == m {
                path.push(exits[at]);
                path.push(outs[at]);
                break;
            }
            path.push(shorts[at]);
            path.push(longs[at]);
            at = (at + 1) % n;
        }
        b.vehicle(&path, 20.0, 7.0);
    }
    b.build()
}

/// Lanes of one grid cell junction, for callers placing traffic.
#[derive(Debug, Clone)]
pub struct Grid {
    pub scenario: Scenario,
    pub junctions: Vec<JunctionLanes>,
}

/// 2x2 grid of single-lane four-way junctions `spacing` meters apart. The
/// south-west junction is an all-way stop; the others use priority rules.
pub fn grid(spacing: f64, vehicles_per_arm: usize) -> Grid {
    let mut b = FixtureBuilder::new("grid_2x2");
    let radius = 10.0;
    let inner = spacing / 2.0 - radius;
    let outer = 60.0;
    let centers = [Point2::new(0.0, 0.0), Point2::new(spacing, 0.0), Point2::new(0.0, spacing), Point2::new(spacing, spacing)];
    let mut junctions = Vec::new();
    for (ji, &c) in centers.iter().enumerate() {
        let east_inner = ji % 2 == 0;
        let north_inner = ji < 2;
        let len = |inner_side: bool| if inner_side { inner } else { outer };
        let arms = vec![
            Arm::new(0.0, 1, 1, len(east_inner)),
            Arm::new(FRAC_PI_2, 1, 1, len(north_inner)),
            Arm::new(PI, 1, 1, len(!east_inner)),
            Arm::new(-FRAC_PI_2, 1, 1, len(!north_inner)),
        ];
        let j = junction(&mut b, c, &arms, radius, 11.0, plan_all);
        if ji == 0 {
            for arm in &j.inbound {
                b.stop_sign(arm[0]);
            }
        }
        junctions.push(j);
    }
    // Vehicles on the outer approaches heading into the grid.
    let outer_arms: [(usize, usize); 8] = [(0, 2), (0, 3), (1, 0), (1, 3), (2, 2), (2, 1), (3, 0), (3, 1)];
    for (n, &(ji, arm)) in outer_arms.iter().enumerate() {
        let lane = junctions[ji].inbound[arm][0];
        let straight = junctions[ji].turns_from(arm, 0).find(|t| t.2 == (arm + 2) % 4).map(|t| (t.4, t.2)).unwrap();
        let next = junctions[ji].outbound[straight.1][0];
        for q in 0..vehicles_per_arm {
            let s0 = 5.0 + 14.0 * q as f64 + (n % 3) as f64;
            b.vehicle(&[lane, straight.0, next], s0, 8.0);
        }
    }
    Grid { scenario: b.build(), junctions }
}

/// Single-lane straight corridor with `n` vehicles spaced along it.
pub fn single_lane_corridor(n: usize, length: f64) -> Scenario {
    let mut b = FixtureBuilder::new("single_lane_corridor");
    let lane = b.lane(line(Point2::new(0.0, 0.0), Point2::new(length, 0.0), 10.0), 13.4);
    b.curb_right_of(lane);
    b.curb_left_of(lane);
    let path = b.path(&[lane]);
    for k in 0..n {
        let s0 = 10.0 + 22.0 * k as f64;
        let v = 6.0 + (k % 4) as f64 * 2.0;
        b.vehicle_on(&path, s0, v, 0.0, ObjectType::Vehicle);
    }
    b.build()
}

/// Parallel rows of consecutive lane segments with random break points;
/// every overlapping pair in neighboring rows is declared adjacent.
pub fn random_corridor(seed: u64, rows: usize, length: f64) -> Scenario {
    let mut rng = substream(seed, domain::FIXTURE, rows as u64);
    let mut b = FixtureBuilder::new(&format!("random_corridor_{seed}"));
    let mut row_lanes: Vec<Vec<(LaneId, f64, f64)>> = Vec::new();
    for r in 0..rows {
        let y = r as f64 * LANE_WIDTH;
        let mut cuts = vec![0.0];
        let mut x = 0.0;
        loop {
            x += rng.gen_range(12.0..60.0);
            if x >= length - 12.0 {
                break;
            }
            cuts.push((x * 100.0f64).round() / 100.0);
        }
        cuts.push(length);
        let mut lanes = Vec::new();
        for wdw in cuts.windows(2) {
            let (x0, x1) = (wdw[0], wdw[1]);
            let mut pts = vec![Point2::new(x0, y)];
            let mut xs = (x0 / 4.0).floor() * 4.0 + 4.0;
            while xs < x1 - 1e-6 {
                pts.push(Point2::new(xs, y));
                xs += 4.0;
            }
            pts.push(Point2::new(x1, y));
            pts.dedup_by(|q, p| p.dist(*q) < 1e-6);
            let id = b.lane(pts, 13.4);
            lanes.push((id, x0, x1));
        }
        row_lanes.push(lanes);
    }
    for r in 1..rows {
        for &(a, a0, a1) in &row_lanes[r - 1] {
            for &(c, c0, c1) in &row_lanes[r] {
                if a1.min(c1) - a0.max(c0) > 1.0 {
                    b.adjacent(a, c);
                }
            }
        }
    }
    let first = row_lanes[0].iter().map(|l| l.0).collect::<Vec<_>>();
    b.vehicle(&first, 3.0, 10.0);
    b.build()
}

/// Signalized approach where the light is yellow at the end of history and
/// a vehicle is near its comfortable stopping distance.
pub fn dilemma_zone() -> Scenario {
    let mut b = FixtureBuilder::new("dilemma_zone");
    let arms = four_arms(1, 1, 120.0);
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 10.0, 13.4, plan_all);
    let lane = j.inbound[2][0];
    for t in 0..b.history_length {
        let state = if t + 3 < b.history_length { SignalState::Green } else { SignalState::Yellow };
        b.observe(lane, t, state);
    }
    let &(_, _, m, jo, turn) = j.turns_from(2, 0).find(|t| t.2 == 0).unwrap();
    let len = Polyline::new(b.lane_points(lane).to_vec()).unwrap().length();
    // 31 m short of the line when history ends; braking from 12 m/s takes about 29 m
    let s0 = len - 12.0 - 31.0;
    b.vehicle(&[lane, turn, j.outbound[m][jo]], s0, 12.0);
    b.build()
}

/// Two-lane signalized approach with a vehicle standing at each stop line
/// under an observed red; the other arms are empty.
pub fn red_queue() -> (Scenario, JunctionLanes) {
    let mut b = FixtureBuilder::new("red_queue");
    let arms = four_arms(2, 1, 60.0);
    let j = junction(&mut b, Point2::new(0.0, 0.0), &arms, 12.0, 11.0, plan_split);
    for &lane in &j.inbound[2] {
        b.observe_all(lane, SignalState::Red);
    }
    for i in 0..2 {
        let lane = j.inbound[2][i];
        let path = b.path(&[lane]);
        // front bumper half a meter short of the line
        b.vehicle_on(&path, path.length() - 2.75, 0.0, 0.0, ObjectType::Vehicle);
    }
    (b.build(), j)
}

#[derive(Debug, Clone)]
pub struct Named {
    pub name: &'static str,
    pub scenario: Scenario,
}

/// The conversion benchmark: twenty-plus scenes of different shapes.
pub fn conversion_suite() -> Vec<Named> {
    let mut v = vec![
        Named { name: "straight_1", scenario: straight_road(1, 200.0) },
        Named { name: "straight_2", scenario: straight_road(2, 200.0) },
        Named { name: "straight_3", scenario: straight_road(3, 300.0) },
        Named { name: "collinear_segments", scenario: collinear_segments() },
        Named { name: "curved_road", scenario: curved_road() },
        Named { name: "s_curve", scenario: s_curve() },
        Named { name: "lane_drop", scenario: lane_drop() },
        Named { name: "lane_add", scenario: lane_add() },
        Named { name: "on_ramp_merge", scenario: on_ramp_merge() },
        Named { name: "off_ramp_diverge", scenario: off_ramp_diverge() },
        Named { name: "corridor_split", scenario: fig2_corridor() },
        Named { name: "intersection_groups", scenario: fig3_intersection() },
        Named { name: "tee_junction", scenario: tee_junction().0 },
        Named { name: "wye_junction", scenario: wye_junction().0 },
        Named { name: "four_way", scenario: four_way().0 },
        Named { name: "four_way_single", scenario: four_way_single().0 },
        Named { name: "four_way_signalized", scenario: four_way_signalized().0 },
        Named { name: "four_way_all_stop", scenario: four_way_all_stop().0 },
        Named { name: "six_way", scenario: six_way().0 },
        Named { name: "roundabout", scenario: roundabout() },
        Named { name: "grid_2x2", scenario: grid(120.0, 2).scenario },
        Named { name: "dilemma_zone", scenario: dilemma_zone() },
    ];
    for seed in 0..3 {
        v.push(Named { name: "random_corridor", scenario: random_corridor(seed, 6, 200.0) });
    }
    v
}
