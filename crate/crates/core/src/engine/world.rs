//! Agent state and the synchronous step.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, RoutingConfig};
use crate::demand::{infer_route, AgentSpec, BehaviorParams, Control, Placement, Route};
use crate::geom::{wrap_angle, Point2, Polyline};
use crate::net::{ConnId, EdgeId, Movement, Network, NodeId};
use crate::overrides::{self, Ballistic, OverrideClass, Pose};
use crate::rng::{derive_seed, domain, substream};
use crate::scenario::{ObjectType, Scenario, TrackId};
use crate::signal::{LightState, SignalProgram};

use super::junction::conflict_table;
use super::krauss::{desired_speed, safe_speed};

/// Speeds below this count as stopped, m/s.
pub const STOPPED: f64 = 0.1;
const LAT_MARGIN: f64 = 0.2;
const LANE_CHANGE_WIDTH: f64 = 3.5;
/// Extra room past the stop-line gap within which a halt counts as a full stop.
const FULL_STOP_WINDOW: f64 = 1.5;
const YIELD_STANDOFF: f64 = 0.3;
/// Steps stuck at a lane end before the route is recomputed from the lane held.
const REROUTE_AFTER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Seg {
    Lane { edge: EdgeId, lane: usize },
    Conn(ConnId),
}

fn seg_shape(net: &Network, seg: Seg) -> &Polyline {
    match seg {
        Seg::Lane { edge, lane } => &net.lane(edge, lane).shape,
        Seg::Conn(c) => &net.connection(c).shape,
    }
}

fn seg_speed_limit(net: &Network, seg: Seg) -> f64 {
    match seg {
        Seg::Lane { edge, lane } => net.lane(edge, lane).speed_limit,
        Seg::Conn(c) => {
            let c = net.connection(c);
            net.lane(c.from_edge, c.from_lane).speed_limit.min(net.lane(c.to_edge, c.to_lane).speed_limit)
        }
    }
}

/// Segment sequence for a route, entering its first edge on `lane`.
fn route_segments(net: &Network, route: &Route, lane: usize, on_connection: bool) -> Vec<Seg> {
    let mut segs = Vec::new();
    let mut lane = lane;
    for (i, &edge) in route.edges.iter().enumerate() {
        if !(i == 0 && on_connection) {
            segs.push(Seg::Lane { edge, lane });
        }
        if let Some(&c) = route.connections.get(i) {
            segs.push(Seg::Conn(c));
            lane = net.connection(c).to_lane;
        }
    }
    segs
}

#[derive(Debug, Clone)]
struct Vehicle {
    params: BehaviorParams,
    segs: Vec<Seg>,
    seg: usize,
    s: f64,
    /// Signed offset from the segment centerline, left positive.
    lat: f64,
    /// Step at which a standing vehicle was first allowed to move.
    release: Option<usize>,
    waiting_since: Option<usize>,
    full_stop: Option<(ConnId, usize)>,
    passing: Option<ConnId>,
    eta: f64,
    yellow_choice: Option<(ConnId, bool)>,
    stuck: usize,
    gap_factor: f64,
    hold_conn: Option<ConnId>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
enum Ctl {
    Engine(Box<Vehicle>),
    Frozen,
    Ballistic(Ballistic),
    Replay { vx: f64, vy: f64, base: Pose, base_step: usize },
    Absent,
}

#[derive(Debug, Clone)]
struct Agent {
    id: TrackId,
    kind: ObjectType,
    length: f64,
    width: f64,
    class: OverrideClass,
    /// Class assigned at initialization; holds may later release.
    initial_class: OverrideClass,
    pose: Pose,
    valid: bool,
    ctl: Ctl,
    exited_at: Option<usize>,
}

/// Immutable per-step view of an engine vehicle.
#[derive(Debug, Clone, Copy)]
struct EngSnap {
    seg: Seg,
    s: f64,
    passing: Option<ConnId>,
    eta: f64,
    full_stop_step: Option<usize>,
    decel: f64,
    tau: f64,
    min_gap: f64,
    heading: f64,
}

#[derive(Debug, Clone, Copy)]
struct Snap {
    pos: Point2,
    heading: f64,
    speed: f64,
    length: f64,
    width: f64,
    valid: bool,
    eng: Option<EngSnap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRollout {
    pub id: TrackId,
    pub object_type: ObjectType,
    pub length: f64,
    pub width: f64,
    pub class: OverrideClass,
    /// One state per simulated step.
    pub states: Vec<SimState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub scenario_id: String,
    pub seed: u64,
    /// Absolute time index of the first simulated step.
    pub start_step: usize,
    pub horizon: usize,
    pub agents: Vec<AgentRollout>,
}

impl Rollout {
    pub fn step_index(&self, k: usize) -> usize {
        self.start_step + k
    }
}

/// Read-only context shared by all agents in a step.
struct Ctx<'a> {
    net: &'a Network,
    programs: &'a BTreeMap<NodeId, SignalProgram>,
    conflicts: &'a [Vec<ConnId>],
    engine: &'a EngineConfig,
    routing: &'a RoutingConfig,
    dt: f64,
    seed: u64,
}

impl Ctx<'_> {
    fn signal(&self, c: ConnId, t: usize) -> Option<LightState> {
        let node = self.net.connection(c).via_node;
        self.programs.get(&node).and_then(|p| p.state(t, c))
    }
}

pub struct World<'a> {
    net: &'a Network,
    programs: &'a BTreeMap<NodeId, SignalProgram>,
    conflicts: Vec<Vec<ConnId>>,
    engine: EngineConfig,
    routing: RoutingConfig,
    dt: f64,
    seed: u64,
    scenario_id: String,
    start_step: usize,
    agents: Vec<Agent>,
}

impl<'a> World<'a> {
    /// Initial world at the last history step. Every track gets an agent;
    /// tracks absent at that step stay invalid.
    pub fn new(
        scenario: &Scenario,
        net: &'a Network,
        programs: &'a BTreeMap<NodeId, SignalProgram>,
        specs: &[AgentSpec],
        engine: &EngineConfig,
        routing: &RoutingConfig,
        seed: u64,
    ) -> Self {
        let now = scenario.current_step();
        let by_id: HashMap<TrackId, &AgentSpec> = specs.iter().map(|s| (s.track_id, s)).collect();
        let bounds = scenario.bounds();
        let mut agents = Vec::with_capacity(scenario.tracks.len());
        for track in &scenario.tracks {
            let (length, width) = track.dims(now).unwrap_or((4.5, 2.0));
            let mut agent = Agent {
                id: track.id,
                kind: track.object_type,
                length,
                width,
                class: OverrideClass::Normal,
                initial_class: OverrideClass::Normal,
                pose: Pose { x: 0.0, y: 0.0, heading: 0.0, speed: 0.0 },
                valid: false,
                ctl: Ctl::Absent,
                exited_at: None,
            };
            let (Some(state), Some(spec)) = (track.state_at(now), by_id.get(&track.id)) else {
                agents.push(agent);
                continue;
            };
            agent.pose = Pose { x: state.x, y: state.y, heading: state.heading, speed: state.speed() };
            agent.valid = true;
            let class = if engine.overrides_enabled { spec.override_class } else { OverrideClass::Normal };
            agent.class = class;
            agent.initial_class = class;
            agent.ctl = match (spec.control, class) {
                (Control::Replay, _) => Ctl::Replay { vx: state.vx, vy: state.vy, base: agent.pose, base_step: now },
                (_, OverrideClass::ParkedHold | OverrideClass::OffnetHold) => Ctl::Frozen,
                (_, OverrideClass::OffnetBallistic) => Ctl::Ballistic(Ballistic::from_track(track, now, scenario.timestep_s, bounds)),
                _ => match (&spec.route, spec.params, spec.placement) {
                    (Some(route), Some(params), placement) if placement.on_network() && !route.edges.is_empty() => {
                        let (lane, s, lat, on_conn) = match placement {
                            Placement::Lane { lane, offset, lateral, .. } => (lane, offset, lateral, false),
                            Placement::Connection { offset, lateral, connection } => (net.connection(connection).from_lane, offset, lateral, true),
                            Placement::OffNetwork { .. } => unreachable!(),
                        };
                        let mut rng = substream(seed, domain::ENGINE, track.id as u64);
                        let gap_factor = 1.0 + params.jm_sigma_minor * (rng.gen::<f64>() - 0.5);
                        let segs = route_segments(net, route, lane, on_conn);
                        let hold_conn = (class == OverrideClass::RedSignalHold)
                            .then(|| overrides::upcoming_connection(spec, net).map(|x| x.0))
                            .flatten();
                        Ctl::Engine(Box::new(Vehicle {
                            params,
                            segs,
                            seg: 0,
                            s,
                            lat,
                            release: None,
                            waiting_since: None,
                            full_stop: None,
                            passing: None,
                            eta: f64::INFINITY,
                            yellow_choice: None,
                            stuck: 0,
                            gap_factor,
                            hold_conn,
                            rng,
                        }))
                    }
                    // no usable network position: nothing can drive it
                    _ => Ctl::Frozen,
                },
            };
            agents.push(agent);
        }
        World {
            net,
            programs,
            conflicts: conflict_table(net),
            engine: engine.clone(),
            routing: routing.clone(),
            dt: scenario.timestep_s,
            seed,
            scenario_id: scenario.id.clone(),
            start_step: now + 1,
            agents,
        }
    }

    fn snapshot(&self) -> Vec<Snap> {
        self.agents
            .iter()
            .map(|a| Snap {
                pos: a.pose.position(),
                heading: a.pose.heading,
                speed: a.pose.speed,
                length: a.length,
                width: a.width,
                valid: a.valid,
                eng: match &a.ctl {
                    Ctl::Engine(v) if a.valid => Some(EngSnap {
                        seg: v.segs[v.seg],
                        s: v.s,
                        passing: v.passing,
                        eta: v.eta,
                        full_stop_step: v.full_stop.map(|f| f.1),
                        decel: v.params.decel,
                        tau: v.params.tau,
                        min_gap: v.params.min_gap,
                        heading: a.pose.heading,
                    }),
                    _ => None,
                },
            })
            .collect()
    }

    /// Advances every agent from step `t - 1` to step `t`.
    pub fn step(&mut self, t: usize) {
        let snap = self.snapshot();
        let mut on_seg: HashMap<Seg, Vec<usize>> = HashMap::new();
        for (i, s) in snap.iter().enumerate() {
            if let Some(e) = s.eng {
                on_seg.entry(e.seg).or_default().push(i);
            }
        }
        let ctx = Ctx {
            net: self.net,
            programs: self.programs,
            conflicts: &self.conflicts,
            engine: &self.engine,
            routing: &self.routing,
            dt: self.dt,
            seed: self.seed,
        };
        let snap = &snap;
        let on_seg = &on_seg;
        self.agents.par_iter_mut().enumerate().for_each(|(i, a)| a.advance(i, t, snap, on_seg, &ctx));
    }

    pub fn states(&self) -> Vec<SimState> {
        self.agents
            .iter()
            .map(|a| SimState { x: a.pose.x, y: a.pose.y, heading: a.pose.heading, speed: a.pose.speed, valid: a.valid })
            .collect()
    }

    /// Runs `horizon` steps and collects the trajectory.
    pub fn run(mut self, horizon: usize) -> Rollout {
        let mut per_agent: Vec<Vec<SimState>> = vec![Vec::with_capacity(horizon); self.agents.len()];
        for k in 0..horizon {
            self.step(self.start_step + k);
            for (i, s) in self.states().into_iter().enumerate() {
                per_agent[i].push(s);
            }
        }
        Rollout {
            scenario_id: self.scenario_id.clone(),
            seed: self.seed,
            start_step: self.start_step,
            horizon,
            agents: self
                .agents
                .iter()
                .zip(per_agent)
                .map(|(a, states)| AgentRollout { id: a.id, object_type: a.kind, length: a.length, width: a.width, class: a.initial_class, states })
                .collect(),
        }
    }
}

/// Lane-following path from a vehicle's position forward.
struct Ahead {
    line: Polyline,
    /// (path arclength where the segment starts, segment index in the plan)
    starts: Vec<(f64, usize)>,
}

fn path_ahead(net: &Network, v: &Vehicle, look: f64) -> Ahead {
    let mut pts: Vec<Point2> = Vec::new();
    let mut starts = Vec::new();
    let mut acc = 0.0;
    for k in v.seg..v.segs.len() {
        let shape = seg_shape(net, v.segs[k]);
        let from = if k == v.seg { v.s.clamp(0.0, shape.length()) } else { 0.0 };
        starts.push((acc, k));
        let piece = shape.slice(from, shape.length());
        for p in piece {
            match pts.last() {
                Some(q) if q.dist(p) < 1e-6 => {}
                Some(q) => {
                    acc += q.dist(p);
                    pts.push(p);
                }
                None => pts.push(p),
            }
        }
        if acc >= look {
            break;
        }
    }
    if pts.len() < 2 {
        let shape = seg_shape(net, v.segs[v.seg]);
        let p = shape.point_at(v.s);
        pts = vec![p, p + Point2::from_heading(shape.heading_at(v.s)) * 0.01];
    }
    Ahead { line: Polyline::new(pts).expect("non-degenerate path"), starts }
}

/// Half extents of a box along and across a direction at relative angle `dh`.
fn extents(length: f64, width: f64, dh: f64) -> (f64, f64) {
    let (s, c) = dh.sin_cos();
    (0.5 * length * c.abs() + 0.5 * width * s.abs(), 0.5 * length * s.abs() + 0.5 * width * c.abs())
}

struct Constraint {
    /// Usable gap for the Krauss formula.
    gap: f64,
    v_leader: f64,
    /// Bumper gap for the hard no-overlap cap; none for virtual leaders.
    hard: Option<f64>,
}

impl Agent {
    fn advance(&mut self, me: usize, t: usize, snap: &[Snap], on_seg: &HashMap<Seg, Vec<usize>>, ctx: &Ctx) {
        if !self.valid {
            return;
        }
        let dt = ctx.dt;
        match &mut self.ctl {
            Ctl::Absent => {}
            Ctl::Frozen => self.pose = overrides::apply(self.class, self.pose, self.pose, None, dt),
            Ctl::Ballistic(b) => {
                let b = *b;
                self.pose = overrides::apply(OverrideClass::OffnetBallistic, self.pose, self.pose, Some(&b), dt);
            }
            Ctl::Replay { vx, vy, base, base_step } => {
                let k = (t - *base_step) as f64 * dt;
                self.pose = Pose { x: base.x + *vx * k, y: base.y + *vy * k, heading: base.heading, speed: base.speed };
            }
            Ctl::Engine(v) => {
                if self.class == OverrideClass::RedSignalHold {
                    let green = v.hold_conn.is_none_or(|c| ctx.signal(c, t) == Some(LightState::Green));
                    if !green {
                        self.pose = overrides::apply(self.class, self.pose, self.pose, None, dt);
                        return;
                    }
                    self.class = OverrideClass::Normal;
                }
                let exited = drive(v, me, t, self.length, self.width, &mut self.pose, snap, on_seg, ctx, self.id);
                if exited {
                    self.valid = false;
                    self.exited_at = Some(t);
                    self.ctl = Ctl::Absent;
                }
            }
        }
    }
}

/// One engine update; returns true when the vehicle ran off its route.
#[allow(clippy::too_many_arguments)]
fn drive(
    v: &mut Vehicle,
    me: usize,
    t: usize,
    length: f64,
    width: f64,
    pose: &mut Pose,
    snap: &[Snap],
    on_seg: &HashMap<Seg, Vec<usize>>,
    ctx: &Ctx,
    id: TrackId,
) -> bool {
    let net = ctx.net;
    let p = v.params;
    let dt = ctx.dt;
    let speed = pose.speed;
    let my_pos = pose.position();
    let look = (speed * p.tau + speed * speed / (2.0 * p.decel) + 2.0 * speed + 25.0).min(ctx.engine.lookahead_m).max(25.0);
    let ahead = path_ahead(net, v, look);
    let mut cons: Vec<Constraint> = Vec::new();

    // Physical obstacles on the path.
    for (j, o) in snap.iter().enumerate() {
        if j == me || !o.valid || o.pos.dist(my_pos) > look + o.length + 5.0 {
            continue;
        }
        let pr = ahead.line.project(o.pos);
        if pr.s <= 1e-6 {
            continue;
        }
        let dh = wrap_angle(o.heading - ahead.line.heading_at(pr.s));
        let (along_ext, lat_ext) = extents(o.length, o.width, dh);
        let band = 0.5 * width + lat_ext + LAT_MARGIN;
        if pr.lateral.abs().min((pr.lateral - v.lat).abs()) > band {
            continue;
        }
        // Two vehicles that each see the other ahead: the one further along
        // in the other's frame keeps going.
        if let Some(e) = o.eng {
            let dir = Point2::from_heading(e.heading);
            let rel = my_pos - o.pos;
            let mine_in_theirs = rel.dot(dir);
            if mine_in_theirs > 0.0 && rel.cross(dir).abs() <= 0.5 * o.width + 0.5 * width.max(length) + LAT_MARGIN {
                let theirs_in_mine = pr.s;
                if mine_in_theirs > theirs_in_mine || (mine_in_theirs == theirs_in_mine && me < j) {
                    continue;
                }
            }
        }
        let bumper = pr.s - along_ext - 0.5 * length;
        let v_l = (o.speed * dh.cos()).max(0.0);
        let (gap, hard) = (bumper - p.min_gap, Some(bumper));
        cons.push(Constraint { gap, v_leader: v_l, hard });
    }

    // Junctions ahead.
    let current = v.segs[v.seg];
    let lane_now = match current {
        Seg::Lane { edge, lane } => Some((edge, lane)),
        Seg::Conn(_) => None,
    };
    let mut first = true;
    let mut passing = None;
    let mut eta = f64::INFINITY;
    for &(start, k) in ahead.starts.iter().skip(1) {
        let Seg::Conn(c) = v.segs[k] else { continue };
        let dist = start - 0.5 * length;
        if dist > look {
            break;
        }
        let prev_lane = match v.segs[k - 1] {
            Seg::Lane { lane, .. } => lane,
            Seg::Conn(_) => net.connection(c).from_lane,
        };
        let decision = junction_decision(v, c, dist, speed, prev_lane, first, t, snap, on_seg, ctx, me, length);
        if first {
            eta = dist.max(0.0) / speed.max(1.0);
        }
        match decision {
            Some(standoff) => {
                cons.push(Constraint { gap: dist - standoff, v_leader: 0.0, hard: None });
                break;
            }
            None => {
                if first {
                    passing = Some(c);
                }
            }
        }
        first = false;
    }
    v.passing = passing;
    v.eta = eta;

    // Lane change toward the lane the next connection leaves from.
    if let (Some((edge, lane)), Some(Seg::Conn(c))) = (lane_now, v.segs.get(v.seg + 1).copied()) {
        let target = net.connection(c).from_lane;
        if target != lane {
            if ctx.engine.lane_changes_enabled && v.lat.abs() < 0.3 {
                let next = if target > lane { lane + 1 } else { lane - 1 };
                if let Some((s_new, lat_new)) = lane_change_ok(v, edge, next, my_pos, speed, length, width, me, snap, ctx) {
                    v.segs[v.seg] = Seg::Lane { edge, lane: next };
                    v.s = s_new;
                    v.lat = lat_new;
                }
            }
            let remaining = seg_shape(net, v.segs[v.seg]).length() - v.s - 0.5 * length;
            if speed < STOPPED && remaining < 8.0 {
                v.stuck += 1;
            }
            if v.stuck > REROUTE_AFTER {
                reroute(v, t, id, ctx);
            }
        } else {
            v.stuck = 0;
        }
    }

    // Speed update.
    let limit = seg_speed_limit(net, v.segs[v.seg]);
    let v_des = desired_speed(p.speed_factor, limit);
    let mut v_new = (speed + p.accel * dt).min(v_des);
    for c in &cons {
        v_new = v_new.min(safe_speed(speed, c.v_leader, c.gap, p.decel, p.tau));
    }
    let wants_to_move = v_new >= STOPPED;
    let dawdle = p.sigma * p.accel * dt * v.rng.gen::<f64>();
    v_new = (v_new - dawdle).max(0.0);
    for c in &cons {
        if let Some(b) = c.hard {
            v_new = v_new.min(((b - 0.05) / dt).max(0.0));
        }
    }
    // Departure from a standstill waits out the startup delay.
    if speed < STOPPED {
        v.waiting_since.get_or_insert(t);
        if wants_to_move {
            let since = *v.release.get_or_insert(t);
            if ((t - since) as f64) * dt < p.startup_delay {
                v_new = 0.0;
            }
        } else {
            v.release = None;
        }
    } else {
        v.release = None;
        v.waiting_since = None;
    }

    // Move along the plan, closing any lateral offset.
    let step = v_new * dt;
    let mut dl = 0.0;
    if v.lat.abs() > 0.0 {
        let rate = LANE_CHANGE_WIDTH / ctx.engine.lane_change_duration_s * dt;
        dl = v.lat.abs().min(step * ctx.engine.max_lateral_angle.sin()).min(rate);
    }
    let ds = (step * step - dl * dl).max(0.0).sqrt();
    let old_lat = v.lat;
    let mut lat = v.lat - v.lat.signum() * dl;
    if lat.abs() < 1e-9 {
        lat = 0.0;
    }
    let start = pose.position();
    let Some((mut seg, mut s)) = locate(net, &v.segs, v.seg, v.s, ds) else { return true };
    // An offset on the outside of a curve travels further than the
    // centerline; shorten the advance so the box moves at most `step`.
    if render(net, v.segs[seg], s, lat).0.dist(start) > step + 1e-9 {
        let (mut lo, mut hi) = (0.0, ds);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let (k, sm) = locate(net, &v.segs, v.seg, v.s, mid).expect("shorter than a located advance");
            if render(net, v.segs[k], sm, lat).0.dist(start) > step {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (seg, s) = locate(net, &v.segs, v.seg, v.s, lo).expect("shorter than a located advance");
    }
    for k in v.seg + 1..=seg {
        if let Seg::Conn(c) = v.segs[k] {
            if v.full_stop.is_some_and(|f| f.0 == c) {
                v.full_stop = None;
            }
            v.yellow_choice = None;
        }
    }
    let moved = if seg == v.seg { s - v.s } else { ds };
    v.seg = seg;
    v.s = s;
    v.lat = lat;
    let (pos, h) = render(net, v.segs[seg], s, lat);
    let heading = if step > 1e-9 { wrap_angle(h + (lat - old_lat).atan2(moved.max(1e-9))) } else { pose.heading };
    *pose = Pose { x: pos.x, y: pos.y, heading, speed: v_new };
    false
}

/// Plan position `adv` meters past `(seg, s)`; `None` past the route end.
fn locate(net: &Network, segs: &[Seg], mut seg: usize, s: f64, adv: f64) -> Option<(usize, f64)> {
    let mut s = s + adv;
    loop {
        let len = seg_shape(net, segs[seg]).length();
        if s <= len {
            return Some((seg, s));
        }
        if seg + 1 >= segs.len() {
            return None;
        }
        s -= len;
        seg += 1;
    }
}

fn render(net: &Network, seg: Seg, s: f64, lat: f64) -> (Point2, f64) {
    let shape = seg_shape(net, seg);
    let h = shape.heading_at(s);
    (shape.point_at(s) + Point2::from_heading(h).left_normal() * lat, h)
}

/// Standoff distance before the stop line when the vehicle may not enter
/// connection `c`; `None` when it may pass.
#[allow(clippy::too_many_arguments)]
fn junction_decision(
    v: &mut Vehicle,
    c: ConnId,
    dist: f64,
    speed: f64,
    prev_lane: usize,
    first: bool,
    t: usize,
    snap: &[Snap],
    on_seg: &HashMap<Seg, Vec<usize>>,
    ctx: &Ctx,
    me: usize,
    length: f64,
) -> Option<f64> {
    let net = ctx.net;
    let conn = net.connection(c);
    let p = v.params;
    if prev_lane != conn.from_lane {
        return Some(YIELD_STANDOFF);
    }
    let signal = ctx.signal(c, t);
    let red_right = signal == Some(LightState::Red) && conn.movement == Movement::Right && conn.from_lane == 0;
    match signal {
        Some(LightState::Red) if !red_right => return Some(p.jm_stop_line_gap),
        Some(LightState::Yellow) => {
            let go = match v.yellow_choice {
                Some((yc, go)) if yc == c => go,
                _ => {
                    let go = speed * speed / (2.0 * p.decel) > dist;
                    if first {
                        v.yellow_choice = Some((c, go));
                    }
                    go
                }
            };
            if !go {
                return Some(p.jm_stop_line_gap);
            }
            return None;
        }
        _ => {}
    }
    let stop_rule = red_right || (signal.is_none() && conn.stop_controlled);
    if stop_rule && v.full_stop.map(|f| f.0) != Some(c) {
        if first && speed < STOPPED && dist <= p.jm_stop_line_gap + FULL_STOP_WINDOW {
            v.full_stop = Some((c, t));
        } else {
            return Some(p.jm_stop_line_gap);
        }
    }
    if !first {
        return None;
    }
    let my_level = if stop_rule { 1 } else { 0 };
    let my_eta = dist.max(0.0) / speed.max(1.0);
    let gap_s = ctx.engine.gap_acceptance_s * v.gap_factor;
    // committed: too close to stop comfortably and already entering
    let committed = v.passing == Some(c) && speed * speed / (2.0 * p.decel) > dist + 1.0;
    for &f in &ctx.conflicts[c.0] {
        if on_seg.get(&Seg::Conn(f)).is_some_and(|occ| occ.iter().any(|&j| j != me)) {
            return Some(YIELD_STANDOFF);
        }
        if committed {
            continue;
        }
        let foe = net.connection(f);
        let foe_signal = ctx.signal(f, t);
        let foe_red_right = foe_signal == Some(LightState::Red) && foe.movement == Movement::Right && foe.from_lane == 0;
        let foe_level = if foe_red_right || (foe_signal.is_none() && foe.stop_controlled) { 1 } else { 0 };
        for (j, o) in snap.iter().enumerate() {
            let Some(e) = o.eng else { continue };
            if j == me || e.passing != Some(f) || e.eta >= gap_s {
                continue;
            }
            let foe_first = if my_level != foe_level {
                foe_level < my_level
            } else if my_level == 1 {
                match (e.full_stop_step, v.full_stop.map(|x| x.1)) {
                    (Some(a), Some(b)) if a != b => a < b,
                    _ => (e.eta, j) < (my_eta, me),
                }
            } else if signal == Some(LightState::Green) && foe_signal == Some(LightState::Green) {
                let ml = conn.movement == Movement::Left;
                let fl = foe.movement == Movement::Left;
                if ml != fl {
                    ml
                } else {
                    (e.eta, j) < (my_eta, me)
                }
            } else {
                let mp = net.edge(conn.from_edge).priority;
                let fp = net.edge(foe.from_edge).priority;
                let ms = conn.movement == Movement::Straight;
                let fs = foe.movement == Movement::Straight;
                if mp != fp {
                    fp > mp
                } else if ms != fs {
                    fs
                } else {
                    (e.eta, j) < (my_eta, me)
                }
            };
            if foe_first {
                return Some(YIELD_STANDOFF);
            }
        }
    }
    // keep the junction clear unless the exit lane has room
    let ignore_clear = p.jm_ignore_keep_clear_time.is_some_and(|limit| v.waiting_since.is_some_and(|w| (t - w) as f64 * ctx.dt >= limit));
    if !committed && !ignore_clear {
        let exit = Seg::Lane { edge: conn.to_edge, lane: conn.to_lane };
        if let Some(occ) = on_seg.get(&exit) {
            for &j in occ {
                let e = snap[j].eng.expect("engine snapshot");
                if e.s - 0.5 * snap[j].length < length + p.min_gap && snap[j].speed < 1.0 {
                    return Some(YIELD_STANDOFF);
                }
            }
        }
    }
    None
}

/// Checks gaps on lane `next` of `edge`; on success returns the new
/// longitudinal position and lateral offset there.
#[allow(clippy::too_many_arguments)]
fn lane_change_ok(
    v: &Vehicle,
    edge: EdgeId,
    next: usize,
    my_pos: Point2,
    speed: f64,
    length: f64,
    width: f64,
    me: usize,
    snap: &[Snap],
    ctx: &Ctx,
) -> Option<(f64, f64)> {
    let p = v.params;
    let dt = ctx.dt;
    let shape = &ctx.net.lane(edge, next).shape;
    let mine = shape.project(my_pos);
    for (j, o) in snap.iter().enumerate() {
        if j == me || !o.valid || o.pos.dist(my_pos) > 80.0 {
            continue;
        }
        let pr = shape.project(o.pos);
        let dh = wrap_angle(o.heading - shape.heading_at(pr.s));
        let (along_ext, lat_ext) = extents(o.length, o.width, dh);
        if pr.lateral.abs() > 0.5 * width + lat_ext + p.min_gap_lat {
            continue;
        }
        let d = pr.s - mine.s;
        let v_o = (o.speed * dh.cos()).max(0.0);
        if d >= 0.0 {
            let gap = d - along_ext - 0.5 * length;
            if gap < p.min_gap || safe_speed(speed, v_o, gap - p.min_gap, p.decel, p.tau) < speed - p.decel * dt {
                return None;
            }
        } else {
            let gap = -d - along_ext - 0.5 * length;
            let (decel, tau, min_gap) = o.eng.map_or((2.5, 1.0, 2.5), |e| (e.decel, e.tau, e.min_gap));
            if gap < 0.5 || safe_speed(v_o, speed, gap - min_gap, decel, tau) < v_o - decel * dt {
                return None;
            }
        }
    }
    Some((mine.s, mine.lateral))
}

/// New route from the lane currently held, after failing to reach the
/// planned one.
fn reroute(v: &mut Vehicle, t: usize, id: TrackId, ctx: &Ctx) {
    let Seg::Lane { edge, lane } = v.segs[v.seg] else { return };
    let placement = Placement::Lane { edge, lane, offset: v.s, lateral: v.lat };
    let seed = derive_seed(ctx.seed, domain::ROUTE, t as u64);
    let route = infer_route(&placement, ctx.net, seed, id, ctx.routing);
    let mut segs = v.segs[..v.seg].to_vec();
    segs.extend(route_segments(ctx.net, &route, lane, false));
    v.segs = segs;
    v.stuck = 0;
}
