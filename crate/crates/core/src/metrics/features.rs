//! Per-step features of a trajectory set: kinematics, footprint contact,
//! time to collision and signed distance to the road edge.

use std::f64::consts::FRAC_PI_4;

use crate::engine::SimState;
use crate::geom::{wrap_angle, Obb, Point2, SegmentIndex};
use crate::scenario::{ObjectType, Scenario};

/// Finite-difference kinematics aligned with the input states; `None` where
/// an input state needed by the difference is invalid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Kinematics {
    pub speed: Vec<Option<f64>>,
    pub accel: Vec<Option<f64>>,
    pub angular_speed: Vec<Option<f64>>,
    pub angular_accel: Vec<Option<f64>>,
}

impl Kinematics {
    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }
}

/// Empty when fewer than three states are given.
pub fn kinematic_features(states: &[SimState], dt: f64) -> Kinematics {
    let n = states.len();
    if n < 3 {
        return Kinematics::default();
    }
    let mut k = Kinematics { speed: vec![None; n], accel: vec![None; n], angular_speed: vec![None; n], angular_accel: vec![None; n] };
    for t in 1..n {
        let (a, b) = (&states[t - 1], &states[t]);
        if a.valid && b.valid {
            k.speed[t] = Some((b.x - a.x).hypot(b.y - a.y) / dt);
            k.angular_speed[t] = Some(wrap_angle(b.heading - a.heading) / dt);
        }
    }
    for t in 2..n {
        if let (Some(v0), Some(v1)) = (k.speed[t - 1], k.speed[t]) {
            k.accel[t] = Some((v1 - v0) / dt);
        }
        if let (Some(w0), Some(w1)) = (k.angular_speed[t - 1], k.angular_speed[t]) {
            k.angular_accel[t] = Some((w1 - w0) / dt);
        }
    }
    k
}

/// Physical extent used for contact: boxes for vehicles and cyclists, a disc
/// for pedestrians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Footprint {
    Box(Obb),
    Disc { center: Point2, radius: f64 },
}

impl Footprint {
    pub fn new(state: &SimState, object_type: ObjectType, length: f64, width: f64, pedestrian_diameter: f64) -> Self {
        let center = Point2::new(state.x, state.y);
        match object_type {
            ObjectType::Pedestrian => Footprint::Disc { center, radius: pedestrian_diameter / 2.0 },
            _ => Footprint::Box(Obb::new(center, state.heading, length, width)),
        }
    }

    pub fn center(&self) -> Point2 {
        match self {
            Footprint::Box(b) => b.center,
            Footprint::Disc { center, .. } => *center,
        }
    }

    fn bounding_radius(&self) -> f64 {
        match self {
            Footprint::Box(b) => b.length.hypot(b.width) / 2.0,
            Footprint::Disc { radius, .. } => *radius,
        }
    }

    pub fn overlaps(&self, other: &Footprint) -> bool {
        if self.center().dist(other.center()) > self.bounding_radius() + other.bounding_radius() {
            return false;
        }
        self.distance(other) <= 0.0
    }

    /// Gap between the two shapes, 0 when they touch or overlap.
    pub fn distance(&self, other: &Footprint) -> f64 {
        match (self, other) {
            (Footprint::Box(a), Footprint::Box(b)) => a.distance(b),
            (Footprint::Box(a), Footprint::Disc { center, radius }) | (Footprint::Disc { center, radius }, Footprint::Box(a)) => {
                (a.distance_to_point(*center) - radius).max(0.0)
            }
            (Footprint::Disc { center: c1, radius: r1 }, Footprint::Disc { center: c2, radius: r2 }) => (c1.dist(*c2) - r1 - r2).max(0.0),
        }
    }
}

/// Pose and extent of one agent at one step, as seen by the TTC search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub center: Point2,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

/// Time until `me` closes the gap to its nearest leader: another body facing
/// within 45 degrees of `me`, ahead of its center and laterally overlapping.
/// Zero when already in contact lengthwise, infinite when not closing.
pub fn ttc(me: &Body, others: &[Body]) -> f64 {
    let u = Point2::from_heading(me.heading);
    let n = u.left_normal();
    let mut leader: Option<(f64, &Body)> = None;
    for o in others {
        if wrap_angle(o.heading - me.heading).abs() > FRAC_PI_4 {
            continue;
        }
        let d = o.center - me.center;
        let lon = d.dot(u);
        if lon <= 0.0 || d.dot(n).abs() > (me.width + o.width) / 2.0 {
            continue;
        }
        if leader.is_none_or(|(best, _)| lon < best) {
            leader = Some((lon, o));
        }
    }
    let Some((lon, l)) = leader else {
        return f64::INFINITY;
    };
    let gap = lon - (me.length + l.length) / 2.0;
    if gap <= 0.0 {
        return 0.0;
    }
    let closing = me.speed - l.speed * wrap_angle(l.heading - me.heading).cos();
    if closing > 0.0 {
        gap / closing
    } else {
        f64::INFINITY
    }
}

/// Road-edge polylines indexed for signed distance queries. Each edge has the
/// drivable area on its left, so distances are positive on the road.
#[derive(Debug, Clone)]
pub struct RoadEdges {
    index: SegmentIndex,
    /// First and last segment index of each polyline.
    spans: Vec<(usize, usize)>,
}

impl RoadEdges {
    pub fn new(scenario: &Scenario) -> Self {
        let lines: Vec<Vec<Point2>> = scenario.road_edges.iter().map(|e| e.polyline.clone()).filter(|l| l.len() >= 2).collect();
        let index = SegmentIndex::new(&lines, 10.0);
        let mut spans = vec![(usize::MAX, 0); lines.len()];
        for i in 0..index.len() {
            let k = index.segment(i).2;
            spans[k].0 = spans[k].0.min(i);
            spans[k].1 = i;
        }
        RoadEdges { index, spans }
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Segment meeting segment `i` at its start (`forward == false`) or end,
    /// wrapping around closed polylines.
    fn neighbor(&self, i: usize, forward: bool) -> Option<usize> {
        let (a, b, k) = self.index.segment(i);
        let (first, last) = self.spans[k];
        let j = match (forward, i == last, i == first) {
            (true, false, _) => i + 1,
            (true, true, _) => first,
            (false, _, false) => i - 1,
            (false, _, true) => last,
        };
        let (c, d, _) = self.index.segment(j);
        let joined = if forward { c == b } else { d == a };
        (j != i && joined).then_some(j)
    }

    /// Infinite when there are no road edges.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        let Some((i, d)) = self.index.nearest(p) else {
            return f64::INFINITY;
        };
        let (a, b, _) = self.index.segment(i);
        let ab = b - a;
        let t = if ab.dot(ab) > 0.0 { (p - a).dot(ab) / ab.dot(ab) } else { 0.0 };
        let own = ab.left_normal();
        // at a shared vertex the summed normals of both segments decide the side
        let side = if t <= 0.0 {
            let n = self.neighbor(i, false).map(|j| own + self.seg_normal(j)).unwrap_or(own);
            (p - a).dot(n)
        } else if t >= 1.0 {
            let n = self.neighbor(i, true).map(|j| own + self.seg_normal(j)).unwrap_or(own);
            (p - b).dot(n)
        } else {
            ab.cross(p - a)
        };
        if side < 0.0 {
            -d
        } else {
            d
        }
    }

    fn seg_normal(&self, j: usize) -> Point2 {
        let (a, b, _) = self.index.segment(j);
        (b - a).left_normal()
    }
}
