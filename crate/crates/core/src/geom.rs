//! Planar geometry shared by every stage: points, polylines with arc-length
//! parameterisation, oriented boxes and a uniform-grid segment index.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate geometry: polyline needs at least 2 points, got {0}")]
    Degenerate(usize),
    #[error("arc length {s} outside [0, {length}]")]
    OutOfRange { s: f64, length: f64 },
}

/// A point in the map frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn from_heading(heading: f64) -> Self {
        Point2::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is to the left.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unit normal pointing to the left of this direction.
    pub fn left_normal(self) -> Point2 {
        let n = self.norm();
        if n == 0.0 {
            return Point2::default();
        }
        Point2::new(-self.y / n, self.x / n)
    }

    pub fn normalized(self) -> Point2 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            Point2::new(self.x / n, self.y / n)
        }
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

pub fn arc_length(points: &[Point2]) -> Result<f64, GeomError> {
    if points.len() < 2 {
        return Err(GeomError::Degenerate(points.len()));
    }
    Ok(points.windows(2).map(|w| w[0].dist(w[1])).sum())
}

/// Point and tangent heading at arc length `s` by linear interpolation.
pub fn point_at_arclength(points: &[Point2], s: f64) -> Result<(Point2, f64), GeomError> {
    let line = Polyline::new(points.to_vec())?;
    let length = line.length();
    if !(0.0..=length).contains(&s) {
        return Err(GeomError::OutOfRange { s, length });
    }
    Ok((line.point_at(s), line.heading_at(s)))
}

/// Closest point on segment `a`-`b` to `p`, with its parameter in [0, 1].
pub fn closest_on_segment(p: Point2, a: Point2, b: Point2) -> (Point2, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    closest_on_segment(p, a, b).0.dist(p)
}

/// Proper or touching intersection of two segments; returns (t, u) parameters.
pub fn segment_intersection(a: Point2, b: Point2, c: Point2, d: Point2) -> Option<(f64, f64)> {
    let r = b - a;
    let s = d - c;
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = c - a;
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some((t, u))
    } else {
        None
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Arc length of the closest point.
    pub s: f64,
    /// Unsigned distance to the closest point.
    pub distance: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub segment: usize,
    pub point: Point2,
}

/// A polyline with cached cumulative arc lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    points: Vec<Point2>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Result<Self, GeomError> {
        if points.len() < 2 {
            return Err(GeomError::Degenerate(points.len()));
        }
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            acc += w[0].dist(w[1]);
            cum.push(acc);
        }
        Ok(Polyline { points, cum })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        *self.points.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len();
        match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Point at arc length, clamped to the polyline ends.
    pub fn point_at(&self, s: f64) -> Point2 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg_len = self.cum[i + 1] - self.cum[i];
        if seg_len == 0.0 {
            return self.points[i];
        }
        let t = (s - self.cum[i]) / seg_len;
        self.points[i].lerp(self.points[i + 1], t)
    }

    /// Heading of the segment containing `s` (first non-degenerate one at ties).
    pub fn heading_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let mut i = self.segment_at(s);
        while i + 2 < self.points.len() && self.points[i] == self.points[i + 1] {
            i += 1;
        }
        (self.points[i + 1] - self.points[i]).heading()
    }

    pub fn start_heading(&self) -> f64 {
        self.heading_at(0.0)
    }

    pub fn end_heading(&self) -> f64 {
        let n = self.points.len();
        let mut i = n - 1;
        while i > 1 && self.points[i] == self.points[i - 1] {
            i -= 1;
        }
        (self.points[i] - self.points[i - 1]).heading()
    }

    pub fn project(&self, p: Point2) -> Projection {
        self.project_range(p, 0, self.points.len() - 1)
    }

    /// Projection restricted to segments [first_seg, last_seg).
    pub fn project_range(&self, p: Point2, first_seg: usize, last_seg: usize) -> Projection {
        let mut best = Projection {
            s: 0.0,
            distance: f64::INFINITY,
            lateral: 0.0,
            segment: first_seg,
            point: self.points[first_seg],
        };
        for i in first_seg..last_seg.min(self.points.len() - 1) {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (q, t) = closest_on_segment(p, a, b);
            let d = q.dist(p);
            if d < best.distance {
                let dir = b - a;
                let side = dir.cross(p - q);
                best = Projection {
                    s: self.cum[i] + t * (self.cum[i + 1] - self.cum[i]),
                    distance: d,
                    lateral: if side >= 0.0 { d } else { -d },
                    segment: i,
                    point: q,
                };
            }
        }
        best
    }

    /// Projection searching only the segments within `window` meters of `s_hint`.
    pub fn project_near(&self, p: Point2, s_hint: f64, window: f64) -> Projection {
        let lo = self.segment_at((s_hint - window).max(0.0));
        let hi = self.segment_at((s_hint + window).min(self.length())) + 1;
        self.project_range(p, lo, hi)
    }

    /// Sub-polyline between arc lengths `s0 < s1`, reusing interior vertices.
    pub fn slice(&self, s0: f64, s1: f64) -> Vec<Point2> {
        let mut out = vec![self.point_at(s0)];
        for (i, &c) in self.cum.iter().enumerate() {
            if c > s0 && c < s1 {
                out.push(self.points[i]);
            }
        }
        let end = self.point_at(s1);
        if out.last() != Some(&end) {
            out.push(end);
        }
        out
    }

    /// Polyline shifted laterally by `offset` (left positive) using vertex normals.
    pub fn offset(&self, offset: f64) -> Vec<Point2> {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let prev = if i == 0 { self.points[0] } else { self.points[i - 1] };
                let next = if i == n - 1 { self.points[n - 1] } else { self.points[i + 1] };
                let normal = (next - prev).left_normal();
                self.points[i] + normal * offset
            })
            .collect()
    }
}

/// Removes consecutive duplicates (within `eps`) from a point list.
pub fn dedup_points(points: &mut Vec<Point2>, eps: f64) {
    points.dedup_by(|b, a| a.dist(*b) <= eps);
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, no repeated start.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.iter().copied().filter(|p| p.is_finite()).collect();
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |h: &[Point2], p: Point2| {
        let k = h.len();
        (h[k - 1] - h[k - 2]).cross(p - h[k - 2])
    };
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && turn(&hull, p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(&hull, p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        a += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * a
}

/// Point in convex CCW polygon (boundary counts as inside).
pub fn point_in_convex(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| (poly[(i + 1) % n] - poly[i]).cross(p - poly[i]) >= -1e-9)
}

/// Oriented bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Point2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Obb {
    pub fn new(center: Point2, heading: f64, length: f64, width: f64) -> Self {
        Obb { center, heading, length, width }
    }

    pub fn axes(&self) -> (Point2, Point2) {
        let u = Point2::from_heading(self.heading);
        (u, Point2::new(-u.y, u.x))
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Point2; 4] {
        let (u, v) = self.axes();
        let hl = u * (self.length / 2.0);
        let hw = v * (self.width / 2.0);
        let c = self.center;
        [c - hl - hw, c + hl - hw, c + hl + hw, c - hl + hw]
    }

    pub fn contains(&self, p: Point2) -> bool {
        let (u, v) = self.axes();
        let d = p - self.center;
        d.dot(u).abs() <= self.length / 2.0 && d.dot(v).abs() <= self.width / 2.0
    }

    /// Separating-axis overlap test; touching boxes count as overlapping.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let (u1, v1) = self.axes();
        let (u2, v2) = other.axes();
        let d = other.center - self.center;
        for axis in [u1, v1, u2, v2] {
            let r1 = self.length / 2.0 * u1.dot(axis).abs() + self.width / 2.0 * v1.dot(axis).abs();
            let r2 = other.length / 2.0 * u2.dot(axis).abs() + other.width / 2.0 * v2.dot(axis).abs();
            if d.dot(axis).abs() > r1 + r2 {
                return false;
            }
        }
        true
    }

    /// Euclidean distance between the two boxes, 0 when they overlap.
    pub fn distance(&self, other: &Obb) -> f64 {
        if self.overlaps(other) {
            return 0.0;
        }
        let a = self.corners();
        let b = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let (a0, a1) = (a[i], a[(i + 1) % 4]);
            for j in 0..4 {
                let (b0, b1) = (b[j], b[(j + 1) % 4]);
                best = best
                    .min(point_segment_distance(a0, b0, b1))
                    .min(point_segment_distance(b0, a0, a1));
            }
        }
        best
    }

    /// Distance from the box to a point, 0 when inside.
    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let (u, v) = self.axes();
        let d = p - self.center;
        let dx = (d.dot(u).abs() - self.length / 2.0).max(0.0);
        let dy = (d.dot(v).abs() - self.width / 2.0).max(0.0);
        dx.hypot(dy)
    }
}

/// Uniform grid over polyline segments for nearest-segment queries.
#[derive(Debug, Clone)]
pub struct SegmentIndex {
    segments: Vec<(Point2, Point2, usize)>,
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl SegmentIndex {
    /// Builds an index over every segment of every polyline; the `usize` tag
    /// is the polyline index.
    pub fn new(polylines: &[Vec<Point2>], cell: f64) -> Self {
        let mut segments = Vec::new();
        for (k, line) in polylines.iter().enumerate() {
            for w in line.windows(2) {
                segments.push((w[0], w[1], k));
            }
        }
        let (mut min, mut max) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for &(a, b, _) in &segments {
            for p in [a, b] {
                min = Point2::new(min.x.min(p.x), min.y.min(p.y));
                max = Point2::new(max.x.max(p.x), max.y.max(p.y));
            }
        }
        if segments.is_empty() {
            return SegmentIndex { segments, origin: Point2::default(), cell, nx: 0, ny: 0, cells: vec![] };
        }
        let nx = (((max.x - min.x) / cell).floor() as usize + 1).min(4096);
        let ny = (((max.y - min.y) / cell).floor() as usize + 1).min(4096);
        let cell = cell.max((max.x - min.x) / nx as f64).max((max.y - min.y) / ny as f64);
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, &(a, b, _)) in segments.iter().enumerate() {
            let (x0, x1) = (a.x.min(b.x), a.x.max(b.x));
            let (y0, y1) = (a.y.min(b.y), a.y.max(b.y));
            let cx0 = (((x0 - min.x) / cell) as usize).min(nx - 1);
            let cx1 = (((x1 - min.x) / cell) as usize).min(nx - 1);
            let cy0 = (((y0 - min.y) / cell) as usize).min(ny - 1);
            let cy1 = (((y1 - min.y) / cell) as usize).min(ny - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    cells[cy * nx + cx].push(i as u32);
                }
            }
        }
        SegmentIndex { segments, origin: min, cell, nx, ny, cells }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn segment(&self, i: usize) -> (Point2, Point2, usize) {
        self.segments[i]
    }

    /// Index of the nearest segment and its distance, searching rings of
    /// cells outward until the best hit is provably closest.
    pub fn nearest(&self, p: Point2) -> Option<(usize, f64)> {
        if self.segments.is_empty() {
            return None;
        }
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        let cx = fx.floor().clamp(0.0, (self.nx - 1) as f64) as i64;
        let cy = fy.floor().clamp(0.0, (self.ny - 1) as f64) as i64;
        let max_ring = self.nx.max(self.ny) as i64;
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            for (x, y) in ring_cells(cx, cy, ring) {
                if x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
                    continue;
                }
                for &si in &self.cells[y as usize * self.nx + x as usize] {
                    let (a, b, _) = self.segments[si as usize];
                    let d = point_segment_distance(p, a, b);
                    let better = match best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && (si as usize) < bi),
                    };
                    if better {
                        best = Some((si as usize, d));
                    }
                }
            }
            if let Some((_, bd)) = best {
                // cells beyond this ring are at least `ring * cell` away from p
                if bd <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best
    }
}

fn ring_cells(cx: i64, cy: i64, r: i64) -> Vec<(i64, i64)> {
    if r == 0 {
        return vec![(cx, cy)];
    }
    let mut out = Vec::with_capacity((8 * r) as usize);
    for x in (cx - r)..=(cx + r) {
        out.push((x, cy - r));
        out.push((x, cy + r));
    }
    for y in (cy - r + 1)..=(cy + r - 1) {
        out.push((cx - r, y));
        out.push((cx + r, y));
    }
    out
}
