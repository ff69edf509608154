//! Planar geometry helpers: vectors, angle wrapping, polylines and oriented boxes.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A 2D point or vector in meters. Serialized as an `[x, y]` pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            Vec2::new(self.x / n, self.y / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Expresses `self` in the frame with origin `origin` and x-axis along `heading`.
    pub fn to_frame(self, origin: Vec2, heading: f64) -> Vec2 {
        (self - origin).rotate(-heading)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Smallest signed difference `a - b`, wrapped into `(-pi, pi]`.
pub fn wrap_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Result of projecting a point onto a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    /// Unsigned distance to the foot point.
    pub distance: f64,
    /// Heading of the segment containing the foot point.
    pub heading: f64,
    pub segment: usize,
}

/// A polyline with cached cumulative arc lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline, dropping consecutive duplicate points. Returns `None`
    /// when fewer than two distinct points remain.
    pub fn new(points: &[Vec2]) -> Option<Self> {
        let mut pts: Vec<Vec2> = Vec::with_capacity(points.len());
        for &p in points {
            if pts.last().map_or(true, |q: &Vec2| q.distance(p) > 1e-9) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in pts.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Some(Self {
            points: pts,
            cumulative,
        })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_heading(&self, i: usize) -> f64 {
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Projects `p` onto the polyline, clamped to its end points.
    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
            heading: 0.0,
            segment: 0,
        };
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let len = self.cumulative[i + 1] - self.cumulative[i];
            let t = ((p - a).dot(ab) / (len * len)).clamp(0.0, 1.0);
            let foot = a + ab * t;
            let d = p.distance(foot);
            if d < best.distance {
                let dir = ab * (1.0 / len);
                best = Projection {
                    s: self.cumulative[i] + t * len,
                    lateral: dir.cross(p - a),
                    distance: d,
                    heading: dir.angle(),
                    segment: i,
                };
            }
        }
        best
    }

    /// Point at arc length `s`; beyond either end the first or last segment is
    /// extended in a straight line.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let n = self.points.len();
        let i = if s <= 0.0 {
            0
        } else if s >= self.length() {
            n - 2
        } else {
            match self
                .cumulative
                .binary_search_by(|c| c.partial_cmp(&s).unwrap())
            {
                Ok(i) => i.min(n - 2),
                Err(i) => i - 1,
            }
        };
        let a = self.points[i];
        let b = self.points[i + 1];
        let len = self.cumulative[i + 1] - self.cumulative[i];
        a + (b - a) * ((s - self.cumulative[i]) / len)
    }

    /// Tangent heading at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let n = self.points.len();
        let i = if s <= 0.0 {
            0
        } else if s >= self.length() {
            n - 2
        } else {
            match self
                .cumulative
                .binary_search_by(|c| c.partial_cmp(&s).unwrap())
            {
                Ok(i) => i.min(n - 2),
                Err(i) => i - 1,
            }
        };
        self.segment_heading(i)
    }

    /// Maximum absolute curvature (turn angle per meter) over vertices whose
    /// arc length lies in `[s0, s1]`.
    pub fn max_curvature(&self, s0: f64, s1: f64) -> f64 {
        let mut k: f64 = 0.0;
        for i in 1..self.points.len() - 1 {
            let s = self.cumulative[i];
            if s < s0 || s > s1 {
                continue;
            }
            let turn = wrap_diff(self.segment_heading(i), self.segment_heading(i - 1)).abs();
            let span = 0.5 * (self.cumulative[i + 1] - self.cumulative[i - 1]);
            k = k.max(turn / span);
        }
        k
    }
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// An oriented rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

/// Contact between two boxes reported by [`Obb::overlap`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    /// Penetration depth along `normal`.
    pub depth: f64,
    /// Unit normal of the minimal-penetration axis, pointing from the first box
    /// toward the second.
    pub normal: Vec2,
}

impl Obb {
    pub fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let [u, n] = self.axes();
        let hl = u * (0.5 * self.length);
        let hw = n * (0.5 * self.width);
        let c = self.center;
        [c + hl + hw, c - hl + hw, c - hl - hw, c + hl - hw]
    }

    pub fn circumradius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    fn half_extent_along(&self, axis: Vec2) -> f64 {
        let [u, n] = self.axes();
        0.5 * self.length * u.dot(axis).abs() + 0.5 * self.width * n.dot(axis).abs()
    }

    /// Separating-axis test. Returns the minimal-penetration contact when the
    /// interiors overlap; touching boxes do not count.
    pub fn overlap(&self, other: &Obb) -> Option<Contact> {
        let d = other.center - self.center;
        if d.norm() >= self.circumradius() + other.circumradius() {
            return None;
        }
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        let mut best: Option<Contact> = None;
        for axis in [a0, a1, b0, b1] {
            let dist = d.dot(axis);
            let pen = self.half_extent_along(axis) + other.half_extent_along(axis) - dist.abs();
            if pen <= 0.0 {
                return None;
            }
            if best.map_or(true, |b| pen < b.depth) {
                let normal = if dist >= 0.0 { axis } else { -axis };
                best = Some(Contact { depth: pen, normal });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(4.0) - (4.0 - 2.0 * PI)).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_diff(3.0, -3.0) - (6.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn polyline_projection_and_interpolation() {
        let pl = Polyline::new(&[Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)])
            .unwrap();
        assert_eq!(pl.length(), 20.0);
        let p = pl.project(Vec2::new(5.0, 2.0));
        assert!((p.s - 5.0).abs() < 1e-12);
        assert!((p.lateral - 2.0).abs() < 1e-12);
        assert_eq!(pl.point_at(15.0), Vec2::new(10.0, 5.0));
        assert_eq!(pl.point_at(25.0), Vec2::new(10.0, 15.0));
        assert!((pl.max_curvature(0.0, 20.0) - (PI / 2.0) / 10.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_dropped() {
        assert!(Polyline::new(&[Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)]).is_none());
    }

    #[test]
    fn sat_axis_aligned() {
        let a = Obb { center: Vec2::ZERO, heading: 0.0, length: 4.0, width: 2.0 };
        let b = Obb { center: Vec2::new(3.9, 0.0), ..a };
        let c = b.overlap(&a).is_some();
        let contact = a.overlap(&b).unwrap();
        assert!(c);
        assert!((contact.depth - 0.1).abs() < 1e-12);
        assert_eq!(contact.normal, Vec2::new(1.0, 0.0));
        let far = Obb { center: Vec2::new(10.0, 0.0), ..a };
        assert!(a.overlap(&far).is_none());
    }

    #[test]
    fn polygon_containment() {
        let sq = [Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(2.0, 2.0), Vec2::new(0.0, 2.0)];
        assert!(point_in_polygon(Vec2::new(1.0, 1.0), &sq));
        assert!(!point_in_polygon(Vec2::new(3.0, 1.0), &sq));
    }
}
