//! Analytic planar geometry: shapes, support functions, needles.
//!
//! Shapes stay exact (disk/ellipse/polygon predicates are closed-form);
//! meshing and quadrature polygonalize them explicitly when needed. Needle
//! classification against the obstacle is computed from the analytic shapes,
//! never from a mesh.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance constants for geometric predicates.
pub mod tol {
    /// Absolute slack for "point lies on a boundary" decisions. Domains in
    /// this crate live on O(1) coordinates, so an absolute tolerance well
    /// above f64 roundoff but far below any mesh scale is appropriate.
    pub const ON_BOUNDARY: f64 = 1e-9;

    /// Minimum squared length for a segment to participate in intersection
    /// tests; degenerate segments are treated as points.
    pub const DEGENERATE_SEG2: f64 = 1e-24;
}

/// A point (or free vector) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn normalize(self) -> Point2 {
        let n = self.norm();
        Point2::new(self.x / n, self.y / n)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// 2D cross product (z-component of the 3D cross product).
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl std::ops::Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// A closed planar shape with an analytic boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Disk {
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        center: [f64; 2],
        /// Semi-axis lengths along the rotated x/y axes.
        semi_axes: [f64; 2],
        /// Rotation of the axes in radians, counter-clockwise.
        #[serde(default)]
        rotation: f64,
    },
    Polygon {
        /// Vertices in counter-clockwise order, not repeated at the end.
        vertices: Vec<[f64; 2]>,
    },
}

impl Shape {
    pub fn disk(cx: f64, cy: f64, r: f64) -> Shape {
        Shape::Disk {
            center: [cx, cy],
            radius: r,
        }
    }

    /// Basic sanity checks: positive radii/axes, polygon simple-ish
    /// (>= 3 vertices, positive area, CCW).
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Disk { radius, .. } => {
                if !radius.is_finite() || *radius <= 0.0 {
                    return Err(Error::Geometry(format!("disk radius {radius} must be positive")));
                }
            }
            Shape::Ellipse { semi_axes, .. } => {
                if semi_axes.iter().any(|a| !a.is_finite() || *a <= 0.0) {
                    return Err(Error::Geometry(format!(
                        "ellipse semi-axes {semi_axes:?} must be positive"
                    )));
                }
            }
            Shape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::Geometry(format!(
                        "polygon needs at least 3 vertices, got {}",
                        vertices.len()
                    )));
                }
                let area = polygon_signed_area(vertices);
                if area <= 0.0 {
                    return Err(Error::Geometry(format!(
                        "polygon must be counter-clockwise with positive area (signed area {area:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Strict interior test.
    pub fn contains(&self, p: Point2) -> bool {
        self.signed_inside(p) > 0.0
    }

    /// Closed-set membership with the boundary tolerance.
    pub fn contains_closure(&self, p: Point2) -> bool {
        self.signed_inside(p) > -tol::ON_BOUNDARY
    }

    /// Boundary membership within tolerance.
    pub fn on_boundary(&self, p: Point2) -> bool {
        self.distance_to_boundary(p).abs() <= tol::ON_BOUNDARY
    }

    /// A quantity positive inside, negative outside, ~0 on the boundary.
    /// For the disk and polygon this is the exact signed distance; for the
    /// ellipse it is a monotone proxy (exact sign, approximate magnitude).
    fn signed_inside(&self, p: Point2) -> f64 {
        match self {
            Shape::Disk { center, radius } => {
                radius - (p - Point2::new(center[0], center[1])).norm()
            }
            Shape::Ellipse { .. } => self.distance_to_boundary(p),
            Shape::Polygon { vertices } => {
                let d = polygon_boundary_distance(vertices, p);
                if polygon_contains(vertices, p) {
                    d
                } else {
                    -d
                }
            }
        }
    }

    /// Signed distance to the boundary: positive inside, negative outside.
    /// Exact for disk/polygon; Newton projection for the ellipse.
    pub fn distance_to_boundary(&self, p: Point2) -> f64 {
        match self {
            Shape::Disk { center, radius } => {
                radius - (p - Point2::new(center[0], center[1])).norm()
            }
            Shape::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                let q = to_ellipse_frame(p, center, *rotation);
                let d = ellipse_boundary_distance(q, semi_axes[0], semi_axes[1]);
                let inside = (q.x / semi_axes[0]).powi(2) + (q.y / semi_axes[1]).powi(2) <= 1.0;
                if inside {
                    d
                } else {
                    -d
                }
            }
            Shape::Polygon { vertices } => {
                let d = polygon_boundary_distance(vertices, p);
                if polygon_contains(vertices, p) {
                    d
                } else {
                    -d
                }
            }
        }
    }

    /// Axis-aligned bounding box `(lower-left, upper-right)`.
    pub fn bounding_box(&self) -> (Point2, Point2) {
        match self {
            Shape::Disk { center, radius } => (
                Point2::new(center[0] - radius, center[1] - radius),
                Point2::new(center[0] + radius, center[1] + radius),
            ),
            Shape::Ellipse { .. } => {
                // Support-function evaluation gives the exact extents even
                // under rotation.
                let hx = self.support_function(Point2::new(1.0, 0.0));
                let hy = self.support_function(Point2::new(0.0, 1.0));
                let lx = -self.support_function(Point2::new(-1.0, 0.0));
                let ly = -self.support_function(Point2::new(0.0, -1.0));
                (Point2::new(lx, ly), Point2::new(hx, hy))
            }
            Shape::Polygon { vertices } => {
                let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
                let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
                for v in vertices {
                    lo = Point2::new(lo.x.min(v[0]), lo.y.min(v[1]));
                    hi = Point2::new(hi.x.max(v[0]), hi.y.max(v[1]));
                }
                (lo, hi)
            }
        }
    }

    /// Support function `h(ω) = sup_{x ∈ S} x·ω` for a unit direction `ω`.
    pub fn support_function(&self, omega: Point2) -> f64 {
        match self {
            Shape::Disk { center, radius } => {
                Point2::new(center[0], center[1]).dot(omega) + radius
            }
            Shape::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                let (s, c) = rotation.sin_cos();
                let u = Point2::new(c, s);
                let v = Point2::new(-s, c);
                let a = semi_axes[0] * u.dot(omega);
                let b = semi_axes[1] * v.dot(omega);
                Point2::new(center[0], center[1]).dot(omega) + a.hypot(b)
            }
            Shape::Polygon { vertices } => vertices
                .iter()
                .map(|v| Point2::new(v[0], v[1]).dot(omega))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Area enclosed by the shape.
    pub fn area(&self) -> f64 {
        match self {
            Shape::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
            Shape::Ellipse { semi_axes, .. } => {
                std::f64::consts::PI * semi_axes[0] * semi_axes[1]
            }
            Shape::Polygon { vertices } => polygon_signed_area(vertices),
        }
    }

    /// Perimeter of the boundary (Ramanujan's approximation for the ellipse,
    /// accurate to ~1e-5 relative for moderate aspect ratios, which is ample
    /// for choosing polygonalization counts).
    pub fn perimeter(&self) -> f64 {
        match self {
            Shape::Disk { radius, .. } => 2.0 * std::f64::consts::PI * radius,
            Shape::Ellipse { semi_axes, .. } => {
                let (a, b) = (semi_axes[0], semi_axes[1]);
                let h = ((a - b) / (a + b)).powi(2);
                std::f64::consts::PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n)
                    .map(|i| {
                        let a = Point2::new(vertices[i][0], vertices[i][1]);
                        let b = Point2::new(vertices[(i + 1) % n][0], vertices[(i + 1) % n][1]);
                        a.dist(b)
                    })
                    .sum()
            }
        }
    }

    /// Reference point for the shape (exact centroid for disk/ellipse,
    /// area centroid for polygons).
    pub fn centroid(&self) -> Point2 {
        match self {
            Shape::Disk { center, .. } | Shape::Ellipse { center, .. } => {
                Point2::new(center[0], center[1])
            }
            Shape::Polygon { vertices } => polygon_centroid(vertices),
        }
    }

    /// Radius of the smallest centroid-centered disk containing the shape.
    pub fn circumradius(&self) -> f64 {
        match self {
            Shape::Disk { radius, .. } => *radius,
            Shape::Ellipse { semi_axes, .. } => semi_axes[0].max(semi_axes[1]),
            Shape::Polygon { vertices } => {
                let c = polygon_centroid(vertices);
                vertices
                    .iter()
                    .map(|v| c.dist(Point2::new(v[0], v[1])))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Closed polyline approximating the boundary with segment length ≈ `h`,
    /// counter-clockwise, first vertex not repeated at the end.
    ///
    /// Disk and ellipse boundaries are sampled uniformly in arc length;
    /// polygon edges are subdivided so corners are preserved exactly.
    pub fn polygonalize(&self, h: f64) -> Vec<Point2> {
        assert!(h > 0.0, "polygonalization spacing must be positive");
        match self {
            Shape::Disk { center, radius } => {
                let n = ((2.0 * std::f64::consts::PI * radius / h).ceil() as usize).max(12);
                (0..n)
                    .map(|i| {
                        let t = 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
                        Point2::new(
                            center[0] + radius * t.cos(),
                            center[1] + radius * t.sin(),
                        )
                    })
                    .collect()
            }
            Shape::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                let n = ((self.perimeter() / h).ceil() as usize).max(12);
                // Uniform arc-length resampling from a dense parameter sweep.
                let dense = 16 * n;
                let (a, b) = (semi_axes[0], semi_axes[1]);
                let mut cum = Vec::with_capacity(dense + 1);
                let mut prev = Point2::new(a, 0.0);
                let mut total = 0.0;
                cum.push(0.0);
                let mut samples = Vec::with_capacity(dense + 1);
                samples.push(prev);
                for i in 1..=dense {
                    let t = 2.0 * std::f64::consts::PI * (i as f64) / (dense as f64);
                    let p = Point2::new(a * t.cos(), b * t.sin());
                    total += prev.dist(p);
                    cum.push(total);
                    samples.push(p);
                    prev = p;
                }
                let (sr, cr) = rotation.sin_cos();
                let place = |p: Point2| {
                    Point2::new(
                        center[0] + cr * p.x - sr * p.y,
                        center[1] + sr * p.x + cr * p.y,
                    )
                };
                let mut out = Vec::with_capacity(n);
                let mut j = 0;
                for i in 0..n {
                    let target = total * (i as f64) / (n as f64);
                    while j + 1 < cum.len() && cum[j + 1] < target {
                        j += 1;
                    }
                    let seg = cum[j + 1] - cum[j];
                    let w = if seg > 0.0 { (target - cum[j]) / seg } else { 0.0 };
                    let p = samples[j] + (samples[j + 1] - samples[j]) * w;
                    out.push(place(p));
                }
                out
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                let mut out = Vec::new();
                for i in 0..n {
                    let a = Point2::new(vertices[i][0], vertices[i][1]);
                    let b = Point2::new(vertices[(i + 1) % n][0], vertices[(i + 1) % n][1]);
                    let m = ((a.dist(b) / h).ceil() as usize).max(1);
                    for s in 0..m {
                        out.push(a + (b - a) * (s as f64 / m as f64));
                    }
                }
                out
            }
        }
    }

    /// Point of the boundary nearest to `p`.
    pub fn nearest_boundary_point(&self, p: Point2) -> Point2 {
        match self {
            Shape::Disk { center, radius } => {
                let c = Point2::new(center[0], center[1]);
                let d = p - c;
                let n = d.norm();
                if n < 1e-300 {
                    // Center is equidistant from everywhere; pick +x by convention.
                    c + Point2::new(*radius, 0.0)
                } else {
                    c + d * (*radius / n)
                }
            }
            Shape::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                let q = to_ellipse_frame(p, center, *rotation);
                let fp = ellipse_project(q, semi_axes[0], semi_axes[1]);
                from_ellipse_frame(fp, center, *rotation)
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                let mut best = Point2::new(vertices[0][0], vertices[0][1]);
                let mut best_d = f64::INFINITY;
                for i in 0..n {
                    let a = Point2::new(vertices[i][0], vertices[i][1]);
                    let b = Point2::new(vertices[(i + 1) % n][0], vertices[(i + 1) % n][1]);
                    let q = project_to_segment(p, a, b);
                    let d = p.dist(q);
                    if d < best_d {
                        best_d = d;
                        best = q;
                    }
                }
                best
            }
        }
    }

    /// Intersection parameters of segment `a + t(b-a)`, `t ∈ [0,1]`, with the
    /// closed shape: the sub-intervals of `[0,1]` lying inside the closure.
    fn segment_inside_intervals(&self, a: Point2, b: Point2) -> Vec<(f64, f64)> {
        match self {
            Shape::Disk { center, radius } => {
                let c = Point2::new(center[0], center[1]);
                segment_disk_interval(a, b, c, *radius).into_iter().collect()
            }
            Shape::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                // Affine map to the unit disk preserves the parameter t.
                let qa = scale_to_unit(to_ellipse_frame(a, center, *rotation), semi_axes);
                let qb = scale_to_unit(to_ellipse_frame(b, center, *rotation), semi_axes);
                segment_disk_interval(qa, qb, Point2::new(0.0, 0.0), 1.0)
                    .into_iter()
                    .collect()
            }
            Shape::Polygon { vertices } => {
                let mut ts = vec![0.0, 1.0];
                let n = vertices.len();
                let d = b - a;
                for i in 0..n {
                    let p = Point2::new(vertices[i][0], vertices[i][1]);
                    let q = Point2::new(vertices[(i + 1) % n][0], vertices[(i + 1) % n][1]);
                    let e = q - p;
                    let denom = d.cross(e);
                    if denom.abs() < 1e-15 {
                        continue;
                    }
                    let t = (p - a).cross(e) / denom;
                    let s = (p - a).cross(d) / denom;
                    if (-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&s) {
                        ts.push(t.clamp(0.0, 1.0));
                    }
                }
                ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
                ts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
                let mut out = Vec::new();
                for w in ts.windows(2) {
                    let mid = a + d * (0.5 * (w[0] + w[1]));
                    if polygon_contains(vertices, mid) {
                        out.push((w[0], w[1]));
                    }
                }
                // Merge adjacent intervals.
                let mut merged: Vec<(f64, f64)> = Vec::new();
                for iv in out {
                    if let Some(last) = merged.last_mut() {
                        if (iv.0 - last.1).abs() < 1e-12 {
                            last.1 = iv.1;
                            continue;
                        }
                    }
                    merged.push(iv);
                }
                merged
            }
        }
    }
}

fn to_ellipse_frame(p: Point2, center: &[f64; 2], rotation: f64) -> Point2 {
    let d = p - Point2::new(center[0], center[1]);
    let (s, c) = rotation.sin_cos();
    Point2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

fn from_ellipse_frame(p: Point2, center: &[f64; 2], rotation: f64) -> Point2 {
    let (s, c) = rotation.sin_cos();
    Point2::new(
        center[0] + c * p.x - s * p.y,
        center[1] + s * p.x + c * p.y,
    )
}

fn scale_to_unit(p: Point2, semi_axes: &[f64; 2]) -> Point2 {
    Point2::new(p.x / semi_axes[0], p.y / semi_axes[1])
}

/// Nearest point on the axis-aligned ellipse `x²/a² + y²/b² = 1` to `q`,
/// via damped Newton on the parametric angle. Robust for points anywhere in
/// the plane; ~1e-12 accurate after the fixed iteration budget.
fn ellipse_project(q: Point2, a: f64, b: f64) -> Point2 {
    // Work in the first quadrant by symmetry.
    let sx = if q.x < 0.0 { -1.0 } else { 1.0 };
    let sy = if q.y < 0.0 { -1.0 } else { 1.0 };
    let p = Point2::new(q.x.abs(), q.y.abs());
    // The parametric stationarity equation has spurious roots (for interior
    // points the far axis crossing is one), so seed Newton from a coarse scan
    // of the quarter arc instead of the naive polar angle.
    let mut t = 0.0;
    let mut best = f64::INFINITY;
    const SCAN: usize = 64;
    for i in 0..=SCAN {
        let ti = std::f64::consts::FRAC_PI_2 * (i as f64) / (SCAN as f64);
        let (st, ct) = ti.sin_cos();
        let d2 = (Point2::new(a * ct, b * st) - p).norm2();
        if d2 < best {
            best = d2;
            t = ti;
        }
    }
    for _ in 0..60 {
        let (st, ct) = t.sin_cos();
        let e = Point2::new(a * ct, b * st);
        let de = Point2::new(-a * st, b * ct);
        let dde = Point2::new(-a * ct, -b * st);
        let r = e - p;
        let f = r.dot(de);
        let df = de.dot(de) + r.dot(dde);
        if df.abs() < 1e-300 {
            break;
        }
        let step = (f / df).clamp(-0.5, 0.5);
        t -= step;
        t = t.clamp(0.0, std::f64::consts::FRAC_PI_2);
        if step.abs() < 1e-14 {
            break;
        }
    }
    let (st, ct) = t.sin_cos();
    Point2::new(sx * a * ct, sy * b * st)
}

fn ellipse_boundary_distance(q: Point2, a: f64, b: f64) -> f64 {
    q.dist(ellipse_project(q, a, b))
}

fn project_to_segment(p: Point2, a: Point2, b: Point2) -> Point2 {
    let d = b - a;
    let l2 = d.norm2();
    if l2 < tol::DEGENERATE_SEG2 {
        return a;
    }
    let t = ((p - a).dot(d) / l2).clamp(0.0, 1.0);
    a + d * t
}

/// Winding-number membership test against a closed loop of points
/// (counter-clockwise for a positively oriented region).
pub fn point_in_loop(loop_pts: &[Point2], p: Point2) -> bool {
    let n = loop_pts.len();
    let mut winding = 0i32;
    for i in 0..n {
        let a = loop_pts[i];
        let b = loop_pts[(i + 1) % n];
        if a.y <= p.y {
            if b.y > p.y && (b - a).cross(p - a) > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && (b - a).cross(p - a) < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// Distance from `p` to the closest point of a closed polyline.
pub fn polyline_distance(points: &[Point2], closed: bool, p: Point2) -> f64 {
    let n = points.len();
    let m = if closed { n } else { n - 1 };
    let mut best = f64::INFINITY;
    for i in 0..m {
        let a = points[i];
        let b = points[(i + 1) % n];
        best = best.min(p.dist(project_to_segment(p, a, b)));
    }
    best
}

fn polygon_signed_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

fn polygon_centroid(vertices: &[[f64; 2]]) -> Point2 {
    let n = vertices.len();
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut area = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let w = a[0] * b[1] - b[0] * a[1];
        area += w;
        cx += (a[0] + b[0]) * w;
        cy += (a[1] + b[1]) * w;
    }
    area *= 0.5;
    Point2::new(cx / (6.0 * area), cy / (6.0 * area))
}

fn polygon_contains(vertices: &[[f64; 2]], p: Point2) -> bool {
    // Winding-number test; robust for points off the boundary.
    let n = vertices.len();
    let mut winding = 0i32;
    for i in 0..n {
        let a = Point2::new(vertices[i][0], vertices[i][1]);
        let b = Point2::new(vertices[(i + 1) % n][0], vertices[(i + 1) % n][1]);
        if a.y <= p.y {
            if b.y > p.y && (b - a).cross(p - a) > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && (b - a).cross(p - a) < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

fn polygon_boundary_distance(vertices: &[[f64; 2]], p: Point2) -> f64 {
    let pts: Vec<Point2> = vertices.iter().map(|v| Point2::new(v[0], v[1])).collect();
    polyline_distance(&pts, true, p)
}

/// Sub-interval of `[0,1]` where segment `a + t(b-a)` meets the closed disk.
fn segment_disk_interval(a: Point2, b: Point2, c: Point2, r: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let f = a - c;
    let aa = d.norm2();
    if aa < tol::DEGENERATE_SEG2 {
        return if f.norm() <= r { Some((0.0, 1.0)) } else { None };
    }
    let bb = 2.0 * f.dot(d);
    let cc = f.norm2() - r * r;
    let disc = bb * bb - 4.0 * aa * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-bb - sq) / (2.0 * aa);
    let t1 = (-bb + sq) / (2.0 * aa);
    let lo = t0.max(0.0);
    let hi = t1.min(1.0);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// One obstacle component: a shape plus its constant surface impedance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleComponent {
    pub shape: Shape,
    /// Surface impedance λ on this component's boundary, `Im λ > 0`.
    pub lambda_re: f64,
    pub lambda_im: f64,
}

impl ObstacleComponent {
    pub fn lambda(&self) -> Complex64 {
        Complex64::new(self.lambda_re, self.lambda_im)
    }
}

/// The full obstacle: finitely many disjoint components, each strictly
/// inside the domain.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub components: Vec<ObstacleComponent>,
}

impl ObstacleSpec {
    pub fn empty() -> Self {
        ObstacleSpec { components: vec![] }
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `‖Re λ‖_∞ + ‖Im λ‖_∞` over all components; the impedance size that
    /// enters the smallness conditions.
    pub fn impedance_bound(&self) -> f64 {
        let re = self
            .components
            .iter()
            .map(|c| c.lambda_re.abs())
            .fold(0.0, f64::max);
        let im = self
            .components
            .iter()
            .map(|c| c.lambda_im.abs())
            .fold(0.0, f64::max);
        re + im
    }

    /// Smallest `Im λ` over components (must be positive for well-posedness).
    pub fn min_im_lambda(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.lambda_im)
            .fold(f64::INFINITY, f64::min)
    }

    /// Support function of the union.
    pub fn support_function(&self, omega: Point2) -> f64 {
        self.components
            .iter()
            .map(|c| c.shape.support_function(omega))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Strict membership in the union of open components.
    pub fn contains(&self, p: Point2) -> bool {
        self.components.iter().any(|c| c.shape.contains(p))
    }

    /// Membership in the union of closures.
    pub fn contains_closure(&self, p: Point2) -> bool {
        self.components.iter().any(|c| c.shape.contains_closure(p))
    }

    /// Distance from `p` to the obstacle boundary `∂D` (unsigned, the
    /// minimum over components); `+∞` when there is no obstacle.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.components
            .iter()
            .map(|c| c.shape.distance_to_boundary(p).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the standing geometric preconditions against a domain:
    /// components strictly inside, pairwise disjoint, positive impedance
    /// imaginary part. `clearance` is the minimum allowed analytic gap
    /// between component boundaries and between components and `∂Ω`.
    pub fn validate_in(&self, domain: &Shape, clearance: f64) -> Result<()> {
        for (j, comp) in self.components.iter().enumerate() {
            comp.shape.validate()?;
            if comp.lambda_im <= 0.0 {
                return Err(Error::Geometry(format!(
                    "component {j}: impedance must have positive imaginary part, got {} + {}i",
                    comp.lambda_re, comp.lambda_im
                )));
            }
            // Strictly inside the domain: boundary samples all inside with
            // margin, checked on a fine polygonalization.
            let probe = comp.shape.polygonalize(comp.shape.perimeter() / 256.0);
            for p in &probe {
                if domain.distance_to_boundary(*p) < clearance {
                    return Err(Error::Geometry(format!(
                        "component {j} is within {clearance} of the outer boundary (point {:.4},{:.4})",
                        p.x, p.y
                    )));
                }
            }
        }
        for i in 0..self.components.len() {
            for j in (i + 1)..self.components.len() {
                let a = &self.components[i].shape;
                let b = &self.components[j].shape;
                let pa = a.polygonalize(a.perimeter() / 256.0);
                let mut min_d = f64::INFINITY;
                for p in &pa {
                    min_d = min_d.min(-b.distance_to_boundary(*p));
                    if b.contains_closure(*p) {
                        return Err(Error::Geometry(format!(
                            "components {i} and {j} overlap"
                        )));
                    }
                }
                if min_d < clearance {
                    return Err(Error::Geometry(format!(
                        "components {i} and {j} are within {min_d:.4e} of each other (required clearance {clearance})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A needle: an injective polyline from a point of `∂Ω` to an interior tip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Needle {
    /// Polyline vertices: first on `∂Ω`, last is the tip.
    pub points: Vec<Point2>,
}

impl Needle {
    pub fn anchor(&self) -> Point2 {
        self.points[0]
    }

    pub fn tip(&self) -> Point2 {
        *self.points.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    /// Unit direction of the final segment, pointing toward the tip.
    pub fn tip_direction(&self) -> Point2 {
        let n = self.points.len();
        (self.points[n - 1] - self.points[n - 2]).normalize()
    }

    /// Point at arc-length fraction `t ∈ [0,1]` from the anchor.
    pub fn at_fraction(&self, t: f64) -> Point2 {
        let total = self.length();
        let mut target = t.clamp(0.0, 1.0) * total;
        for w in self.points.windows(2) {
            let seg = w[0].dist(w[1]);
            if target <= seg || seg == 0.0 {
                let u = if seg > 0.0 { target / seg } else { 0.0 };
                return w[0] + (w[1] - w[0]) * u;
            }
            target -= seg;
        }
        self.tip()
    }

    /// Distance from `p` to the needle polyline.
    pub fn distance(&self, p: Point2) -> f64 {
        polyline_distance(&self.points, false, p)
    }

    /// Validity against the domain: anchor on `∂Ω`, tip strictly inside,
    /// every other vertex and the open polyline strictly inside.
    pub fn validate_in(&self, domain: &Shape) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::Geometry("needle needs at least two points".into()));
        }
        if !domain.on_boundary(self.anchor()) {
            return Err(Error::Geometry(format!(
                "needle anchor ({:.6},{:.6}) is not on the outer boundary",
                self.anchor().x,
                self.anchor().y
            )));
        }
        if domain.distance_to_boundary(self.tip()) <= tol::ON_BOUNDARY {
            return Err(Error::Geometry(format!(
                "needle tip ({:.6},{:.6}) is not strictly inside the domain",
                self.tip().x,
                self.tip().y
            )));
        }
        // Open polyline inside the domain: check interior vertices exactly
        // and segment midpoints as a convexity-free safeguard.
        for (i, p) in self.points.iter().enumerate().skip(1) {
            if domain.distance_to_boundary(*p) <= tol::ON_BOUNDARY {
                return Err(Error::Geometry(format!(
                    "needle vertex {i} ({:.6},{:.6}) leaves the domain",
                    p.x, p.y
                )));
            }
        }
        for w in self.points.windows(2) {
            for s in 1..8 {
                let p = w[0] + (w[1] - w[0]) * (s as f64 / 8.0);
                if domain.distance_to_boundary(p) < -tol::ON_BOUNDARY {
                    return Err(Error::Geometry(
                        "needle segment leaves the domain".into(),
                    ));
                }
            }
        }
        // Injectivity gets a cheap proxy: consecutive vertices distinct.
        for w in self.points.windows(2) {
            if w[0].dist(w[1]) < 1e-12 {
                return Err(Error::Geometry("needle has a degenerate segment".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of testing a needle against the obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeedleHit {
    /// The needle (tip included) stays away from the closed obstacle.
    MissesClosure,
    /// The needle touches `∂D` but never enters the open obstacle.
    GrazesBoundary,
    /// The needle passes through the open obstacle (or the tip is inside).
    HitsInterior,
}

/// Classify a needle against the obstacle using the analytic shapes.
///
/// The needle is `σ(]0,1])`, i.e. the tip is included but the anchor is not;
/// anchors sit on `∂Ω`, which is assumed disjoint from `D̄`.
pub fn needle_hits(needle: &Needle, obstacle: &ObstacleSpec) -> NeedleHit {
    let mut grazed = false;
    for comp in &obstacle.components {
        if comp.shape.contains(needle.tip()) {
            return NeedleHit::HitsInterior;
        }
        for w in needle.points.windows(2) {
            for (lo, hi) in comp.shape.segment_inside_intervals(w[0], w[1]) {
                if hi - lo > 1e-9 {
                    // Positive-length intersection with the closure means the
                    // open interior is crossed (components have interior).
                    return NeedleHit::HitsInterior;
                }
            }
            // Tangencies and endpoint contacts can be invisible to the exact
            // interval test when roundoff pushes a discriminant the wrong
            // way; a distance minimization over the segment catches them.
            if !grazed
                && min_abs_boundary_distance(&comp.shape, w[0], w[1]) <= tol::ON_BOUNDARY
            {
                grazed = true;
            }
        }
    }
    if grazed {
        NeedleHit::GrazesBoundary
    } else {
        NeedleHit::MissesClosure
    }
}

/// Minimum of `|signed boundary distance|` over the segment `a..b`: dense
/// sampling to bracket the minimizer, then a golden-section polish.
fn min_abs_boundary_distance(shape: &Shape, a: Point2, b: Point2) -> f64 {
    const SAMPLES: usize = 64;
    let f = |t: f64| shape.distance_to_boundary(a + (b - a) * t).abs();
    let mut best = f(0.0);
    let mut best_t = 0.0;
    for i in 1..=SAMPLES {
        let t = i as f64 / SAMPLES as f64;
        let v = f(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    let mut lo = (best_t - 1.0 / SAMPLES as f64).max(0.0);
    let mut hi = (best_t + 1.0 / SAMPLES as f64).min(1.0);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    best.min(f1).min(f2)
}

/// Straight needle from `anchor` (a point of `∂Ω`) to `tip`.
pub fn straight_needle(domain: &Shape, anchor: Point2, tip: Point2) -> Result<Needle> {
    let needle = Needle {
        points: vec![anchor, tip],
    };
    needle.validate_in(domain)?;
    Ok(needle)
}

/// Straight needle whose anchor is the nearest boundary point to the tip —
/// the default aiming policy.
pub fn default_needle(domain: &Shape, tip: Point2) -> Result<Needle> {
    let anchor = domain.nearest_boundary_point(tip);
    straight_needle(domain, anchor, tip)
}

/// Straight needle whose anchor direction is rotated by `angle` radians
/// about the tip relative to the nearest-boundary default; used to re-aim
/// when the default grazes the obstacle.
pub fn rotated_needle(domain: &Shape, tip: Point2, angle: f64) -> Result<Needle> {
    let nearest = domain.nearest_boundary_point(tip);
    let dir = nearest - tip;
    let (s, c) = angle.sin_cos();
    let rot = Point2::new(c * dir.x - s * dir.y, s * dir.x + c * dir.y).normalize();
    // March along the rotated ray until the boundary is crossed, then bisect.
    let mut t_lo = 0.0f64;
    let mut t_hi = f64::NAN;
    let mut t = dir.norm().max(1e-6);
    for _ in 0..64 {
        let p = tip + rot * t;
        if domain.distance_to_boundary(p) <= 0.0 {
            t_hi = t;
            break;
        }
        t_lo = t;
        t *= 1.5;
    }
    if !t_hi.is_finite() {
        return Err(Error::Geometry(
            "rotated needle ray never reached the outer boundary".into(),
        ));
    }
    for _ in 0..80 {
        let mid = 0.5 * (t_lo + t_hi);
        if domain.distance_to_boundary(tip + rot * mid) > 0.0 {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    let anchor = domain.nearest_boundary_point(tip + rot * (0.5 * (t_lo + t_hi)));
    straight_needle(domain, anchor, tip)
}
