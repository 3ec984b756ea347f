//! Numerical integration helpers that operate on raw coordinates rather
//! than finite-element data: a fixed degree-4 triangle rule, an adaptive
//! variant that refines toward a designated external point (for integrands
//! with a singularity just outside the integration region), and masked
//! midpoint grids for integrating analytic functions over implicitly
//! defined plane regions.

use crate::geometry::Point2;

/// Six-point symmetric triangle rule, exact for polynomials of total
/// degree ≤ 4. Entries are `(b0, b1, w)` with the third barycentric
/// coordinate `b2 = 1 − b0 − b1`; the weights sum to 1, so an integral is
/// `area · Σ wᵢ f(xᵢ)`.
pub const TRI_DEG4: [(f64, f64, f64); 6] = [
    (0.108103018168070, 0.445948490915965, 0.223381589678011),
    (0.445948490915965, 0.108103018168070, 0.223381589678011),
    (0.445948490915965, 0.445948490915965, 0.223381589678011),
    (0.816847572980459, 0.091576213509771, 0.109951743655322),
    (0.091576213509771, 0.816847572980459, 0.109951743655322),
    (0.091576213509771, 0.091576213509771, 0.109951743655322),
];

/// Signed doubled area of the triangle `(p0, p1, p2)` (positive when
/// counter-clockwise).
fn doubled_area(p0: Point2, p1: Point2, p2: Point2) -> f64 {
    (p1 - p0).cross(p2 - p0)
}

/// `∫_T f` over the triangle `(p0, p1, p2)` with the degree-4 rule.
pub fn integrate_triangle(
    p0: Point2,
    p1: Point2,
    p2: Point2,
    mut f: impl FnMut(Point2) -> f64,
) -> f64 {
    let area = 0.5 * doubled_area(p0, p1, p2).abs();
    let mut acc = 0.0;
    for &(b0, b1, w) in &TRI_DEG4 {
        let b2 = 1.0 - b0 - b1;
        acc += w * f(p0 * b0 + p1 * b1 + p2 * b2);
    }
    acc * area
}

/// Distance from `x` to the nearest point of segment `[a, b]`.
pub fn segment_distance(a: Point2, b: Point2, x: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm2();
    if len2 == 0.0 {
        return x.dist(a);
    }
    let t = ((x - a).dot(ab) / len2).clamp(0.0, 1.0);
    x.dist(a + ab * t)
}

/// Distance from `x` to the (closed) triangle `(p0, p1, p2)`: zero when
/// `x` lies inside, otherwise the nearest-edge distance.
pub fn triangle_distance(p0: Point2, p1: Point2, p2: Point2, x: Point2) -> f64 {
    let orient = doubled_area(p0, p1, p2);
    if orient != 0.0 {
        let s = orient.signum();
        let inside = s * doubled_area(p0, p1, x) >= 0.0
            && s * doubled_area(p1, p2, x) >= 0.0
            && s * doubled_area(p2, p0, x) >= 0.0;
        if inside {
            return 0.0;
        }
    }
    segment_distance(p0, p1, x)
        .min(segment_distance(p1, p2, x))
        .min(segment_distance(p2, p0, x))
}

/// Deepest recursion allowed by [`integrate_triangle_near`]; with 4-way
/// splits this caps the work per input triangle at `4^12` leaf rules and
/// is only reached when `x` touches the triangle's closure.
const ADAPTIVE_MAX_DEPTH: u32 = 12;

/// `∫_T f` over the triangle `(p0, p1, p2)` for an integrand that is
/// smooth on `T` but has a singularity at the external point `x`.
///
/// The triangle is split 4-way (edge midpoints) until each piece has
/// diameter below a third of its distance to `x`, then the degree-4 rule
/// is applied per piece. Far from `x` this degenerates to a single rule
/// application; the cost grows only logarithmically as `x` approaches.
pub fn integrate_triangle_near(
    p0: Point2,
    p1: Point2,
    p2: Point2,
    x: Point2,
    f: &impl Fn(Point2) -> f64,
) -> f64 {
    integrate_rec(p0, p1, p2, x, f, 0)
}

fn integrate_rec(
    p0: Point2,
    p1: Point2,
    p2: Point2,
    x: Point2,
    f: &impl Fn(Point2) -> f64,
    depth: u32,
) -> f64 {
    let diam = p0.dist(p1).max(p1.dist(p2)).max(p2.dist(p0));
    if depth >= ADAPTIVE_MAX_DEPTH || diam < triangle_distance(p0, p1, p2, x) / 3.0 {
        return integrate_triangle(p0, p1, p2, f);
    }
    let m01 = (p0 + p1) * 0.5;
    let m12 = (p1 + p2) * 0.5;
    let m20 = (p2 + p0) * 0.5;
    integrate_rec(p0, m01, m20, x, f, depth + 1)
        + integrate_rec(m01, p1, m12, x, f, depth + 1)
        + integrate_rec(m20, m12, p2, x, f, depth + 1)
        + integrate_rec(m01, m12, m20, x, f, depth + 1)
}

/// Midpoint-rule quadrature over an implicitly defined plane region:
/// the cell centres of a uniform grid that pass the membership mask,
/// each carrying the same cell area as weight.
#[derive(Debug, Clone)]
pub struct MaskedGrid {
    /// Accepted cell centres.
    pub points: Vec<Point2>,
    /// Area of one grid cell (the common quadrature weight).
    pub cell_area: f64,
}

impl MaskedGrid {
    /// Cover `[lo, hi]` with square cells of side ≈ `spacing` and keep the
    /// centres where `mask` holds.
    pub fn new(lo: Point2, hi: Point2, spacing: f64, mask: impl Fn(Point2) -> bool) -> MaskedGrid {
        assert!(spacing > 0.0, "grid spacing must be positive");
        assert!(hi.x > lo.x && hi.y > lo.y, "empty grid box");
        let nx = ((hi.x - lo.x) / spacing).ceil().max(1.0) as usize;
        let ny = ((hi.y - lo.y) / spacing).ceil().max(1.0) as usize;
        let dx = (hi.x - lo.x) / nx as f64;
        let dy = (hi.y - lo.y) / ny as f64;
        let mut points = Vec::new();
        for j in 0..ny {
            let y = lo.y + (j as f64 + 0.5) * dy;
            for i in 0..nx {
                let p = Point2::new(lo.x + (i as f64 + 0.5) * dx, y);
                if mask(p) {
                    points.push(p);
                }
            }
        }
        MaskedGrid { points, cell_area: dx * dy }
    }

    /// Midpoint-rule integral of `f` over the masked region.
    pub fn integrate(&self, mut f: impl FnMut(Point2) -> f64) -> f64 {
        self.points.iter().map(|&p| f(p)).sum::<f64>() * self.cell_area
    }

    /// Total area represented by the accepted cells.
    pub fn area(&self) -> f64 {
        self.points.len() as f64 * self.cell_area
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Exact `∫ x^a y^b` over the reference triangle (0,0),(1,0),(0,1):
    /// `a! b! / (a+b+2)!`.
    fn monomial_exact(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>().max(1.0);
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn degree_four_rule_is_exact_for_quartics() {
        let (p0, p1, p2) = (Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0));
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let got = integrate_triangle(p0, p1, p2, |p| {
                    p.x.powi(a as i32) * p.y.powi(b as i32)
                });
                let want = monomial_exact(a, b);
                assert!(
                    (got - want).abs() <= 1e-14 * want.max(1.0),
                    "x^{a} y^{b}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn rule_is_affine_invariant() {
        // Same monomial check on a skewed, translated triangle via pullback.
        let (p0, p1, p2) = (Point2::new(0.3, -0.2), Point2::new(1.7, 0.4), Point2::new(0.1, 1.9));
        let got = integrate_triangle(p0, p1, p2, |p| p.x * p.x * p.y);
        // Reference: degree-4 rule on the reference triangle of the pulled-back
        // integrand (itself a quartic in barycentric coordinates, so exact).
        let area = 0.5 * ((p1 - p0).cross(p2 - p0)).abs();
        let mut want = 0.0;
        for &(b0, b1, w) in &TRI_DEG4 {
            let b2 = 1.0 - b0 - b1;
            let p = p0 * b0 + p1 * b1 + p2 * b2;
            want += w * p.x * p.x * p.y;
        }
        want *= area;
        assert!((got - want).abs() <= 1e-14 * want.abs().max(1.0));
    }

    #[test]
    fn triangle_distance_cases() {
        let (p0, p1, p2) = (Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0));
        // Interior point.
        assert_eq!(triangle_distance(p0, p1, p2, Point2::new(0.2, 0.2)), 0.0);
        // Closest to an edge interior.
        let d = triangle_distance(p0, p1, p2, Point2::new(0.5, -0.3));
        assert!((d - 0.3).abs() < 1e-15);
        // Closest to a vertex.
        let d = triangle_distance(p0, p1, p2, Point2::new(-3.0, -4.0));
        assert!((d - 5.0).abs() < 1e-15);
        // Degenerate (collinear) triangle falls back to edge distances.
        let d = triangle_distance(p0, p1, Point2::new(2.0, 0.0), Point2::new(0.5, 1.0));
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_rule_handles_nearby_log_singularity() {
        // ∫_T ln|p − x| over the unit square's lower triangle with x just
        // outside the shared edge. Reference from a dense midpoint grid.
        let (p0, p1, p2) = (Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0));
        let x = Point2::new(0.6, -0.02);
        let f = |p: Point2| (p.dist(x)).ln();
        let got = integrate_triangle_near(p0, p1, p2, x, &f);

        // Reference: uniform refinement of T into m² congruent sub-triangles,
        // degree-4 rule on each (the rule's exactness is checked separately).
        // Sub-triangle diameter √2/m ≈ 0.003 is well below the 0.02 distance
        // to the singularity, so the per-cell error is negligible.
        let m = 512usize;
        let vertex = |i: usize, j: usize| {
            p0 + (p1 - p0) * (i as f64 / m as f64) + (p2 - p0) * (j as f64 / m as f64)
        };
        let mut want = 0.0;
        for j in 0..m {
            for i in 0..m - j {
                want += integrate_triangle(vertex(i, j), vertex(i + 1, j), vertex(i, j + 1), f);
                if i + j < m - 1 {
                    want += integrate_triangle(
                        vertex(i + 1, j),
                        vertex(i + 1, j + 1),
                        vertex(i, j + 1),
                        f,
                    );
                }
            }
        }
        assert!(
            (got - want).abs() <= 2e-5 * want.abs(),
            "adaptive {got} vs reference {want}"
        );
    }

    #[test]
    fn adaptive_matches_plain_rule_far_from_singularity() {
        let (p0, p1, p2) = (Point2::new(0.0, 0.0), Point2::new(0.1, 0.0), Point2::new(0.0, 0.1));
        let x = Point2::new(5.0, 5.0);
        let f = |p: Point2| (p.dist(x)).recip();
        let got = integrate_triangle_near(p0, p1, p2, x, &f);
        let plain = integrate_triangle(p0, p1, p2, f);
        assert_eq!(got, plain, "far singularity must not trigger subdivision");
    }

    #[test]
    fn masked_grid_disk_area_and_moment() {
        let grid = MaskedGrid::new(
            Point2::new(-1.0, -1.0),
            Point2::new(1.0, 1.0),
            2.0 / 400.0,
            |p| p.norm() < 1.0,
        );
        assert!((grid.area() - PI).abs() < 2.0 * PI * (2.0 / 400.0));
        // ∫_disk (x² + y²) = π/2.
        let m = grid.integrate(|p| p.norm2());
        assert!((m - PI / 2.0).abs() < 0.01 * (PI / 2.0));
    }
}
