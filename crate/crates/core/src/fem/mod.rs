//! Complex-valued P1 finite elements for the Helmholtz impedance problems:
//! the obstacle problem (Dirichlet data on the outer boundary, impedance
//! condition on every obstacle interface), the background problem (no
//! obstacle), and reflected-solution problems driven by a Robin functional.
//!
//! Conventions used throughout:
//! * The discrete operator is `K = A − k²M − Σ_j λ_j B_j`, where `A` is the
//!   stiffness matrix, `M` the mass matrix, and `B_j` the unit-weight
//!   boundary mass on interface `j`. This is the weak form multiplied by −1,
//!   so that `K` reduces to the positive definite `A` for `k = 0`, `D = ∅`.
//! * The interface normal ν points out of the obstacle into the exterior;
//!   impedance data `g` with `∂u/∂ν + λu = g` enters as `K u = −r`,
//!   `r_i = ∫ g φ_i dS`.
//! * Mass and stiffness integrals are exact for P1 (mid-edge quadrature);
//!   interface line integrals use 3-point Gauss (exact through degree 5).

pub mod bessel;

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::linalg::{nearest_generalized_eigenvalue, Csr, ReducedFactor};
use crate::mesh::{EdgeTag, TriMesh, TriTag};

// ---------------------------------------------------------------------------
// Impedance specification
// ---------------------------------------------------------------------------

/// Impedance coefficient λ per obstacle component (indexed by interface tag).
#[derive(Debug, Clone, Default)]
pub struct ImpedanceSpec {
    pub per_component: Vec<Complex64>,
}

impl ImpedanceSpec {
    /// No impedance terms at all (background problem).
    pub fn none() -> ImpedanceSpec {
        ImpedanceSpec {
            per_component: Vec::new(),
        }
    }

    pub fn from_obstacle(obstacle: &crate::geometry::ObstacleSpec) -> ImpedanceSpec {
        ImpedanceSpec {
            per_component: obstacle.components.iter().map(|c| c.lambda()).collect(),
        }
    }

    pub fn uniform(lambda: Complex64, n_components: usize) -> ImpedanceSpec {
        ImpedanceSpec {
            per_component: vec![lambda; n_components],
        }
    }

    pub fn lambda_of(&self, component: u32) -> Result<Complex64> {
        self.per_component
            .get(component as usize)
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "impedance spec has {} components but interface {} is present",
                    self.per_component.len(),
                    component
                ))
            })
    }

    pub fn is_empty(&self) -> bool {
        self.per_component.is_empty()
    }

    /// Smallest imaginary part across components (uniqueness requires > 0).
    pub fn min_im(&self) -> f64 {
        self.per_component
            .iter()
            .map(|l| l.im)
            .fold(f64::INFINITY, f64::min)
    }

    /// `‖Re λ‖_∞ + ‖Im λ‖_∞` over the components.
    pub fn sup_bound(&self) -> f64 {
        let re = self
            .per_component
            .iter()
            .map(|l| l.re.abs())
            .fold(0.0, f64::max);
        let im = self
            .per_component
            .iter()
            .map(|l| l.im.abs())
            .fold(0.0, f64::max);
        re + im
    }
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// Which part of the parent mesh a system lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// All triangles (obstacle interiors included): the background domain Ω.
    Full,
    /// Exterior triangles only: Ω ∖ D̄, extracted as a submesh.
    Exterior,
}

/// Assembled P1 forms over one mesh: stiffness `A = ∫∇φ_i·∇φ_j`, mass
/// `M = ∫φ_iφ_j`, and a unit-weight boundary mass `B = ∫ φ_iφ_j dS` per
/// tagged curve. The λ weighting and the `k²` scaling are applied when the
/// system terms are combined, keeping each stored matrix real.
#[derive(Debug, Clone)]
pub struct AssembledForms {
    /// Mesh the matrices index (the extracted submesh for `Region::Exterior`).
    pub mesh: Arc<TriMesh>,
    /// For a submesh: parent node index of each node.
    pub parent_of: Option<Vec<usize>>,
    pub stiffness: Csr,
    pub mass: Csr,
    pub boundary_unit: BTreeMap<EdgeTag, Csr>,
    pub lambda: ImpedanceSpec,
    pub k: f64,
}

/// Assemble the P1 forms for `mesh` over the requested region.
pub fn assemble(
    mesh: &Arc<TriMesh>,
    region: Region,
    lambda: ImpedanceSpec,
    k: f64,
) -> Result<AssembledForms> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::Config(format!("wavenumber must be ≥ 0, got {k}")));
    }
    let (mesh, parent_of) = match region {
        Region::Full => (Arc::clone(mesh), None),
        Region::Exterior => {
            let (sub, parent) = mesh.exterior_submesh();
            (Arc::new(sub), Some(parent))
        }
    };
    // Every interface tag present must have an impedance coefficient.
    if !lambda.is_empty() {
        for e in &mesh.edges {
            if let EdgeTag::Interface(j) = e.tag {
                lambda.lambda_of(j)?;
            }
        }
    }

    let n = mesh.n_nodes();
    let mut a_trip: Vec<(usize, usize, f64)> = Vec::with_capacity(9 * mesh.n_tris());
    let mut m_trip: Vec<(usize, usize, f64)> = Vec::with_capacity(9 * mesh.n_tris());
    for t in 0..mesh.n_tris() {
        let v = mesh.tris[t];
        let area = mesh.tri_area(t);
        let g = gradients(&mesh, t, area);
        for i in 0..3 {
            for j in 0..3 {
                a_trip.push((v[i], v[j], area * g[i].dot(g[j])));
                let mij = if i == j { area / 6.0 } else { area / 12.0 };
                m_trip.push((v[i], v[j], mij));
            }
        }
    }
    let stiffness = Csr::from_triplets(n, n, &a_trip);
    let mass = Csr::from_triplets(n, n, &m_trip);

    let mut b_trip: BTreeMap<EdgeTag, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for e in &mesh.edges {
        let len = mesh.edge_length(e);
        let t = b_trip.entry(e.tag).or_default();
        t.push((e.a, e.a, len / 3.0));
        t.push((e.b, e.b, len / 3.0));
        t.push((e.a, e.b, len / 6.0));
        t.push((e.b, e.a, len / 6.0));
    }
    let boundary_unit = b_trip
        .into_iter()
        .map(|(tag, trip)| (tag, Csr::from_triplets(n, n, &trip)))
        .collect();

    Ok(AssembledForms {
        mesh,
        parent_of,
        stiffness,
        mass,
        boundary_unit,
        lambda,
        k,
    })
}

impl AssembledForms {
    /// The terms of the system operator `K = A − k²M − Σ_j λ_j B_j`.
    pub fn system_terms(&self) -> Vec<(Complex64, &Csr)> {
        let mut terms: Vec<(Complex64, &Csr)> = vec![
            (Complex64::new(1.0, 0.0), &self.stiffness),
            (Complex64::new(-self.k * self.k, 0.0), &self.mass),
        ];
        if !self.lambda.is_empty() {
            for (tag, b) in &self.boundary_unit {
                if let EdgeTag::Interface(j) = tag {
                    let l = self
                        .lambda
                        .lambda_of(*j)
                        .expect("validated at assembly");
                    terms.push((-l, b));
                }
            }
        }
        terms
    }
}

/// P1 shape-function gradients on triangle `t` (constant per triangle).
fn gradients(mesh: &TriMesh, t: usize, area: f64) -> [Point2; 3] {
    let [p0, p1, p2] = mesh.tri_points(t);
    let s = 1.0 / (2.0 * area);
    [
        (p2 - p1).perp() * s,
        (p0 - p2).perp() * s,
        (p1 - p0).perp() * s,
    ]
}

// ---------------------------------------------------------------------------
// Finite element functions
// ---------------------------------------------------------------------------

/// A P1 finite element function: one complex coefficient per mesh node.
#[derive(Debug, Clone)]
pub struct FeFunction {
    mesh: Arc<TriMesh>,
    pub values: Vec<Complex64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<TriMesh>, values: Vec<Complex64>) -> Result<FeFunction> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::Config(format!(
                "coefficient count {} does not match node count {}",
                values.len(),
                mesh.n_nodes()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Config("non-finite coefficient".into()));
        }
        Ok(FeFunction { mesh, values })
    }

    pub fn zeros(mesh: Arc<TriMesh>) -> FeFunction {
        let n = mesh.n_nodes();
        FeFunction {
            mesh,
            values: vec![Complex64::ZERO; n],
        }
    }

    /// Nodal interpolant of a pointwise function.
    pub fn interpolate(mesh: Arc<TriMesh>, f: impl Fn(Point2) -> Complex64) -> FeFunction {
        let values = mesh.nodes.iter().map(|&p| f(p)).collect();
        FeFunction { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    /// Evaluate at a point via barycentric interpolation; `None` outside the
    /// mesh.
    pub fn eval(&self, p: Point2) -> Option<Complex64> {
        let (t, bary) = self.mesh.locate(p)?;
        let v = self.mesh.tris[t];
        Some(
            self.values[v[0]] * bary[0]
                + self.values[v[1]] * bary[1]
                + self.values[v[2]] * bary[2],
        )
    }

    /// Pointwise difference (functions must share a mesh).
    pub fn sub(&self, other: &FeFunction) -> Result<FeFunction> {
        if self.values.len() != other.values.len() {
            return Err(Error::Config(
                "cannot subtract functions on different meshes".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(FeFunction {
            mesh: Arc::clone(&self.mesh),
            values,
        })
    }

    /// Restriction onto a submesh given the submesh→parent node map.
    pub fn restricted(&self, sub: Arc<TriMesh>, parent_of: &[usize]) -> Result<FeFunction> {
        if parent_of.len() != sub.n_nodes() {
            return Err(Error::Config("parent map does not fit the submesh".into()));
        }
        let values = parent_of.iter().map(|&p| self.values[p]).collect();
        FeFunction::new(sub, values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Write as CSV: `node,x,y,re,im` with full-precision floats.
    pub fn write_csv<W: IoWrite>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "node,x,y,re,im")?;
        for (i, (p, v)) in self.mesh.nodes.iter().zip(self.values.iter()).enumerate() {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                i, p.x, p.y, v.re, v.im
            )?;
        }
        Ok(())
    }
}

/// Values of a boundary datum at the outer-boundary nodes (in
/// `mesh.outer_nodes` order) sampled from a pointwise function.
pub fn boundary_data(mesh: &TriMesh, f: impl Fn(Point2) -> Complex64) -> Vec<Complex64> {
    mesh.outer_nodes.iter().map(|&n| f(mesh.nodes[n])).collect()
}

// ---------------------------------------------------------------------------
// Quadrature of P1 quantities
// ---------------------------------------------------------------------------

/// Squared-magnitude integrals of a P1 function over a tagged region and a
/// tagged curve family.
#[derive(Debug, Clone, Copy, Default)]
pub struct Energy {
    /// `∫ |∇u|²` over the selected triangles.
    pub dirichlet: f64,
    /// `∫ |u|²` over the selected triangles.
    pub mass: f64,
    /// `∫ |u|² dS` over the selected tagged edges.
    pub boundary: f64,
}

/// Exact quadrature of the P1 energy quantities (mid-edge rule for the mass,
/// Simpson on edges — both exact for the quadratic integrands).
pub fn energy(
    mesh: &TriMesh,
    values: &[Complex64],
    tri_want: impl Fn(TriTag) -> bool,
    edge_want: impl Fn(EdgeTag) -> bool,
) -> Energy {
    let mut e = Energy::default();
    for t in 0..mesh.n_tris() {
        if !tri_want(mesh.tri_tags[t]) {
            continue;
        }
        let v = mesh.tris[t];
        let area = mesh.tri_area(t);
        let g = gradients(mesh, t, area);
        let mut gx = Complex64::ZERO;
        let mut gy = Complex64::ZERO;
        for i in 0..3 {
            gx += values[v[i]] * g[i].x;
            gy += values[v[i]] * g[i].y;
        }
        e.dirichlet += area * (gx.norm_sqr() + gy.norm_sqr());
        let m01 = (values[v[0]] + values[v[1]]) * 0.5;
        let m12 = (values[v[1]] + values[v[2]]) * 0.5;
        let m20 = (values[v[2]] + values[v[0]]) * 0.5;
        e.mass += area / 3.0 * (m01.norm_sqr() + m12.norm_sqr() + m20.norm_sqr());
    }
    for edge in &mesh.edges {
        if !edge_want(edge.tag) {
            continue;
        }
        let len = mesh.edge_length(edge);
        let ua = values[edge.a];
        let ub = values[edge.b];
        let um = (ua + ub) * 0.5;
        e.boundary += len / 6.0 * (ua.norm_sqr() + 4.0 * um.norm_sqr() + ub.norm_sqr());
    }
    e
}

/// `∫ f ḡ dS` over the selected tagged edges (exact for P1 × P1).
pub fn boundary_inner(
    mesh: &TriMesh,
    f: &[Complex64],
    g: &[Complex64],
    edge_want: impl Fn(EdgeTag) -> bool,
) -> Complex64 {
    let mut acc = Complex64::ZERO;
    for edge in &mesh.edges {
        if !edge_want(edge.tag) {
            continue;
        }
        let len = mesh.edge_length(edge);
        let fa = f[edge.a];
        let fb = f[edge.b];
        let ga = g[edge.a].conj();
        let gb = g[edge.b].conj();
        let fm = (fa + fb) * 0.5;
        let gm = (ga + gb) * 0.5;
        acc += (fa * ga + fm * gm * 4.0 + fb * gb) * (len / 6.0);
    }
    acc
}

use crate::quadrature::TRI_DEG4 as TRI_QUAD_DEG4;

/// `‖u_h − exact‖_{L²}` over the selected triangles (degree-4 quadrature, so
/// the quadrature error is far below the P1 discretization error).
pub fn l2_error(
    mesh: &TriMesh,
    values: &[Complex64],
    exact: impl Fn(Point2) -> Complex64,
    tri_want: impl Fn(TriTag) -> bool,
) -> f64 {
    let mut acc = 0.0;
    for t in 0..mesh.n_tris() {
        if !tri_want(mesh.tri_tags[t]) {
            continue;
        }
        let v = mesh.tris[t];
        let [p0, p1, p2] = mesh.tri_points(t);
        let area = mesh.tri_area(t);
        for &(b0, b1, w) in &TRI_QUAD_DEG4 {
            let b2 = 1.0 - b0 - b1;
            let p = p0 * b0 + p1 * b1 + p2 * b2;
            let uh = values[v[0]] * b0 + values[v[1]] * b1 + values[v[2]] * b2;
            acc += w * area * (uh - exact(p)).norm_sqr();
        }
    }
    acc.sqrt()
}

/// `‖exact‖_{L²}` over the selected triangles (same quadrature).
pub fn l2_norm_of(
    mesh: &TriMesh,
    exact: impl Fn(Point2) -> Complex64,
    tri_want: impl Fn(TriTag) -> bool,
) -> f64 {
    let mut acc = 0.0;
    for t in 0..mesh.n_tris() {
        if !tri_want(mesh.tri_tags[t]) {
            continue;
        }
        let [p0, p1, p2] = mesh.tri_points(t);
        let area = mesh.tri_area(t);
        for &(b0, b1, w) in &TRI_QUAD_DEG4 {
            let b2 = 1.0 - b0 - b1;
            let p = p0 * b0 + p1 * b1 + p2 * b2;
            acc += w * area * exact(p).norm_sqr();
        }
    }
    acc.sqrt()
}

// ---------------------------------------------------------------------------
// Fundamental solution (checked wrappers)
// ---------------------------------------------------------------------------

/// Fundamental solution of the Helmholtz operator at distance `r`:
/// `(i/4)H₀⁽¹⁾(kr)` for `k > 0`, `−log(r)/2π` for `k = 0`.
pub fn fundamental_solution(k: f64, r: f64) -> Result<Complex64> {
    if !(r > 0.0) {
        return Err(Error::Geometry(format!(
            "fundamental solution needs r > 0, got {r}"
        )));
    }
    Ok(bessel::fundamental_solution(k, r))
}

/// Gradient of the fundamental solution at offset `x − source`.
pub fn fundamental_solution_gradient(k: f64, dx: f64, dy: f64) -> Result<[Complex64; 2]> {
    let r = (dx * dx + dy * dy).sqrt();
    if !(r > 0.0) {
        return Err(Error::Geometry(
            "fundamental solution gradient needs a nonzero offset".into(),
        ));
    }
    Ok(bessel::fundamental_solution_gradient(k, dx, dy))
}

// ---------------------------------------------------------------------------
// Helmholtz systems
// ---------------------------------------------------------------------------

/// Outcome of the discrete Dirichlet-eigenvalue proximity probe.
#[derive(Debug, Clone, Copy)]
pub struct ResonanceCheck {
    /// Discrete eigenvalue of `A x = μ M x` (Dirichlet on ∂Ω) nearest `k²`.
    pub nearest_eigenvalue: f64,
    /// `|μ − k²| / k²`.
    pub relative_gap: f64,
    /// True when the gap is below 1%.
    pub warn: bool,
}

/// A factored Helmholtz impedance system over one mesh. The factorization is
/// immutable after construction, so one system can serve many right-hand
/// sides — including concurrently (all solve methods take `&self`).
pub struct HelmholtzSystem {
    forms: AssembledForms,
    /// Nodes not pinned by the outer Dirichlet condition.
    free: Vec<usize>,
    factor: ReducedFactor,
    resonance: Option<ResonanceCheck>,
}

impl HelmholtzSystem {
    /// Background system on the full mesh: `K = A − k²M`, Dirichlet on ∂Ω.
    pub fn background(mesh: &Arc<TriMesh>, k: f64, context: &str) -> Result<HelmholtzSystem> {
        HelmholtzSystem::new(mesh, Region::Full, ImpedanceSpec::none(), k, context)
    }

    /// Obstacle system on the exterior region with impedance λ on every
    /// interface.
    pub fn obstacle(
        mesh: &Arc<TriMesh>,
        lambda: ImpedanceSpec,
        k: f64,
        context: &str,
    ) -> Result<HelmholtzSystem> {
        HelmholtzSystem::new(mesh, Region::Exterior, lambda, k, context)
    }

    pub fn new(
        mesh: &Arc<TriMesh>,
        region: Region,
        lambda: ImpedanceSpec,
        k: f64,
        context: &str,
    ) -> Result<HelmholtzSystem> {
        let forms = assemble(mesh, region, lambda, k)?;
        let free = forms.mesh.free_nodes();
        if free.len() == forms.mesh.n_nodes() {
            return Err(Error::Mesh(
                "mesh has no outer boundary nodes to carry Dirichlet data".into(),
            ));
        }
        let terms = forms.system_terms();
        let factor = ReducedFactor::new(&terms, &free, context)?;
        drop(terms);
        // The proximity probe guards the assumption that k² is not a
        // Dirichlet eigenvalue of the background domain. Impedance systems
        // with Im λ > 0 are dissipative and unconditionally solvable, so
        // only background systems run the (costly) probe.
        let resonance = if k > 0.0 && forms.lambda.is_empty() {
            probe_resonance(&forms, &free, k)
        } else {
            None
        };
        if let Some(r) = &resonance {
            if r.warn {
                log::warn!(
                    "{context}: k² = {:.6} is within {:.3}% of discrete Dirichlet eigenvalue {:.6}",
                    k * k,
                    100.0 * r.relative_gap,
                    r.nearest_eigenvalue
                );
            }
        }
        Ok(HelmholtzSystem {
            forms,
            free,
            factor,
            resonance,
        })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.forms.mesh
    }

    /// Parent node of each system-mesh node when the system lives on an
    /// extracted submesh.
    pub fn parent_of(&self) -> Option<&[usize]> {
        self.forms.parent_of.as_deref()
    }

    pub fn forms(&self) -> &AssembledForms {
        &self.forms
    }

    pub fn k(&self) -> f64 {
        self.forms.k
    }

    pub fn cond_estimate(&self) -> f64 {
        self.factor.cond_estimate()
    }

    pub fn resonance(&self) -> Option<&ResonanceCheck> {
        self.resonance.as_ref()
    }

    /// Apply the full (unreduced) operator `K` to nodal values.
    pub fn apply_operator(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = self.forms.stiffness.matvec_complex(x);
        let k2 = self.forms.k * self.forms.k;
        let mx = self.forms.mass.matvec_complex(x);
        for (yi, mi) in y.iter_mut().zip(mx.iter()) {
            *yi -= k2 * mi;
        }
        if !self.forms.lambda.is_empty() {
            for (tag, b) in &self.forms.boundary_unit {
                if let EdgeTag::Interface(j) = tag {
                    let l = self.forms.lambda.lambda_of(*j).expect("validated");
                    let bx = b.matvec_complex(x);
                    for (yi, bi) in y.iter_mut().zip(bx.iter()) {
                        *yi -= l * bi;
                    }
                }
            }
        }
        y
    }

    /// Solve with Dirichlet data on the outer boundary (one value per node in
    /// `mesh.outer_nodes` order) and homogeneous impedance conditions.
    pub fn solve_dirichlet(&self, f_outer: &[Complex64]) -> Result<FeFunction> {
        self.solve_inner(f_outer, None, "dirichlet solve")
    }

    /// Solve with Dirichlet data on ∂Ω and inhomogeneous impedance data
    /// `∂u/∂ν + λu = g` on the interfaces; `g(component, x, ν)` is evaluated
    /// at 3-point Gauss nodes of every interface edge (ν out of the
    /// obstacle).
    pub fn solve_with_robin(
        &self,
        f_outer: &[Complex64],
        g: impl Fn(u32, Point2, Point2) -> Complex64,
    ) -> Result<FeFunction> {
        let load = self.robin_load(g);
        self.solve_inner(f_outer, Some(load), "robin solve")
    }

    /// The load vector `r_i = ∫_{∂D} g φ_i dS` over all nodes.
    pub fn robin_load(&self, g: impl Fn(u32, Point2, Point2) -> Complex64) -> Vec<Complex64> {
        let mesh = &self.forms.mesh;
        let mut load = vec![Complex64::ZERO; mesh.n_nodes()];
        // 3-point Gauss on [0,1]: exact through degree 5.
        let s = (0.6f64).sqrt() * 0.5;
        let rule = [
            (0.5 - s, 5.0 / 18.0),
            (0.5, 8.0 / 18.0),
            (0.5 + s, 5.0 / 18.0),
        ];
        for e in &mesh.edges {
            let j = match e.tag {
                EdgeTag::Interface(j) => j,
                EdgeTag::Outer => continue,
            };
            let pa = mesh.nodes[e.a];
            let pb = mesh.nodes[e.b];
            let len = pa.dist(pb);
            let nu = mesh.edge_left_normal(e);
            for &(t, w) in &rule {
                let x = pa + (pb - pa) * t;
                let gv = g(j, x, nu);
                load[e.a] += gv * (len * w * (1.0 - t));
                load[e.b] += gv * (len * w * t);
            }
        }
        load
    }

    fn solve_inner(
        &self,
        f_outer: &[Complex64],
        load: Option<Vec<Complex64>>,
        context: &str,
    ) -> Result<FeFunction> {
        let mesh = &self.forms.mesh;
        let n = mesh.n_nodes();
        if f_outer.len() != mesh.outer_nodes.len() {
            return Err(Error::Config(format!(
                "Dirichlet data has {} values but the outer boundary has {} nodes",
                f_outer.len(),
                mesh.outer_nodes.len()
            )));
        }
        // Lift the pinned values and move them to the right-hand side:
        // K_ff u_f = −r_f − (K x_pin)_f.
        let mut x_pin = vec![Complex64::ZERO; n];
        for (i, &node) in mesh.outer_nodes.iter().enumerate() {
            x_pin[node] = f_outer[i];
        }
        let k_pin = self.apply_operator(&x_pin);
        let mut rhs: Vec<Complex64> = self.free.iter().map(|&i| -k_pin[i]).collect();
        if let Some(r) = &load {
            for (row, &i) in self.free.iter().enumerate() {
                rhs[row] -= r[i];
            }
        }
        let apply_reduced = |xf: &[Complex64]| -> Vec<Complex64> {
            let mut full = vec![Complex64::ZERO; n];
            for (row, &i) in self.free.iter().enumerate() {
                full[i] = xf[row];
            }
            let y = self.apply_operator(&full);
            self.free.iter().map(|&i| y[i]).collect()
        };
        let uf = self
            .factor
            .solve_reduced_refined(apply_reduced, &rhs, context)?;
        let mut values = x_pin;
        for (row, &i) in self.free.iter().enumerate() {
            values[i] = uf[row];
        }
        FeFunction::new(Arc::clone(mesh), values)
    }
}

/// Background solve in one call: `(Δ + k²)v = 0` on the full mesh with
/// Dirichlet trace `f` (values at outer nodes).
pub fn solve_background(mesh: &Arc<TriMesh>, k: f64, f: &[Complex64]) -> Result<FeFunction> {
    HelmholtzSystem::background(mesh, k, "background solve")?.solve_dirichlet(f)
}

/// Shift-invert probe for a discrete Dirichlet eigenvalue near `k²`.
fn probe_resonance(forms: &AssembledForms, free: &[usize], k: f64) -> Option<ResonanceCheck> {
    let k2 = k * k;
    match nearest_generalized_eigenvalue(
        &forms.stiffness,
        &forms.mass,
        free,
        k2,
        "resonance probe",
    ) {
        Ok(r) => {
            let relative_gap = (r.value - k2).abs() / k2;
            Some(ResonanceCheck {
                nearest_eigenvalue: r.value,
                relative_gap,
                warn: relative_gap < 0.01,
            })
        }
        // The shifted operator is numerically singular: k² *is* an
        // eigenvalue to machine precision.
        Err(Error::Singular { .. }) => Some(ResonanceCheck {
            nearest_eigenvalue: k2,
            relative_gap: 0.0,
            warn: true,
        }),
        Err(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ObstacleComponent, ObstacleSpec, Shape};
    use crate::mesh::{generate_mesh, MeshParams};
    use approx::assert_relative_eq;

    fn unit_disk_mesh(h: f64) -> Arc<TriMesh> {
        Arc::new(
            generate_mesh(
                &Shape::disk(0.0, 0.0, 1.0),
                &ObstacleSpec::empty(),
                &MeshParams {
                    h,
                    ..MeshParams::default()
                },
            )
            .unwrap(),
        )
    }

    fn annulus_obstacle() -> ObstacleSpec {
        ObstacleSpec {
            components: vec![ObstacleComponent {
                shape: Shape::disk(0.0, 0.0, 0.5),
                lambda_re: 0.0,
                lambda_im: 2.0,
            }],
        }
    }

    fn annulus_mesh(h: f64) -> Arc<TriMesh> {
        Arc::new(
            generate_mesh(
                &Shape::disk(0.0, 0.0, 1.0),
                &annulus_obstacle(),
                &MeshParams {
                    h,
                    ..MeshParams::default()
                },
            )
            .unwrap(),
        )
    }

    /// One reference triangle, no tagged edges.
    fn reference_triangle() -> Arc<TriMesh> {
        Arc::new(TriMesh {
            nodes: vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
            tris: vec![[0, 1, 2]],
            tri_tags: vec![TriTag::Exterior],
            edges: vec![],
            outer_nodes: vec![],
            interface_nodes: vec![],
        })
    }

    #[test]
    fn stiffness_rows_annihilate_constants() {
        let mesh = reference_triangle();
        let forms = assemble(&mesh, Region::Full, ImpedanceSpec::none(), 0.0).unwrap();
        for i in 0..3 {
            let row_sum: f64 = forms.stiffness.row(i).map(|(_, v)| v).sum();
            assert!(row_sum.abs() < 1e-14, "row {i} sums to {row_sum}");
        }
    }

    #[test]
    fn mass_total_is_area() {
        let mesh = reference_triangle();
        let forms = assemble(&mesh, Region::Full, ImpedanceSpec::none(), 0.0).unwrap();
        let total: f64 = (0..3)
            .flat_map(|i| forms.mass.row(i).map(|(_, v)| v).collect::<Vec<_>>())
            .sum();
        assert_relative_eq!(total, 0.5, max_relative = 1e-12);

        // And on a real mesh the total matches the polygonal domain area.
        let disk = unit_disk_mesh(0.1);
        let forms = assemble(&disk, Region::Full, ImpedanceSpec::none(), 0.0).unwrap();
        let total: f64 = (0..disk.n_nodes())
            .flat_map(|i| forms.mass.row(i).map(|(_, v)| v).collect::<Vec<_>>())
            .sum();
        let area = disk.quality().total_area;
        assert_relative_eq!(total, area, max_relative = 1e-12);
    }

    #[test]
    fn boundary_mass_total_is_interface_perimeter() {
        let mesh = annulus_mesh(0.1);
        let forms = assemble(
            &mesh,
            Region::Full,
            ImpedanceSpec::from_obstacle(&annulus_obstacle()),
            1.0,
        )
        .unwrap();
        let b = forms
            .boundary_unit
            .get(&EdgeTag::Interface(0))
            .expect("interface mass");
        let total: f64 = (0..mesh.n_nodes())
            .flat_map(|i| b.row(i).map(|(_, v)| v).collect::<Vec<_>>())
            .sum();
        let perim: f64 = mesh
            .edges
            .iter()
            .filter(|e| e.tag == EdgeTag::Interface(0))
            .map(|e| mesh.edge_length(e))
            .sum();
        assert_relative_eq!(total, perim, max_relative = 1e-12);
        // Polygonal perimeter is close to the analytic circle length.
        assert!((total - std::f64::consts::TAU * 0.5).abs() < 0.01);
    }

    #[test]
    fn laplace_reproduces_linear_functions() {
        let mesh = unit_disk_mesh(0.1);
        let f = boundary_data(&mesh, |p| Complex64::new(p.x, 0.0));
        let u = solve_background(&mesh, 0.0, &f).unwrap();
        let mut max_err = 0.0f64;
        for (i, &p) in mesh.nodes.iter().enumerate() {
            max_err = max_err.max((u.values[i] - Complex64::new(p.x, 0.0)).norm());
        }
        // Globally linear solutions lie in the P1 space, so only the solver
        // tolerance remains.
        assert!(max_err < 1e-8, "max nodal error {max_err}");
    }

    #[test]
    fn constant_reproduced_exactly_at_k_zero() {
        let mesh = unit_disk_mesh(0.15);
        let f = vec![Complex64::new(1.0, 0.0); mesh.outer_nodes.len()];
        let u = solve_background(&mesh, 0.0, &f).unwrap();
        for v in &u.values {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn background_matches_bessel_mode() {
        let mesh = unit_disk_mesh(0.08);
        let k = 1.0;
        let exact = |p: Point2| Complex64::new(bessel::j0(k * p.norm()), 0.0);
        let f = boundary_data(&mesh, exact);
        let v = solve_background(&mesh, k, &f).unwrap();
        let err = l2_error(&mesh, &v.values, exact, |_| true);
        let norm = l2_norm_of(&mesh, exact, |_| true);
        assert!(err / norm < 0.01, "relative L2 error {}", err / norm);
    }

    #[test]
    fn solves_are_linear_in_the_data() {
        let mesh = unit_disk_mesh(0.12);
        let sys = HelmholtzSystem::background(&mesh, 1.0, "linearity").unwrap();
        let nb = mesh.outer_nodes.len();
        let f1: Vec<Complex64> = (0..nb)
            .map(|i| {
                Complex64::new(
                    crate::linalg::hashed_unit(7, i as u64),
                    crate::linalg::hashed_unit(8, i as u64),
                )
            })
            .collect();
        let f2: Vec<Complex64> = (0..nb)
            .map(|i| {
                Complex64::new(
                    crate::linalg::hashed_unit(9, i as u64),
                    crate::linalg::hashed_unit(10, i as u64),
                )
            })
            .collect();
        let sum: Vec<Complex64> = f1.iter().zip(f2.iter()).map(|(a, b)| a + b).collect();
        let u1 = sys.solve_dirichlet(&f1).unwrap();
        let u2 = sys.solve_dirichlet(&f2).unwrap();
        let u12 = sys.solve_dirichlet(&sum).unwrap();
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..mesh.n_nodes() {
            err = err.max((u1.values[i] + u2.values[i] - u12.values[i]).norm());
            scale = scale.max(u12.values[i].norm());
        }
        assert!(err <= 1e-10 * scale.max(1.0), "linearity defect {err}");
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mesh = annulus_mesh(0.1);
        let sys = HelmholtzSystem::obstacle(
            &mesh,
            ImpedanceSpec::from_obstacle(&annulus_obstacle()),
            1.0,
            "uniqueness",
        )
        .unwrap();
        let f = vec![Complex64::ZERO; sys.mesh().outer_nodes.len()];
        let u = sys.solve_dirichlet(&f).unwrap();
        assert!(u.max_abs() <= 1e-10, "zero-data solution norm {}", u.max_abs());
    }

    /// Frozen two-by-two Bessel coefficients for the concentric-disk problem
    /// Ω = disk(0,1), D = disk(0,0.5), λ = 2i, k = 1, f ≡ 1:
    /// u(r) = α J₀(kr) + β Y₀(kr) with u(1) = 1 and u′(0.5) + λu(0.5) = 0
    /// (ν points out of the obstacle, i.e. in the +r direction).
    const ALPHA: Complex64 = Complex64::new(1.200951139594163502154, 0.1106010571188548129366);
    const BETA: Complex64 = Complex64::new(0.9181707872408149109503, -0.9589234548266981694592);
    const ANNULUS_L2: f64 = 1.4560908834825252284;

    fn annulus_exact(p: Point2) -> Complex64 {
        let r = p.norm();
        ALPHA * bessel::j0(r) + BETA * bessel::y0(r)
    }

    #[test]
    fn obstacle_solve_matches_bessel_oracle() {
        let lambda = ImpedanceSpec::from_obstacle(&annulus_obstacle());
        let mut errs = Vec::new();
        for &h in &[0.08, 0.04] {
            let mesh = annulus_mesh(h);
            let sys =
                HelmholtzSystem::obstacle(&mesh, lambda.clone(), 1.0, "bessel oracle").unwrap();
            let f = vec![Complex64::new(1.0, 0.0); sys.mesh().outer_nodes.len()];
            let u = sys.solve_dirichlet(&f).unwrap();
            let err = l2_error(sys.mesh(), &u.values, annulus_exact, |_| true);
            errs.push(err / ANNULUS_L2);
        }
        assert!(errs[0] < 0.02, "relative L2 error at h=0.08: {}", errs[0]);
        // Halving h must show second-order convergence.
        let ratio = errs[0] / errs[1];
        assert!(
            (3.2..=4.8).contains(&ratio),
            "convergence ratio {ratio} (errors {errs:?})"
        );
    }

    #[test]
    fn obstacle_solution_spot_values() {
        let mesh = annulus_mesh(0.04);
        let sys = HelmholtzSystem::obstacle(
            &mesh,
            ImpedanceSpec::from_obstacle(&annulus_obstacle()),
            1.0,
            "spot values",
        )
        .unwrap();
        let f = vec![Complex64::new(1.0, 0.0); sys.mesh().outer_nodes.len()];
        let u = sys.solve_dirichlet(&f).unwrap();
        // Frozen radial values of the analytic solution.
        let refs = [
            (0.5, Complex64::new(0.71891226899342644337, 0.53005519242440122136)),
            (0.75, Complex64::new(0.91196471559190189911, 0.2271242951677863461)),
            (0.9, Complex64::new(0.97496437233875675169, 0.083915870477530833586)),
        ];
        for (r, want) in refs {
            let got = u.eval(Point2::new(r, 0.0)).expect("inside the annulus");
            assert!(
                (got - want).norm() < 5e-3,
                "u({r}) = {got}, expected {want}"
            );
        }
    }

    #[test]
    fn energy_of_constants_and_linears() {
        // Unit square: area exactly 1, perimeter exactly 4.
        let square = Arc::new(
            generate_mesh(
                &Shape::Polygon {
                    vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
                },
                &ObstacleSpec::empty(),
                &MeshParams {
                    h: 0.1,
                    ..MeshParams::default()
                },
            )
            .unwrap(),
        );
        let ones = vec![Complex64::new(1.0, 0.0); square.n_nodes()];
        let e = energy(&square, &ones, |_| true, |_| true);
        assert!(e.dirichlet.abs() < 1e-12);
        assert_relative_eq!(e.mass, 1.0, max_relative = 1e-12);
        assert_relative_eq!(e.boundary, 4.0, max_relative = 1e-12);

        // u = x on the unit disk: |∇u|² = 1, so the Dirichlet term is the
        // mesh area ≈ π.
        let disk = unit_disk_mesh(0.1);
        let x = FeFunction::interpolate(Arc::clone(&disk), |p| Complex64::new(p.x, 0.0));
        let e = energy(&disk, &x.values, |_| true, |_| false);
        assert!((e.dirichlet - std::f64::consts::PI).abs() < 0.01);
    }

    #[test]
    fn interpolant_energy_matches_bessel_integral() {
        // ∫_disk |∇J₀(kr)|² = 2πk² ∫₀¹ J₁(kr)² r dr
        //                   = πk² [J₁(k)² − J₀(k)J₂(k)] for radius 1.
        let k = 1.0;
        let j0k = bessel::j0(k);
        let j1k = bessel::j1(k);
        let j2k = 2.0 * j1k / k - j0k;
        let closed_form = std::f64::consts::PI * k * k * (j1k * j1k - j0k * j2k);
        let disk = unit_disk_mesh(0.05);
        let u = FeFunction::interpolate(Arc::clone(&disk), |p| {
            Complex64::new(bessel::j0(k * p.norm()), 0.0)
        });
        let e = energy(&disk, &u.values, |_| true, |_| false);
        assert!(
            (e.dirichlet - closed_form).abs() / closed_form < 0.02,
            "got {}, closed form {closed_form}",
            e.dirichlet
        );
    }

    #[test]
    fn fundamental_solution_values() {
        // log kernel at r = 1 vanishes.
        assert_eq!(fundamental_solution(0.0, 1.0).unwrap(), Complex64::ZERO);
        // (i/4)(J₀(1) + iY₀(1)) against 10-digit table values.
        let g = fundamental_solution(1.0, 1.0).unwrap();
        let want = Complex64::new(0.0, 0.25) * Complex64::new(0.7651976866, 0.0882569642);
        assert!((g - want).norm() < 1e-9, "G = {g}, want {want}");
        assert!(fundamental_solution(1.0, 0.0).is_err());
        assert!(fundamental_solution(1.0, -1.0).is_err());
    }

    #[test]
    fn resonance_probe_flags_nearby_eigenvalue() {
        let mesh = unit_disk_mesh(0.05);
        // The smallest Dirichlet eigenvalue of the unit disk is j₀₁² ≈ 5.783;
        // its discrete counterpart on this mesh is within a percent of that.
        let near = HelmholtzSystem::background(&mesh, 5.81f64.sqrt(), "near resonance").unwrap();
        let r = near.resonance().expect("probe ran");
        assert!(r.warn, "expected warning, gap {}", r.relative_gap);
        let far = HelmholtzSystem::background(&mesh, 1.0, "far from resonance").unwrap();
        let r = far.resonance().expect("probe ran");
        assert!(!r.warn, "unexpected warning, gap {}", r.relative_gap);
    }

    #[test]
    fn csv_export_roundtrips_values() {
        let mesh = unit_disk_mesh(0.3);
        let u = FeFunction::interpolate(Arc::clone(&mesh), |p| Complex64::new(p.x, p.y));
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("node,x,y,re,im"));
        let first = lines.next().unwrap();
        let cols: Vec<&str> = first.split(',').collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[0], "0");
        let x: f64 = cols[1].parse().unwrap();
        assert_eq!(x, mesh.nodes[0].x);
    }
}
