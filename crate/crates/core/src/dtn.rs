//! Discrete Dirichlet-to-Neumann (DtN) pairings and the gap functional.
//!
//! For Dirichlet data `f` on ∂Ω, the DtN map of the obstacle problem sends
//! `f ↦ ∂u/∂ν|_{∂Ω}`. Its weak (and here: discrete) definition is the
//! bilinear pairing
//!
//! ```text
//! ⟨Λ_D f, h⟩ = −∫_{∂D} λ u ṽ dS + ∫_{Ω∖D̄} ∇u·∇ṽ − k² ∫_{Ω∖D̄} u ṽ
//! ```
//!
//! where `u` solves the obstacle problem with trace `f` and `ṽ` is *any*
//! finite element extension of `h` — the value is extension-independent up to
//! the solver residual, because two extensions differ by a test function of
//! the discrete equation. No conjugation anywhere: the pairing is bilinear,
//! and functionals like `⟨(Λ_0−Λ_D)f, f̄⟩` conjugate their data explicitly.
//!
//! The central object is the gap `⟨(Λ_0−Λ_D)f, f̄⟩`, which every indicator
//! downstream consumes. It satisfies an exact discrete energy identity
//! splitting it into four parts (exterior energy of `u−v`, interior energy
//! of `v`, a real-λ boundary term, and a purely imaginary boundary term
//! `i∫ Im λ |u|²`); the identity holds at the discrete level by construction
//! of the pairing, so it doubles as a stringent self-check of every solve.

use std::io::Write as IoWrite;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{
    assemble, energy, AssembledForms, FeFunction, HelmholtzSystem, ImpedanceSpec, Region,
};
use crate::linalg::Csr;
use crate::mesh::{EdgeTag, TriMesh, TriTag};

// ---------------------------------------------------------------------------
// Boundary data
// ---------------------------------------------------------------------------

/// Complex trace coefficients at the outer-boundary nodes, ordered like
/// `mesh.outer_nodes`.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub values: Vec<Complex64>,
}

impl BoundaryData {
    pub fn new(mesh: &TriMesh, values: Vec<Complex64>) -> Result<BoundaryData> {
        if values.len() != mesh.outer_nodes.len() {
            return Err(Error::Config(format!(
                "boundary data has {} values but the outer boundary has {} nodes",
                values.len(),
                mesh.outer_nodes.len()
            )));
        }
        Ok(BoundaryData { values })
    }

    /// Sample a pointwise function at the outer-boundary nodes.
    pub fn sample(mesh: &TriMesh, f: impl Fn(crate::geometry::Point2) -> Complex64) -> BoundaryData {
        BoundaryData {
            values: mesh.outer_nodes.iter().map(|&n| f(mesh.nodes[n])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn conj(&self) -> BoundaryData {
        BoundaryData {
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    /// `self + c · other`.
    pub fn add_scaled(&self, c: Complex64, other: &BoundaryData) -> BoundaryData {
        BoundaryData {
            values: self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Gap functional
// ---------------------------------------------------------------------------

/// The DtN gap `⟨(Λ_0−Λ_D)f, f̄⟩` together with the four grouped terms of its
/// energy identity:
///
/// * `parts[0]` — exterior energy `∫_{Ω∖D̄} |∇(u−v)|² − k²|u−v|²`,
/// * `parts[1]` — interior energy `∫_D |∇v|² − k²|v|²`,
/// * `parts[2]` — boundary term
///   `∫_{∂D} Re λ (|v|² − |u−v|²) − 2 Im λ · Im((u−v)v̄) dS`,
/// * `parts[3]` — imaginary term `i ∫_{∂D} Im λ |u|² dS`.
#[derive(Debug, Clone, Copy)]
pub struct DtnGap {
    pub value: Complex64,
    pub parts: [Complex64; 4],
}

impl DtnGap {
    pub fn parts_sum(&self) -> Complex64 {
        self.parts.iter().sum()
    }
}

/// Report of the gap identity check: `lhs` from the two DtN pairings, `rhs`
/// from the four-part energy expression, both from the same pair of solves.
#[derive(Debug, Clone, Copy)]
pub struct IdentityReport {
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub parts: [Complex64; 4],
    pub rel_err: f64,
}

// ---------------------------------------------------------------------------
// Evaluation context
// ---------------------------------------------------------------------------

/// Shared immutable state for evaluating DtN pairings and gaps: the factored
/// background and obstacle systems plus the forms of the obstacle-interior
/// region. Once built, gap evaluations for distinct data are independent and
/// may run concurrently.
pub struct DtnContext {
    background: HelmholtzSystem,
    obstacle: HelmholtzSystem,
    /// Forms over the obstacle interior `D` (`None` when no obstacle
    /// triangles exist), with the submesh→parent node map.
    interior: Option<(AssembledForms, Vec<usize>)>,
    lambda: ImpedanceSpec,
    k: f64,
}

impl DtnContext {
    pub fn new(mesh: &Arc<TriMesh>, lambda: ImpedanceSpec, k: f64) -> Result<DtnContext> {
        let background = HelmholtzSystem::background(mesh, k, "background system")?;
        let obstacle = HelmholtzSystem::obstacle(mesh, lambda.clone(), k, "obstacle system")?;
        // The exterior submesh keeps parent node order, so its outer-boundary
        // node list matches the parent's one-to-one.
        debug_assert_eq!(
            background.mesh().outer_nodes.len(),
            obstacle.mesh().outer_nodes.len()
        );
        let has_interior = mesh.tri_tags.iter().any(|t| matches!(t, TriTag::Obstacle(_)));
        let interior = if has_interior {
            let (sub, parent) = mesh.submesh(|t| matches!(t, TriTag::Obstacle(_)));
            let forms = assemble(&Arc::new(sub), Region::Full, ImpedanceSpec::none(), k)?;
            Some((forms, parent))
        } else {
            None
        };
        Ok(DtnContext {
            background,
            obstacle,
            interior,
            lambda,
            k,
        })
    }

    pub fn background(&self) -> &HelmholtzSystem {
        &self.background
    }

    pub fn obstacle(&self) -> &HelmholtzSystem {
        &self.obstacle
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn lambda(&self) -> &ImpedanceSpec {
        &self.lambda
    }

    /// Parent mesh the boundary data is indexed against.
    pub fn mesh(&self) -> &Arc<TriMesh> {
        self.background.mesh()
    }

    /// `⟨Λ_0 f, h⟩` with the default zero extension of `h`.
    pub fn pair_background(&self, f: &BoundaryData, h: &BoundaryData) -> Result<Complex64> {
        let v = self.background.solve_dirichlet(&f.values)?;
        Ok(pair_with_solution(&self.background, &v, h))
    }

    /// `⟨Λ_D f, h⟩` with the default zero extension of `h`.
    pub fn pair_obstacle(&self, f: &BoundaryData, h: &BoundaryData) -> Result<Complex64> {
        let u = self.obstacle.solve_dirichlet(&f.values)?;
        Ok(pair_with_solution(&self.obstacle, &u, h))
    }

    /// `⟨Λ_D f, h⟩` with a caller-supplied extension of `h` (full nodal
    /// vector on the obstacle system's mesh). Exposes the
    /// extension-independence of the pairing for testing.
    pub fn pair_obstacle_with_extension(
        &self,
        f: &BoundaryData,
        extension: &[Complex64],
    ) -> Result<Complex64> {
        if extension.len() != self.obstacle.mesh().n_nodes() {
            return Err(Error::Config(format!(
                "extension has {} values but the obstacle mesh has {} nodes",
                extension.len(),
                self.obstacle.mesh().n_nodes()
            )));
        }
        let u = self.obstacle.solve_dirichlet(&f.values)?;
        let ku = self.obstacle.apply_operator(&u.values);
        Ok(extension
            .iter()
            .zip(ku.iter())
            .map(|(e, k)| e * k)
            .sum())
    }

    /// The gap `⟨(Λ_0−Λ_D)f, f̄⟩` and its energy-identity parts, from one
    /// background solve and one obstacle solve.
    pub fn gap(&self, f: &BoundaryData) -> Result<DtnGap> {
        let v = self.background.solve_dirichlet(&f.values)?;
        let u = self.obstacle.solve_dirichlet(&f.values)?;
        self.gap_from_solutions(&u, &v)
    }

    /// Gap identity check: pairing difference (lhs) against the four-part
    /// energy expression (rhs), both from the same two solves.
    pub fn verify_identity(&self, f: &BoundaryData) -> Result<IdentityReport> {
        let gap = self.gap(f)?;
        let lhs = gap.value;
        let rhs = gap.parts_sum();
        let scale = lhs.norm().max(rhs.norm());
        let rel_err = if scale > 0.0 {
            (lhs - rhs).norm() / scale
        } else {
            0.0
        };
        Ok(IdentityReport {
            lhs,
            rhs,
            parts: gap.parts,
            rel_err,
        })
    }

    /// Build the gap from existing solutions (`u` on the obstacle system's
    /// mesh, `v` on the background mesh). Used by sweeps that already hold
    /// the solves.
    pub fn gap_from_solutions(&self, u: &FeFunction, v: &FeFunction) -> Result<DtnGap> {
        // value = ⟨Λ_0 f, f̄⟩ − ⟨Λ_D f, f̄⟩ with the conjugate solutions as
        // the extensions of f̄ (any extension gives the same value up to the
        // solver residual; these make the identity sharpest).
        let conj_v: Vec<Complex64> = v.values.iter().map(|z| z.conj()).collect();
        let conj_u: Vec<Complex64> = u.values.iter().map(|z| z.conj()).collect();
        let pair0 = sesquilinear_terms(&self.background.forms().system_terms(), &conj_v, &v.values);
        let pair_d = sesquilinear_terms(&self.obstacle.forms().system_terms(), &conj_u, &u.values);
        let value = pair0 - pair_d;

        // Parts of the energy identity.
        let sub = self.obstacle.mesh();
        let v_ext = match self.obstacle.parent_of() {
            Some(parent) => v.restricted(Arc::clone(sub), parent)?,
            None => v.clone(),
        };
        let w = u.sub(&v_ext)?;

        let k2 = self.k * self.k;
        let e_w = energy(sub, &w.values, |_| true, |_| false);
        let t1 = Complex64::new(e_w.dirichlet - k2 * e_w.mass, 0.0);

        let t2 = match &self.interior {
            Some((forms, parent)) => {
                let v_int = v.restricted(Arc::clone(&forms.mesh), parent)?;
                let e_v = energy(&forms.mesh, &v_int.values, |_| true, |_| false);
                Complex64::new(e_v.dirichlet - k2 * e_v.mass, 0.0)
            }
            None => Complex64::ZERO,
        };

        let mut t3 = 0.0;
        let mut t4 = 0.0;
        let conj_w: Vec<Complex64> = w.values.iter().map(|z| z.conj()).collect();
        let conj_vx: Vec<Complex64> = v_ext.values.iter().map(|z| z.conj()).collect();
        for (tag, b) in &self.obstacle.forms().boundary_unit {
            let j = match tag {
                EdgeTag::Interface(j) => *j,
                EdgeTag::Outer => continue,
            };
            let lam = self.lambda.lambda_of(j)?;
            let vv = b.bilinear_complex(&conj_vx, &v_ext.values).re;
            let ww = b.bilinear_complex(&conj_w, &w.values).re;
            let wv = b.bilinear_complex(&conj_vx, &w.values);
            let uu = b.bilinear_complex(&conj_u, &u.values).re;
            t3 += lam.re * (vv - ww) - 2.0 * lam.im * wv.im;
            t4 += lam.im * uu;
        }

        Ok(DtnGap {
            value,
            parts: [t1, t2, Complex64::new(t3, 0.0), Complex64::new(0.0, t4)],
        })
    }
}

/// Zero-extension pairing `⟨Λ f, h⟩ = Σ_r h_r (K u_f)_{outer node r}`.
fn pair_with_solution(system: &HelmholtzSystem, u: &FeFunction, h: &BoundaryData) -> Complex64 {
    let ku = system.apply_operator(&u.values);
    system
        .mesh()
        .outer_nodes
        .iter()
        .zip(h.values.iter())
        .map(|(&node, hv)| hv * ku[node])
        .sum()
}

/// `Σ_t c_t · xᵀ A_t y` over the term list of a system operator.
fn sesquilinear_terms(
    terms: &[(Complex64, &Csr)],
    x: &[Complex64],
    y: &[Complex64],
) -> Complex64 {
    terms
        .iter()
        .map(|(c, a)| c * a.bilinear_complex(x, y))
        .sum()
}

// ---------------------------------------------------------------------------
// One-shot operations
// ---------------------------------------------------------------------------

/// One-shot DtN pairing: `Region::Full` pairs the background map `Λ_0`,
/// `Region::Exterior` the obstacle map `Λ_D`.
pub fn pair_dtn(
    mesh: &Arc<TriMesh>,
    region: Region,
    lambda: ImpedanceSpec,
    k: f64,
    f: &BoundaryData,
    h: &BoundaryData,
) -> Result<Complex64> {
    match region {
        Region::Full => {
            let system = HelmholtzSystem::background(mesh, k, "background pairing")?;
            let v = system.solve_dirichlet(&f.values)?;
            Ok(pair_with_solution(&system, &v, h))
        }
        Region::Exterior => {
            let system = HelmholtzSystem::obstacle(mesh, lambda, k, "obstacle pairing")?;
            let u = system.solve_dirichlet(&f.values)?;
            Ok(pair_with_solution(&system, &u, h))
        }
    }
}

/// One-shot gap evaluation (builds a context per call; sweeps should build
/// a [`DtnContext`] once instead).
pub fn dtn_gap(
    mesh: &Arc<TriMesh>,
    lambda: ImpedanceSpec,
    k: f64,
    f: &BoundaryData,
) -> Result<DtnGap> {
    DtnContext::new(mesh, lambda, k)?.gap(f)
}

/// One-shot gap identity check.
pub fn verify_gap_identity(
    mesh: &Arc<TriMesh>,
    lambda: ImpedanceSpec,
    k: f64,
    f: &BoundaryData,
) -> Result<IdentityReport> {
    DtnContext::new(mesh, lambda, k)?.verify_identity(f)
}

// ---------------------------------------------------------------------------
// Dense DtN matrices
// ---------------------------------------------------------------------------

/// A dense DtN matrix in the nodal boundary basis: entry `(r, c)` is
/// `⟨Λ e_c, e_r⟩` for indicator data at outer-boundary nodes `c`, `r`
/// (ordered like `mesh.outer_nodes`). Row-major storage.
#[derive(Debug, Clone)]
pub struct DenseDtn {
    pub n: usize,
    pub entries: Vec<Complex64>,
}

impl DenseDtn {
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.entries[r * self.n + c]
    }

    /// `h ↦ Σ_rc h_r D_rc f_c` — the pairing reconstructed by bilinearity.
    pub fn pair(&self, f: &BoundaryData, h: &BoundaryData) -> Complex64 {
        let mut acc = Complex64::ZERO;
        for r in 0..self.n {
            let mut row = Complex64::ZERO;
            for c in 0..self.n {
                row += self.get(r, c) * f.values[c];
            }
            acc += h.values[r] * row;
        }
        acc
    }

    /// CSV export: one row per matrix row, real and imaginary parts
    /// interleaved (`re₀,im₀,re₁,im₁,…`), full precision, no header.
    pub fn write_csv<W: IoWrite>(&self, out: &mut W) -> std::io::Result<()> {
        for r in 0..self.n {
            let mut line = String::with_capacity(self.n * 48);
            for c in 0..self.n {
                if c > 0 {
                    line.push(',');
                }
                let z = self.get(r, c);
                line.push_str(&format!("{:.17e},{:.17e}", z.re, z.im));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Assemble the dense DtN matrix of one factored system, column by column
/// (one solve per outer-boundary node), in parallel.
pub fn dense_dtn(system: &HelmholtzSystem) -> Result<DenseDtn> {
    let mesh = system.mesh();
    let n = mesh.outer_nodes.len();
    let columns: Vec<Result<Vec<Complex64>>> = (0..n)
        .into_par_iter()
        .map(|c| {
            let mut f = vec![Complex64::ZERO; n];
            f[c] = Complex64::new(1.0, 0.0);
            let u = system.solve_dirichlet(&f)?;
            let ku = system.apply_operator(&u.values);
            Ok(mesh.outer_nodes.iter().map(|&node| ku[node]).collect())
        })
        .collect();
    let mut entries = vec![Complex64::ZERO; n * n];
    for (c, col) in columns.into_iter().enumerate() {
        let col = col?;
        for r in 0..n {
            entries[r * n + c] = col[r];
        }
    }
    Ok(DenseDtn { n, entries })
}
