//! Numerical laboratory for inverse obstacle scattering in the plane.
//!
//! An impedance obstacle `D` sits inside a bounded domain `Ω`; waves governed
//! by the Helmholtz equation `Δu + k²u = 0` in `Ω ∖ D̄` satisfy a Robin
//! condition `∂u/∂ν + λu = 0` on `∂D` and take prescribed Dirichlet data on
//! `∂Ω`. The crate reconstructs `D` from the Dirichlet-to-Neumann map on `∂Ω`
//! by two independent routes:
//!
//! * the **probe method** — point-source indicator functions probed along
//!   needles, with blowup of the indicator detecting `∂D`;
//! * the **enclosure method** — complex-geometrical-optics data whose
//!   exponentially weighted indicator recovers the support function of `D`.
//!
//! Supporting machinery: a conforming triangular mesher that resolves `∂D` as
//! a tagged internal interface, complex-valued P1 finite elements with a
//! banded direct solver, Dirichlet-to-Neumann pairings and their energy
//! identity, certified Poincaré/trace constants, and energy diagnostics for
//! the inequality chains that underpin the reconstruction guarantees.
//!
//! Everything is deterministic: a given configuration and seed reproduce
//! byte-identical outputs.

// Reference constants are frozen at more digits than f64 carries so the
// literal rounds to the nearest representable value.
#![allow(clippy::excessive_precision)]
// `!(x > 0.0)` is the NaN-rejecting validation idiom; `partial_cmp` reads
// worse for that purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Numerical kernels index parallel arrays; iterator rewrites obscure the
// stencil structure.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod dtn;
pub mod enclosure;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod probe;
pub mod quadrature;
pub mod runner;

pub use error::{Error, Result};
pub use geometry::{Needle, NeedleHit, ObstacleSpec, Point2, Shape};
pub use mesh::{EdgeTag, MeshQuality, TriMesh, TriTag};

/// Crate version, surfaced in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
