//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong while building meshes, solving fields, or
/// running experiments.
///
/// The variants map onto the CLI exit codes: configuration problems exit 2,
/// geometry violations exit 3, solver failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration rejected before any numerics ran (unknown fields, bad
    /// values, unreadable files).
    #[error("config: {0}")]
    Config(String),

    /// Geometry violates a precondition (obstacle not strictly inside the
    /// domain, overlapping components, needle leaving the domain, ...).
    #[error("geometry: {0}")]
    Geometry(String),

    /// Mesh generation or validation failure with a diagnostic.
    #[error("mesh: {0}")]
    Mesh(String),

    /// Linear algebra failure: singular or unacceptably conditioned system.
    #[error("solver: {context} (condition estimate {cond_estimate:.3e})")]
    Singular {
        /// What was being factorized or solved.
        context: String,
        /// Ratio of largest to smallest pivot magnitude seen during
        /// factorization; a crude but serviceable conditioning proxy.
        cond_estimate: f64,
    },

    /// A solve finished but failed its residual acceptance check.
    #[error("solver: residual {residual:.3e} exceeds tolerance {tol:.3e} in {context}")]
    ResidualCheck {
        context: String,
        residual: f64,
        tol: f64,
    },

    /// An iterative eigenvalue estimate failed to converge within its cap.
    #[error("eigen: {context}: no convergence after {iterations} iterations (last change {last_change:.3e})")]
    EigenNoConvergence {
        context: String,
        iterations: usize,
        last_change: f64,
    },

    /// A least-squares fit degraded past its acceptance threshold.
    #[error("fit: {0}")]
    Fit(String),

    /// Input/output failure while reading or writing artifacts.
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed data in an imported file.
    #[error("parse: {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

impl Error {
    /// Helper for I/O errors tagged with their path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 2,
            Error::Geometry(_) | Error::Mesh(_) => 3,
            Error::Singular { .. }
            | Error::ResidualCheck { .. }
            | Error::EigenNoConvergence { .. }
            | Error::Fit(_) => 4,
            Error::Io { .. } => 1,
        }
    }
}
