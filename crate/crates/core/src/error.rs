use thiserror::Error;

use crate::mesh::MeshId;

/// Errors raised by discretization, solvers and studies.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("mesh mismatch: expected mesh {expected}, found mesh {found}")]
    MeshMismatch { expected: MeshId, found: MeshId },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value {value} at {location}")]
    NonFinite { location: String, value: f64 },

    #[error("singular system: zero pivot in column {column} (condition estimate {condition:e})")]
    Singular { column: usize, condition: f64 },

    #[error("ill-conditioned system: residual {residual:e} exceeds bound {bound:e} (condition estimate {condition:e})")]
    IllConditioned {
        residual: f64,
        bound: f64,
        condition: f64,
    },

    #[error(
        "{solver} did not converge after {iterations} iterations (last residual {residual:e})"
    )]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("hypothesis `{hypothesis}` violated: {detail}")]
    Hypothesis {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("monotone iteration broken at step {iteration}: {detail}")]
    Monotonicity { iteration: usize, detail: String },

    #[error("infeasible point: violation {violation:e} exceeds tolerance {tol:e}")]
    Infeasible { violation: f64, tol: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("mesh file line {line}: {reason}")]
    MeshFile { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
