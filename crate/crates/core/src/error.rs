//! Error and result types shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while loading a case or running the
/// certification pipeline. Parse and validation failures point at bad input;
/// the remaining variants are numerical failures at runtime.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// The case violates a structural invariant (duplicate ids, disconnected
    /// graph, missing device, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Two objects that must agree in size do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A quantity left the region where the model is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Newton iteration on the power-flow equations did not reach the
    /// residual tolerance.
    #[error("power flow did not converge after {iterations} iterations (residual {residual:.3e})")]
    PowerFlowDiverged { iterations: usize, residual: f64 },

    /// A linear solve hit a (numerically) singular matrix.
    #[error("singular matrix in {0}")]
    Singular(String),

    /// The eigenvalue solver did not converge.
    #[error("eigensolver failed: {0}")]
    Eigen(String),

    /// Time-domain integration aborted.
    #[error("integration failed at t = {time:.6}: {message}")]
    Integration { time: f64, message: String },
}

impl Error {
    /// True for errors caused by bad input rather than runtime numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Validation(_))
    }
}
