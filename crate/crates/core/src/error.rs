//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures raised by problem evaluation, integration and the equilibrium oracle.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("infeasible state: {0}")]
    Infeasible(String),

    #[error("singular sensitivity system (condition number {cond:.3e})")]
    Singular { cond: f64 },

    #[error("equilibrium solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("eigendecomposition failed to converge")]
    Eigen,

    #[error("trajectory aborted at step {step}: {source}")]
    TrajectoryAborted {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("topology parse error at line {line}, column {column}: {message}")]
    Topology {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Returns an error naming the first non-finite entry, if any.
pub fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

pub fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}
