use thiserror::Error;

use crate::continuation::ContinuationFailure;
use crate::solver::SolveFailure;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("density {m} at node {node} is below the admissible floor {floor}")]
    Inadmissible { node: usize, m: f64, floor: f64 },

    #[error("Hamiltonian is +inf at node {node} (density {m})")]
    InfiniteHamiltonian { node: usize, m: f64 },

    #[error("inequality {inequality} does not apply to the {family} family")]
    NotApplicable {
        inequality: &'static str,
        family: &'static str,
    },

    #[error("envelope minimizer did not converge after {iterations} iterations (last step {last_step:e})")]
    EnvelopeNotConverged {
        iterations: usize,
        last_step: f64,
        last_q: crate::grid::Vect,
    },

    #[error("extragradient solver stopped after {} iterations with natural residual {:e}", .0.stats.iterations, .0.best_residual)]
    SolverFailure(Box<SolveFailure>),

    #[error("continuation aborted at stage {} of {}: {}", .0.stage, .0.stages, .0.reason)]
    ContinuationAborted(Box<ContinuationFailure>),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;

pub(crate) fn invalid(msg: impl Into<String>) -> MfgError {
    MfgError::InvalidParameter(msg.into())
}
