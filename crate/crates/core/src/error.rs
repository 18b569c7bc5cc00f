use thiserror::Error;

/// Errors raised by the residual evaluation, the linear solvers and the
/// receding-horizon driver.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("model callback `{callback}` returned {got} values, expected {expected}")]
    CallbackDimension {
        callback: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("forward recursion diverged at stage {stage}")]
    StateDivergence { stage: usize },
    #[error("backward recursion diverged at stage {stage}")]
    CostateDivergence { stage: usize },
    #[error("finite-difference operator produced a non-finite value")]
    OperatorDivergence,
    #[error("matrix is numerically singular (pivot magnitude {pivot:e})")]
    Singular { pivot: f64 },
    #[error("matrix of dimension {dim} is too large to materialize (limit {limit})")]
    TooLarge { dim: usize, limit: usize },
    #[error("stage block {stage} is near singular (|det| = {det:e})")]
    NearSingularBlock { stage: usize, det: f64 },
    #[error("Schur complement is singular (pivot magnitude {pivot:e})")]
    SingularSchur { pivot: f64 },
    #[error("horizon exhausted: p = {p} is not larger than the system step {dt}")]
    HorizonExhausted { p: f64, dt: f64 },
    #[error(
        "cold start did not converge after {iterations} iterations (residual norm {residual:e})"
    )]
    ColdStart { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, SolverError>;
