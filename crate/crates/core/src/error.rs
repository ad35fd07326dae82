use thiserror::Error;

/// Errors shared by every layer of the toolkit.
#[derive(Debug, Error)]
pub enum BifError {
    #[error("operand contains NaN or infinite entries")]
    NonFinite,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator is numerically singular (sigma_min = {sigma_min:e})")]
    SingularOperator { sigma_min: f64 },

    #[error("problem evaluation failed: {0}")]
    EvalFailure(String),

    #[error("anchor is degenerate: {0}")]
    DegenerateAnchor(String),

    #[error("point is not a solution: residual {residual:e} exceeds tolerance {tol:e}")]
    SolutionResidualTooLarge { residual: f64, tol: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("iterate diverged outside trust region (step norm {step_norm:e})")]
    DivergedOutsideTrustRegion { step_norm: f64 },

    #[error("continuation stalled: corrector failed {failures} consecutive times")]
    ContinuationStall { failures: usize },

    #[error("certificate condition violated: {0}")]
    ConditionViolated(String),

    #[error("projection pair inadmissible: {0}")]
    InadmissibleProjection(String),

    #[error("unknown problem name: {0}")]
    UnknownName(String),

    #[error("bad problem parameters: {0}")]
    BadParams(String),

    #[error("i/o failure: {0}")]
    IoFailure(String),
}

pub type Result<T> = std::result::Result<T, BifError>;
