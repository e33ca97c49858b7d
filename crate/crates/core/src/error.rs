use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PelError {
    #[error("cannot open {path}: {reason}")]
    Io { path: String, reason: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("degenerate design: one arm empty")]
    DegenerateDesign,

    #[error("singular design matrix in {0}")]
    SingularDesign(String),

    #[error("logistic fit did not converge: {0}")]
    NonConvergence(String),

    #[error("propensity score {value} at unit {index} is outside the open interval (0, 1)")]
    WeightDomain { index: usize, value: f64 },

    #[error("singular matrix {name} (condition number {condition:.3e})")]
    SingularMatrix { name: String, condition: f64 },

    #[error("constraints are infeasible: {0}")]
    Infeasible(String),

    #[error(
        "Lagrange multiplier solver failed after {iterations} iterations (residual {residual:.3e})"
    )]
    SolverFailed { iterations: usize, residual: f64 },

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("calibration error: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, PelError>;
