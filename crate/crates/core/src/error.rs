use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid convex set: {0}")]
    InvalidSet(String),

    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),

    #[error("unsupported potential: {0}")]
    UnsupportedPotential(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("QP did not converge after {iterations} iterations (projected-gradient residual {residual:e})")]
    QpNotConverged { iterations: usize, residual: f64 },

    #[error("JKO inner solver exhausted {iterations} iterations (last step norm {step:e})")]
    JkoNotConverged { iterations: usize, step: f64 },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numerical solver failures, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::QpNotConverged { .. } | Error::JkoNotConverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
