use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("symmetric eigensolver did not converge within {0} iterations")]
    EigenNoConvergence(usize),

    #[error("solution is not unique: smallest eigenvalue of Q is {lambda_min:e}")]
    NonUnique { lambda_min: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("divergence detected at iteration {k}: {reason}")]
    Divergence { k: usize, reason: String },

    #[error("non-finite block at node {node} (event {k})")]
    NonFinite { node: usize, k: usize },

    #[error("operation requires quadratic losses: {0}")]
    NotQuadratic(String),

    #[error("graph is disconnected: {0}")]
    Disconnected(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
