use thiserror::Error;

pub type Result<T, E = RhError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RhError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("metric is not positive definite at node {node} (smallest eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { node: usize, eigenvalue: f64 },

    #[error("map leaves its target at node {node} (deviation {deviation:e})")]
    OffTarget { node: usize, deviation: f64 },

    #[error("field shape mismatch: {0}")]
    Shape(String),

    #[error("no closed form for {0}")]
    NoClosedForm(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("step rejected at t = {t}: {reason}; retry with dt = {suggested_dt:e}")]
    StepRejected {
        t: f64,
        suggested_dt: f64,
        reason: String,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
