use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("range error: {what} (admissible interval ({lo:e}, {hi:e}), got {got:e})")]
    Range { what: String, lo: f64, hi: f64, got: f64 },
    #[error("no convergence in {what} (last residual {residual:e})")]
    Convergence { what: String, residual: f64 },
    /// A fixed-point iteration that ran out of iterations; `trajectory` holds the tracked
    /// order parameter at every step.
    #[error("fixed point not reached in {what} after {} steps (last change {change:e})", trajectory.len())]
    NoFixedPoint { what: String, change: f64, trajectory: Vec<f64> },
    #[error("quadrature accuracy not reached: {0}")]
    Accuracy(String),
    #[error("consistency check failed: {0}")]
    Consistency(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
