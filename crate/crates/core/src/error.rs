//! Crate-wide error type. Variants carry enough structure that callers can
//! tell a shape bug from a numerically degenerate run.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value produced{}", detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        detail: Option<String>,
    },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("{context}: invalid argument: {message}")]
    InvalidArgument {
        context: &'static str,
        message: String,
    },

    #[error("degenerate weights: effective sample size {ess:.3} < 2")]
    DegenerateWeights { ess: f64 },

    #[error("AIS aborted at iteration {iteration}: {reason}")]
    AisAborted {
        iteration: usize,
        reason: String,
        trace: Vec<crate::algos::AisIterationTrace>,
    },

    #[error("ODE state non-finite at t = {time:.6}")]
    OdeBlowUp { time: f64 },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
