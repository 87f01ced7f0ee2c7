//! Error types shared across the crate.

use nalgebra::DVector;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by model construction, estimation, planning and IO.
#[derive(Debug, Error)]
pub enum Error {
    /// A stage, state or action index is outside the model.
    #[error("invalid index: stage {h}, state {s}, action {a}")]
    InvalidIndex { h: usize, s: usize, a: usize },

    /// An input vector or scalar is NaN or infinite.
    #[error("non-finite input: {what}")]
    NonFinite { what: &'static str },

    /// A model failed structural validation.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A generator or experiment configuration is inconsistent.
    #[error("bad configuration: {0}")]
    Config(String),

    /// A policy has no action for a state that was visited.
    #[error("policy undefined at stage {h}, state {s}")]
    PolicyUndefined { h: usize, s: usize },

    /// An iterative solver hit its iteration cap before reaching tolerance.
    /// Carries the best iterate found so callers can still inspect it.
    #[error("solver stopped after {iters} iterations with gradient norm {grad_norm:e}")]
    Convergence {
        iters: usize,
        grad_norm: f64,
        best: DVector<f64>,
    },

    /// A matrix expected to be positive definite failed to factor.
    #[error("matrix not positive definite in {context}")]
    NotPositiveDefinite { context: &'static str },

    /// A numerical routine reached a state its contract rules out.
    #[error("internal error: {0}")]
    Internal(&'static str),

    /// An estimator failure annotated with where in a run it happened.
    #[error("estimator failed at episode {episode}, stage {stage}: {source}")]
    Estimator {
        episode: usize,
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
