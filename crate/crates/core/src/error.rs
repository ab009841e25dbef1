use thiserror::Error;

/// Errors produced anywhere in the simulation and inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter outside the closed domain: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("ellipticity violated at x = {x:?}: det A = {det:e}")]
    Ellipticity { x: Vec<f64>, det: f64 },

    #[error("solution diverged at step {step} (|X| = {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("gamma-function pole: {0}")]
    Pole(String),

    #[error("likelihood evaluation failed: {0}")]
    Evaluation(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("standardization failed: {0}")]
    Standardization(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("study invalid: {0}")]
    InvalidStudy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
