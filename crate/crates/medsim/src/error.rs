//! Error types.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("model specification error: {0}")]
    Spec(String),
    #[error("did not converge after {iterations} iterations (gradient max-norm {gradient_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        /// Coefficients at the last iterate, for diagnosis.
        last_coefficients: Vec<f64>,
    },
    #[error("quasi-complete separation detected: fitted probabilities within 1e-10 of 0/1 with diverging coefficients (max |coef| {max_coef:.3e})")]
    Separation { max_coef: f64 },
    #[error("singular system while solving the Newton step: {0}")]
    Singular(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bundle error: {0}")]
    Bundle(String),
    #[error("sampling failed at row {row}, replicate {replicate}: {source}")]
    Sampling {
        row: usize,
        replicate: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("{failed} of {total} bootstrap replicates failed model refitting (>{limit_pct}% allowed)")]
    BootstrapFailures { failed: usize, total: usize, limit_pct: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow configuration error: {0}")]
    Config(String),
    #[error("training diverged (non-finite loss) even after learning-rate halvings: {0}")]
    Diverged(String),
    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("inversion bracket not found within {doublings} doublings (|z| = {z:.3e}); the model is pathological")]
    BracketNotFound { doublings: u32, z: f64 },
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
