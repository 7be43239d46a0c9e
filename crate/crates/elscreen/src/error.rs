//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by screening, simulation and pipeline operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a structural precondition (dimensions, finiteness, ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The empirical-likelihood dual diverged: zero is outside the convex
    /// hull of the estimating rows, so no feasible weight vector exists.
    #[error("zero lies outside the convex hull of the estimating rows")]
    HullViolation,

    /// An iteration broke down numerically (singular Hessian beyond ridge
    /// repair, non-finite intermediate values, stalled line search).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A covariance matrix had an eigenvalue materially below zero.
    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    /// An active predictor index is absent from the supplied ranking.
    #[error("active predictor {index} does not appear in the ranking")]
    MissingActive { index: usize },

    /// A CSV cell could not be parsed as a finite number (1-based coordinates).
    #[error("parse error at row {row}, column {column}: {detail}")]
    Parse {
        row: usize,
        column: usize,
        detail: String,
    },

    /// Two inputs that must agree in shape did not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A per-predictor computation failed; carries the predictor index.
    #[error("predictor {index}: {source}")]
    Predictor {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
