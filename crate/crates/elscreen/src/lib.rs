//! Empirical-likelihood feature screening for multivariate responses.
//!
//! The crate centers on a damped-Newton solver for the adjusted empirical
//! likelihood ratio evaluated at zero ([`el`]), marginal screening utilities
//! built on it ([`screening`]), and a conditional variant that removes the
//! linear effect of known predictors through sliced inverse regression
//! ([`conditional`]). Synthetic designs, evaluation summaries, and a small
//! modeling pipeline ([`simgen`], [`evalkit`], [`pipeline`]) support
//! benchmarking; the `elscreen` binary exposes everything on the command
//! line.

pub mod conditional;
pub mod dataset;
pub mod el;
pub mod error;
pub mod evalkit;
pub mod pipeline;
pub mod screening;
pub mod simgen;
pub mod study;

pub use error::{Error, Result};
