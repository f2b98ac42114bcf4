//! Calibrated prediction intervals for multivariate time-series forecasters.
//!
//! The crate wraps a forecaster that emits (lower, point, upper) heads and
//! adjusts its intervals with a per-(node, horizon) calibration table built
//! on held-out data, next to the usual single-adjustment conformal step and a
//! handful of reference interval methods.

pub mod baselines;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod forecaster;
pub mod matrix;
pub mod metrics;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
pub use matrix::Matrix;
