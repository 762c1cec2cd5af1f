//! Arithmetic-unit extrapolation benchmark.
//!
//! - [`layers`] / [`model`]: Linear, NAC+, NAC• and NALU layers with analytic gradients
//! - [`dataset`]: the two-subset-sum arithmetic task generator
//! - [`optim`] / [`trainer`]: Adam and single-trial training with periodic evaluation
//! - [`metrics`]: success threshold, solved-at, sparsity error
//! - [`stats`]: Wilson, gamma-profile and scaled-beta-profile intervals
//! - [`harness`]: sweep configuration, result store, aggregation

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod par;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix2D;
