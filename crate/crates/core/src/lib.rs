//! Bias-aware guidance toolkit: shared domain types, an analytic Gaussian-mixture
//! diffusion simulator, attribute resampling and the fairness/diversity
//! statistics used to evaluate generated batches.
//!
//! Data-parallel loops (reverse-SDE sampling, bootstrap resampling) run on
//! rayon when the `parallel` feature is enabled, and fall back to plain
//! iterators otherwise. Both paths consume identical per-index random
//! streams, so results do not depend on the execution mode.

pub mod error;
pub mod eval;
pub mod manifest;
pub mod par;
pub mod resample;
pub mod rng;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use par::Execution;
pub use types::{
    normalize_weights, validate_catalog, AttributeAssignment, AttributeCatalog,
    AttributeDistribution, ProbabilityVector, PromptText, Violation,
};

/// Tolerance used when checking that probabilities sum to one.
pub const PROB_TOLERANCE: f64 = 1e-9;
