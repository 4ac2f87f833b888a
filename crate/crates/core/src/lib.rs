//! Cross-feature learning for white-box logistic regression.
//!
//! The pipeline trains a small embedding network, measures how much each
//! feature's gradient-based local interpretation drifts from its global
//! average (the interpretation inconsistency), turns the most inconsistent
//! features into a compact set of candidate cross fields, and finally trains
//! and greedily prunes a sparse logistic regression over original and cross
//! features.
//!
//! Stage order:
//!
//! 1. [`data`]: CSV ingestion, schema, vocabulary, splits.
//! 2. [`discretize`]: equal-frequency binning of numerical fields.
//! 3. [`dnn`]: embedding MLP with per-field embedding gradients.
//! 4. [`inconsistency`]: the inconsistency matrix and its quantile filter.
//! 5. [`candidates`]: co-occurrence counting of feasible fields.
//! 6. [`cross_lr`]: two-phase sparse logistic regression.
//! 7. [`search`]: greedy (or beam) selection by validation AUC.
//!
//! [`pipeline`] wires the stages together through a work directory, and
//! [`synth`] generates synthetic fixtures.

pub mod candidates;
pub mod config;
pub mod cross_lr;
pub mod data;
pub mod discretize;
pub mod dnn;
mod error;
pub mod export;
pub mod inconsistency;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod search;
pub mod synth;

pub use error::{Error, Result};

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
