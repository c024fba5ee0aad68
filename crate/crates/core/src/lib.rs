//! Joint modeling of ICU mortality risk and future-intervention policy.
//!
//! The crate covers the full pipeline: a synthetic cohort generator with
//! exact label probabilities, label derivation over the prediction horizon,
//! sparse hourly feature encoding, a multitask recurrent classifier with
//! hand-written backpropagation through time, logistic severity-score
//! baselines, evaluation metrics, and cluster/embedding analytics over the
//! predicted intervention vectors.

pub mod analytics;
pub mod baselines;
pub mod codes;
pub mod cohort_sim;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod labeling;
pub mod math;
pub mod model;
pub mod record;
pub mod tasks;

pub use error::{Error, Result};
