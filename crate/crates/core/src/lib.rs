//! Counterfactual interaction imputation for individual user unfairness in
//! graph collaborative filtering.
//!
//! Stage one audits probable under-served users one at a time: each gets a
//! handful of imputed interactions, a copy of the trained model is
//! fine-tuned on the edited graph, and the change in training-data ranking
//! quality decides whether the user is kept. Stage two commits the kept
//! users' imputations and retrains from scratch.

pub mod counterfactual;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod imputer;
pub mod metrics;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
