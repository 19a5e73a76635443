//! Transformer fault prediction from oil-dissolved gas readings.
//!
//! Records become entities in a similarity graph; a gradient-boosted
//! ensemble turns raw readings into crossed leaf-indicator features; a
//! translation-style relation model scores pairs; and a voted failure
//! rate classifies held-out transformers. A few-shot trainer covers the
//! low-data regime, and logistic/ANN baselines anchor comparisons.

pub mod baselines;
pub mod error;
pub mod fewshot;
pub mod gbdt;
pub mod kg;
pub mod optim;
pub mod pipeline;
pub mod records;
pub mod tfr;
pub mod triples;

pub use error::{Error, Result};
