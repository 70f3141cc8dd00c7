//! Semi-supervised classification with curriculum pseudo labeling.
//!
//! The crate bundles a small numeric toolkit, feature-space augmentations,
//! synthetic dataset generators, the curriculum threshold state machine,
//! the loss terms of several consistency-regularization algorithms, a
//! training loop and an experiment harness.

pub mod augment;
pub mod cpl;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numkit;
pub mod sslloss;
pub mod trainer;

pub use error::{Error, Result};
