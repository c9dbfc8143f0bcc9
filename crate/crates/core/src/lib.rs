//! Desk-scale laboratory for hyperfitting: fine-tuning a pre-trained
//! next-token model to near-zero loss on a handful of samples, decoding with
//! an n-gram citation blocker, and measuring the resulting generations.

pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
