//! Fairness-aware GAN training and auditing.

pub mod dataset;
pub mod error;
pub mod explore;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod training;

pub use error::{FganError, Result};
