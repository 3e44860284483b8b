//! Multilevel Monte Carlo gradient compression.

pub mod baselines;
pub mod compressors;
pub mod error;
pub mod experiment;
pub mod message;
pub mod mlmc;
pub mod problems;
pub mod rng;
pub mod simulator;
pub mod vector;
pub mod verify;

pub use error::{Error, Result};
pub use vector::GradientVector;
