//! Label-noise laboratory: transition matrices, accuracy bounds, dataset
//! corruption and robust training with a small trusted subset.

pub mod bounds;
pub mod data;
pub mod error;
pub mod experiment;
pub mod expertnet;
pub mod losses;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
