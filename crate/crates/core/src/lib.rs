//! Monocular food portion estimation: point clouds lifted from a depth-augmented
//! view, fused with RGB features, regressed to volume and energy.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod formats;
pub mod geometry;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
