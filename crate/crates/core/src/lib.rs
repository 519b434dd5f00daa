//! Temporally consistent hybrid voxel/implicit reconstruction of deforming
//! bodies, with a synthetic data generator that supplies exact ground truth.

#[cfg(feature = "cli")]
pub mod cli;
pub mod diffmath;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod kv;
pub mod losses;
pub mod pipeline;
mod par;
pub mod rng;
pub mod sampling;
pub mod synthgen;

pub use error::{Error, Result};
