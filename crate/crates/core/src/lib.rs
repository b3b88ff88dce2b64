//! Score-to-audio synthesis.
//!
//! Symbolic scores are turned into pianorolls, a convolutional network maps them
//! to log-magnitude spectrograms, and Griffin-Lim phase retrieval renders audio.

pub mod container;
pub mod data;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod score;
pub mod tensor;
pub mod training;

#[cfg(feature = "testing")]
pub mod testing;

pub use error::{Error, Result};
pub use tensor::{Graph, NodeId, ParamId, ParamStore, Parameter, Scalar, Tensor};
