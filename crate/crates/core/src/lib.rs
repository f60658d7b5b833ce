//! Hand-motion tokenization toolkit: rotation utilities, a MANO-style hand
//! model, grouped residual quantization of motion windows, camera-space
//! alignment and augmentation, motion-block token streams, evaluation
//! metrics and dataset mechanics.

pub mod alignment;
pub mod codec;
pub mod error;
pub mod mano;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod rotations;
pub mod synthetic;
pub mod tokenizer;

pub use error::{Error, Result};
