//! Actor-critic caption generation on synthetic scenes.
//!
//! A policy LSTM proposes next-word actions over a closed vocabulary, a value
//! network scores partial captions, and a learned visual-semantic embedding
//! provides the terminal reward that drives joint policy-gradient training.
//! Inference mixes likelihood with value estimates inside beam search.
//!
//! Everything is plain `f64` with hand-derived backward passes, verified
//! against central finite differences, so training runs are reproducible
//! bit-for-bit from a seed on one CPU core.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod policy;
pub mod training;
pub mod value;
pub mod reward;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
