//! Spectral analysis of fine-tuned weight checkpoints.
//!
//! The crate detects *intruder dimensions* — high-ranking singular vectors of
//! a fine-tuned weight matrix that are dissimilar from every singular vector
//! of the base weights — quantifies them across a model, intervenes on them
//! by scaling singular directions, and ships a deterministic toy training
//! lab (full-update and low-rank-adapter gradient descent on synthetic
//! classification tasks) that reproduces the emergence, forgetting, and
//! continual-learning behavior of those dimensions at desk scale.

pub mod checkpoint;
pub mod error;
pub mod intervention;
pub mod lab;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
