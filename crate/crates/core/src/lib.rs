//! Contrastive sentence-representation learning at desk scale.
//!
//! The crate provides a tape-based reverse-mode autodiff engine, a small
//! dropout-augmented sentence encoder, the joint contrast + reconstruction
//! objective, an Adam training loop with dev-set checkpointing, and the
//! evaluation suite (Spearman STS, linear probe, alignment/uniformity).

pub mod encoder;
pub mod error;
pub mod eval;
pub mod fd;
pub mod objectives;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
