//! Masked-language-model pretraining with position masking.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autograd`]: dense tensors and a tape-based reverse-mode
//!   differentiator, including dropout with a selectable backward rule.
//! * [`model`]: a BERT-style encoder with a masked-token head and a
//!   masked-position head operating on packed mask slots.
//! * [`masking`]: corpus ingestion, vocabulary, example packing and the two
//!   masking strategies (token ids and position ids).
//! * [`training`]: two-phase SGD pretraining, metrics and checkpoints.
//! * [`finetune`]: a synthetic span-extraction task used to compare dropout
//!   gradient modes.

pub mod autograd;
pub mod error;
pub mod finetune;
pub mod masking;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{CheckpointError, Error, Result};
pub use tensor::{Real, Tensor};
