//! Just enough of a neural-network kernel to host small convolutional
//! policy and value networks. Everything is `f64`, single sample, and
//! explicit: each layer has a forward and a backward function, and callers
//! wire them together by hand.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod seq;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, Grads, ParamStore};
pub use seq::{Op, Sequential, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("masked softmax needs at least one unmasked entry")]
    AllMasked,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFinite(String),
    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
