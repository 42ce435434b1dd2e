//! Policy and value networks over placement masks, and PPO training.
//!
//! The policy fuses a local per-cell view of the position and wire masks
//! with a global encoder-decoder over the wire and view masks, then applies
//! a softmax restricted to feasible cells. The value head reads the global
//! embedding plus a learned per-step embedding.

pub mod net;
pub mod ppo;
pub mod train;

pub use net::{Features, ForwardPass, Model, NetConfig};
pub use ppo::{ppo_update, PpoConfig, Transition};
pub use train::{train, EpochStats, NeuralPolicy, TrainConfig, TrainOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error(transparent)]
    Nn(#[from] nnkit::NnError),
    #[error(transparent)]
    Env(#[from] macroplace::EnvError),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("step {t} outside the position table of {steps} entries")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
