//! A small feed-forward network with a single sigmoid output, trained by Adam.
//!
//! Hidden layers use ReLU. The first hidden layer has `U` units and each
//! following one half of its predecessor, never fewer than 32. All math is
//! double precision.

mod adam;
mod checkpoint;
mod config;
mod model;
mod train;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{layer_sizes, LossKind, MlpConfig, MIN_UNITS};
pub use model::{loss, Dense, Gradients, MlpModel, PROB_CLAMP};
pub use train::{train, EpochLoss};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{name} = {value} outside [{min}, {max}]")]
    Range { name: &'static str, value: String, min: String, max: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
