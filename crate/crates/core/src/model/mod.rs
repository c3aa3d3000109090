//! The tracking network: architecture description, parameters with
//! checkpointing, and the differentiable forward pass.

mod arch;
mod network;
mod params;

pub use arch::{prune_channels, ArchConfig, ArchitectureSpec, BackboneLayer, LayerKind, LayerSpec, Task, Width};
pub use network::{HeadOutputs, Network};
pub use params::{
    build_model, load_checkpoint, save_checkpoint, ModelParams, ParamsMeta, PruneConfig, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::autodiff::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint version error: {0}")]
    Version(String),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint was written for a different architecture")]
    SpecHash,
}
