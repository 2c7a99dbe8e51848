//! Dense tensors with reverse-mode differentiation, the Adadelta optimizer,
//! and the binary checkpoint container.

mod adadelta;
mod checkpoint;
mod gemm;
mod params;
mod tape;
mod tensor;

pub use adadelta::{Adadelta, AdadeltaState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{ParamStore, Bound};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
