//! Minimal reverse-mode automatic differentiation over dense f64 tensors:
//! the operator set needed by a learned OFDM receiver (elementwise math,
//! dense/conv layers, packed complex matrix algebra with a solve-based
//! backward) plus the Adam optimizer and parameter checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod complex;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, adam_step_with_grads, AdamState};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("no gradient path: loss does not depend on any parameter")]
    NoGradPath,
    #[error("reentrant backward on the same graph without zeroing")]
    ReentrantBackward,
    #[error("singular system in hermitian solve")]
    SingularSystem,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
