//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Built for small Transformer encoders: a [`Tape`] records every operation
//! eagerly, [`Tape::backward`] walks it once in reverse, and [`AdamW`]
//! applies decoupled-weight-decay updates to a named [`ParamSet`]. Just
//! enough ops are provided for embeddings, multi-head attention, layer norm,
//! GELU MLPs, masked mean pooling, and softmax/log-likelihood losses —
//! nothing more.
//!
//! Supported ranks are 0 (scalar), 1 (vector) and 2 (matrix), row-major.
//! There is no broadcasting beyond the bias-add case `[m,n] + [n]`.

mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, section, CheckpointError};
pub use params::{AdamW, AdamWConfig, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors from tensor construction, tape ops, and backward passes.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("ShapeMismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("NotScalar: backward requires a rank-0 loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("TapeConsumed: backward was already called on this tape")]
    TapeConsumed,
    #[error("DegenerateMask: mean pool over an all-zero mask")]
    DegenerateMask,
    #[error("NonDistributionTarget: target row {row} sums to {sum}, expected 1 within 1e-9")]
    NonDistributionTarget { row: usize, sum: f64 },
    #[error("BadIndex in {op}: index {index} out of range {limit}")]
    BadIndex { op: &'static str, index: usize, limit: usize },
    #[error("EmptyInput in {op}")]
    EmptyInput { op: &'static str },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
