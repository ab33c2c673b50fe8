//! Dense `f64` tensors, parameters, and a reverse-mode gradient tape.

mod checkpoint;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{finite_diff_check, DEFAULT_EPSILON};
pub use param::{glorot_uniform, ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Score written into disallowed attention slots before the row softmax.
/// Finite so that max-subtraction never evaluates `-inf - -inf`.
pub const MASK_NEG: f64 = -1e30;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("gradient tape has already been replayed")]
    TapeReplayed,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value encountered: {0}")]
    NonFinite(f64),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
