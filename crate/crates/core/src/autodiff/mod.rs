//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, GradCheck};
pub use optim::{clip_global_norm, Adam, AdamState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: extents must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for extent {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("variable is not recorded on this tape")]
    NotOnTape,
    #[error("optimizer state mismatch: {0}")]
    StateMismatch(String),
}
