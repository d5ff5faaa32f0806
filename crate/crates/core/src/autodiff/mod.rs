//! Dense `f64` tensors with a recording tape for reverse-mode gradients,
//! a named parameter store, and SGD with momentum and cosine decay.
//!
//! Broadcasting is limited to a one-element right-hand operand in the
//! elementwise ops; everything else must match exactly or go through an
//! explicit op (`add_bias`, `scale_rows`, `repeat_last`, `gather_rows`).

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, Coordinates, GradCheckReport};
pub use optim::{sgd_step, OptimizerState, SgdConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{backward, Branches, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Slope used by every leaky-ReLU activation in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {shape:?} has a zero dimension")]
    ZeroDimension { shape: Vec<usize> },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: empty reduction")]
    EmptyReduction { op: &'static str },
    #[error("{op}: index {index} out of range for length {len}")]
    InvalidIndex {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("softmax: slice {slice} has no unmasked entry")]
    FullyMasked { slice: usize },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("dropout rate {rate} outside [0, 1)")]
    InvalidRate { rate: f64 },
    #[error("duplicate parameter name {name:?}")]
    DuplicateParam { name: String },
    #[error("{op}: replayed branch log does not match this computation")]
    Replay { op: &'static str },
}
