//! Minimal dense-tensor engine: f64 tensors, a tape for reverse-mode
//! differentiation, loss primitives, the Adam optimizer, and a
//! finite-difference gradient checker. Everything runs in 64-bit floats.

mod adam;
mod gradcheck;
mod loss;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use loss::{cross_entropy, kl_divergence, Distribution};
pub use params::{init, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::{log_sum_exp, softmax_slice, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{context}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch { context: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("{context}: non-finite value")]
    NonFinite { context: &'static str },
    #[error("non-finite gradient for parameter {param:?}")]
    NonFiniteGradient { param: String },
    #[error("target distribution sums to {sum}, not 1")]
    TargetNotNormalized { sum: f64 },
    #[error("unknown parameter {name:?}")]
    UnknownParam { name: String },
    #[error("parameter {name:?} already exists")]
    DuplicateParam { name: String },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("probability {prob} outside (0, 1] for vocab id {id}")]
    BadProbability { id: usize, prob: f64 },
}
