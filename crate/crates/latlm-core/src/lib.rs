//! latlm-core: lattice language models at desk scale.
//!
//! The crate is organized around five pieces:
//!
//! - [`lattice`]: the weighted-DAG data model and its structural algorithms
//!   (validation, topological order, reversal, path enumeration).
//! - [`numerics`]: a dense f64 tensor with tape-based reverse-mode
//!   differentiation, loss primitives, a finite-difference gradient checker,
//!   and the Adam optimizer.
//! - [`model`]: LSTM cells, the sequential bidirectional LM, the LatticeLSTM
//!   with weighted node pooling, scalar layer mixing, and the classifier head.
//! - [`pipeline`]: the lattice LM objective, perplexity, two-stage
//!   pre-training, frozen-LM classifier training, and checkpoints.
//! - [`data`]: vocabulary construction, the lattice text format, and the
//!   seeded synthetic confusion-lattice generator.

pub mod data;
pub mod lattice;
pub mod model;
pub mod numerics;
pub mod pipeline;

/// Reserved token mapped from out-of-vocabulary words.
pub const UNK_TOKEN: &str = "<unk>";
/// Reserved sentence-start sentinel used by LM lattices.
pub const BOS_TOKEN: &str = "<s>";
/// Reserved sentence-end sentinel used by LM lattices.
pub const EOS_TOKEN: &str = "</s>";

pub use lattice::{Lattice, LatticeError, NodeId, Transition};
pub use numerics::{ParamSet, Tensor};
