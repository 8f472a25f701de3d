//! Training pipeline: the lattice language-model objective, perplexity
//! evaluation, checkpoints, two-stage LM pre-training, frozen-LM classifier
//! training, and classifier evaluation.

mod checkpoint;
mod objective;
mod perplexity;
mod train;

pub use checkpoint::{Checkpoint, Stage, CHECKPOINT_MAGIC};
pub use objective::{ground_truth_next_distribution, lattice_lm_loss, LatticeLmLoss};
pub use perplexity::{lattice_perplexity, sequential_perplexity, PerplexityReport};
pub use train::{
    classifier_config_for, evaluate, pretrain_stage1, pretrain_stage2, train_classifier,
    EpochStats, Evaluation, LabeledExample, TrainConfig, TrainLog, TrainOutcome,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::lattice::{LatticeError, NodeId};
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training set is empty")]
    EmptyCorpus,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error("node {node} has no outgoing transitions to predict")]
    NoOutgoing { node: NodeId },
    #[error("non-finite loss at epoch {epoch} on {item}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        item: String,
        detail: String,
    },
    #[error("checkpoint stage is {got}, expected {expected}")]
    StageMismatch {
        expected: &'static str,
        got: &'static str,
    },
    #[error("frozen parameter {name} changed during classifier training")]
    FrozenParamChanged { name: String },
    #[error("bad checkpoint: {message}")]
    BadCheckpoint { message: String },
    #[error("label {label:?} is not in the label inventory")]
    UnknownLabel { label: String },
    #[error("classifier config expects {expected} labels, data has {got}")]
    LabelCountMismatch { expected: usize, got: usize },
    #[error("bad training config: {message}")]
    BadTrainConfig { message: String },
}
