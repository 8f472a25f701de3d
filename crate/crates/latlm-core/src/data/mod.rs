//! Corpus ingestion, line-based file formats, and the seeded synthetic
//! confusion-lattice generator that stands in for a speech recognizer.

mod format;
mod generator;
mod vocab;

pub use format::{
    manifest_value, parse_labels, parse_lattices, parse_manifest, read_labels, read_lattices,
    read_manifest, serialize_labels, serialize_lattices, serialize_manifest, write_labels,
    write_lattices, write_manifest,
};
pub use generator::{
    default_templates, generate_confusion_lattice, levenshtein, make_synthetic_task,
    oracle_edit_distance, template_tokens, ConfusionModel, Example, LabelTemplate, SplitSizes,
    SyntheticTask,
};
pub use vocab::{build_vocab, Vocabulary, BOS_ID, EOS_ID, UNK_ID};

use std::path::PathBuf;

use thiserror::Error;

use crate::lattice::LatticeError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("cannot generate a lattice from an empty sentence")]
    EmptySentence,
    #[error("{field} must lie in [0, 1], got {value}")]
    RateOutOfRange { field: &'static str, value: f64 },
    #[error("confusion branching factor must be at least 2, got {got}")]
    BadBranchFactor { got: usize },
    #[error("concentration must be a positive finite number, got {got}")]
    BadConcentration { got: f64 },
    #[error("confusable pool offers {available} usable tokens, need {needed}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("label {label:?} can produce {available} distinct sentences, need {needed}")]
    TemplatePoolTooSmall { label: String, needed: usize, available: usize },
    #[error("label {label:?} has no slots or an empty slot")]
    EmptySlot { label: String },
    #[error("label {label:?} generates more than {limit} sentences")]
    TemplatePoolTooLarge { label: String, limit: usize },
    #[error("need at least two labels, got {got}")]
    TooFewLabels { got: usize },
    #[error("sentence {sentence:?} is produced by both {first:?} and {second:?}")]
    AmbiguousSentence { sentence: String, first: String, second: String },
    #[error("reserved token {token:?} cannot enter the vocabulary")]
    ReservedToken { token: String },
    #[error("duplicate vocabulary token {token:?}")]
    DuplicateToken { token: String },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}
