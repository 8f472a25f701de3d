use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Lattice language models: data generation, two-stage pre-training,
/// frozen-LM classification, and evaluation.
///
/// Every tunable can also come from a `--config` file of `key=value` rows
/// (flag wins over file, file wins over default), and every run writes a
/// log in that same format, so a log replays as a config. The last stdout
/// line of each subcommand is a single `key=value` metric.
#[derive(Parser)]
#[command(name = "latlm", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the synthetic confusion-lattice classification task
    GenData(GenDataArgs),
    /// Stage 1: train a sequential LM on clean text
    PretrainSeq(PretrainSeqArgs),
    /// Stage 2: continue a stage-1 checkpoint on lattices
    PretrainLattice(PretrainLatticeArgs),
    /// Train a classifier on top of a frozen lattice LM
    TrainClf(TrainClfArgs),
    /// Evaluate a classifier checkpoint on labeled lattices
    Eval(EvalArgs),
    /// Report LM perplexity over a lattice file
    Perplexity(PerplexityArgs),
    /// Check analytic gradients against central differences
    Gradcheck(GradcheckArgs),
    /// Print structural statistics for a lattice file
    InspectLattice(InspectLatticeArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// key=value config file; flags override its rows
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $LATLM_OUT_DIR, else ".")
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Examples per optimizer step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Early-stopping patience, in epochs
    #[arg(long)]
    pub patience: Option<usize>,
    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct DimArgs {
    /// Embedding width
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// LSTM hidden width per direction
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Stacked LSTM layers
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training examples per label
    #[arg(long)]
    pub train_per_label: Option<usize>,
    /// Validation examples per label
    #[arg(long)]
    pub valid_per_label: Option<usize>,
    /// Test examples per label
    #[arg(long)]
    pub test_per_label: Option<usize>,
    /// Fraction of positions replaced by a confusion set
    #[arg(long)]
    pub substitution_rate: Option<f64>,
    /// Alternatives per confusion set
    #[arg(long)]
    pub branches: Option<usize>,
    /// Fraction of confused positions that also gain a skip path
    #[arg(long)]
    pub deletion_rate: Option<f64>,
    /// Dirichlet concentration for confusion weights
    #[arg(long)]
    pub concentration: Option<f64>,
}

#[derive(Args)]
pub struct PretrainSeqArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training text, one sentence per line
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation text, one sentence per line
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Optional lattice file whose edge words join the vocabulary
    #[arg(long)]
    pub lattices: Option<PathBuf>,
    /// Minimum corpus count for a vocabulary entry
    #[arg(long)]
    pub min_count: Option<u64>,
    #[command(flatten)]
    pub dims: DimArgs,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

#[derive(Args)]
pub struct PretrainLatticeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training lattices
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation lattices
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Stage-1 checkpoint to continue from
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

#[derive(Args)]
pub struct TrainClfArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training lattices
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Labels for the training lattices
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    /// Validation lattices
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Labels for the validation lattices
    #[arg(long)]
    pub valid_labels: Option<PathBuf>,
    /// Lattice-LM checkpoint to freeze under the classifier
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Classifier hidden width
    #[arg(long)]
    pub clf_hidden: Option<usize>,
    /// Classifier hidden layers
    #[arg(long)]
    pub clf_layers: Option<usize>,
    /// Dropout on the pooled lattice vector during training
    #[arg(long)]
    pub dropout: Option<f64>,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Lattices to classify
    #[arg(long)]
    pub lattices: Option<PathBuf>,
    /// Gold labels for those lattices
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Classifier checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args)]
pub struct PerplexityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Lattices to score
    #[arg(long)]
    pub lattices: Option<PathBuf>,
    /// LM checkpoint (either pre-training stage)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// RNG seed for the probe model and lattice
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub dims: DimArgs,
    /// Central-difference step
    #[arg(long)]
    pub step: Option<f64>,
    /// Coordinates probed per parameter tensor
    #[arg(long)]
    pub samples: Option<usize>,
    /// Largest acceptable relative error
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args)]
pub struct InspectLatticeArgs {
    /// key=value config file; flags override its rows
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Lattice file to inspect
    #[arg(long)]
    pub lattices: Option<PathBuf>,
    /// Restrict to one lattice id
    #[arg(long)]
    pub id: Option<String>,
    /// Path-enumeration cap per lattice
    #[arg(long)]
    pub max_paths: Option<usize>,
}
