//! Neural architectures: the LSTM cell, the sequential bidirectional LM,
//! the lattice LSTM with weighted node pooling, the linear next-word
//! decoder, weight transfer between the two LM forms, scalar layer mixing,
//! and the classifier head.
//!
//! Parameter tensors live in a [`ParamSet`] under fixed dot-separated names
//! (see [`lm_param_specs`]); the sequential and lattice language models share
//! one naming scheme, which is what makes weight transfer an exact copy.

mod cell;
mod classifier;
mod lattice_lstm;
mod mix;
mod seq_lm;
mod transfer;

pub use cell::{init_cell_params, load_cell, lstm_cell_step, CellVars};
pub use classifier::{
    classifier_forward, clf_param_specs, init_classifier_params, ClassifierConfig,
};
pub use lattice_lstm::{
    decode_next, lattice_lstm_forward, load_decoder, weighted_pool, DecoderVars, DirectionStates,
    LatticeStates, LayerStates,
};
pub use mix::{init_mix_params, scalar_mix, MIX_GAMMA, MIX_LOGITS};
pub use seq_lm::{seq_lm_loss, seq_lm_states, SeqLmLoss, SeqStates};
pub use transfer::transfer_weights;

use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::lattice::{LatticeError, NodeId};
use crate::numerics::{init, NumericsError, ParamSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pooling over an empty incoming set at node {node}")]
    EmptyPool { node: NodeId },
    #[error("pooling weight {weight} at node {node} is negative")]
    PoolWeight { node: NodeId, weight: f64 },
    #[error("parameter {name:?} is missing")]
    MissingParam { name: String },
    #[error("parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("parameter {name:?} does not belong to this model")]
    UnexpectedParam { name: String },
    #[error("transition {transition} carries word id {word_id}, vocabulary has {vocab_size}")]
    WordIdRange { transition: usize, word_id: usize, vocab_size: usize },
    #[error("no context vector for node {node}")]
    MissingNodeVector { node: NodeId },
}

/// Sizes of the language model. One hidden width per direction; the decoder
/// and embedding table are shared across directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub decoder_bias: bool,
}

impl LmConfig {
    pub fn new(vocab_size: usize) -> LmConfig {
        LmConfig { vocab_size, embed_dim: 128, hidden_dim: 256, layers: 2, decoder_bias: true }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::Config("all dimensions must be positive".into()));
        }
        if self.layers == 0 {
            return Err(ModelError::Config("at least one layer".into()));
        }
        if self.mix_width() % self.embed_dim != 0 {
            return Err(ModelError::Config(format!(
                "embedding width {} must divide the mixed width {} so the \
                 embedding layer can be tiled to match",
                self.embed_dim,
                self.mix_width()
            )));
        }
        Ok(())
    }

    /// Width of per-node context vectors: forward and backward states side
    /// by side.
    pub fn mix_width(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Input width of layer `layer` of the LSTM stack.
    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }
}

pub const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];
pub const EMBEDDING: &str = "embedding";
pub const DECODER_WEIGHT: &str = "decoder.weight";
pub const DECODER_BIAS: &str = "decoder.bias";

/// Parameter prefix of one cell: `{stack}.{direction}.{layer}`. The language
/// model uses stack `lstm`, the classifier `clf.lstm`.
pub fn cell_prefix(stack: &str, direction: &str, layer: usize) -> String {
    format!("{stack}.{direction}.{layer}")
}

/// Every language-model parameter name with its shape, in a fixed order.
pub fn lm_param_specs(config: &LmConfig) -> Vec<(String, Vec<usize>)> {
    let mut specs = vec![(EMBEDDING.to_string(), vec![config.vocab_size, config.embed_dim])];
    for direction in DIRECTIONS {
        for layer in 0..config.layers {
            let prefix = cell_prefix("lstm", direction, layer);
            let input = config.layer_input_dim(layer);
            let h = config.hidden_dim;
            specs.push((format!("{prefix}.x"), vec![4 * h, input]));
            specs.push((format!("{prefix}.h"), vec![4 * h, h]));
            specs.push((format!("{prefix}.bias"), vec![4 * h]));
        }
    }
    specs.push((DECODER_WEIGHT.to_string(), vec![config.vocab_size, config.hidden_dim]));
    if config.decoder_bias {
        specs.push((DECODER_BIAS.to_string(), vec![config.vocab_size]));
    }
    specs
}

/// Fresh, seeded language-model parameters. The same config and seed always
/// produce identical tensors.
pub fn init_lm_params(config: &LmConfig, rng: &mut ChaCha20Rng) -> Result<ParamSet, ModelError> {
    config.validate()?;
    let mut params = ParamSet::new();
    params.insert(EMBEDDING, init::glorot(rng, config.vocab_size, config.embed_dim))?;
    for direction in DIRECTIONS {
        for layer in 0..config.layers {
            init_cell_params(
                &mut params,
                &cell_prefix("lstm", direction, layer),
                config.layer_input_dim(layer),
                config.hidden_dim,
                rng,
            )?;
        }
    }
    params.insert(DECODER_WEIGHT, init::glorot(rng, config.vocab_size, config.hidden_dim))?;
    if config.decoder_bias {
        params.insert(DECODER_BIAS, crate::numerics::Tensor::zeros(&[config.vocab_size]))?;
    }
    Ok(params)
}

/// Checks that `params` holds exactly the tensors of `lm_param_specs`, with
/// matching shapes, under an optional name prefix.
pub fn check_lm_params(
    params: &ParamSet,
    config: &LmConfig,
    prefix: &str,
) -> Result<(), ModelError> {
    let specs = lm_param_specs(config);
    for (name, shape) in &specs {
        let full = format!("{prefix}{name}");
        let tensor = params
            .get(&full)
            .map_err(|_| ModelError::MissingParam { name: full.clone() })?;
        if tensor.shape() != shape.as_slice() {
            return Err(ModelError::ParamShape {
                name: full,
                expected: shape.clone(),
                got: tensor.shape().to_vec(),
            });
        }
    }
    let expected: std::collections::BTreeSet<String> =
        specs.into_iter().map(|(name, _)| format!("{prefix}{name}")).collect();
    for name in params.names() {
        if name.starts_with(prefix) && !expected.contains(name) {
            return Err(ModelError::UnexpectedParam { name: name.to_string() });
        }
    }
    Ok(())
}
