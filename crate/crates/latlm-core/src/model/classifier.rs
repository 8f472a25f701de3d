//! Lattice classifier: a bidirectional LatticeLSTM over per-node context
//! vectors, max-pooled into one vector, then a linear layer to label logits.
//!
//! Transition `e` consumes the context vector of the node it points to in
//! the original orientation, in both directions. Each direction max-pools
//! the top layer's node states over every node except that direction's own
//! start (whose state is the zero initial vector, not content); a linear
//! chain therefore reproduces a sequential bidirectional LSTM classifier
//! exactly.

use rand_chacha::ChaCha20Rng;

use crate::lattice::Lattice;
use crate::numerics::{init, ParamSet, Tape, Tensor, Var};

use super::lattice_lstm::{run_stack, LstmStack};
use super::{cell_prefix, init_cell_params, ModelError, DIRECTIONS};

pub const CLF_STACK: &str = "clf.lstm";
pub const CLF_HEAD_WEIGHT: &str = "clf.head.weight";
pub const CLF_HEAD_BIAS: &str = "clf.head.bias";

/// Sizes of the classifier. `input_dim` is the width of the node context
/// vectors it consumes; `dropout` is the input-masking rate applied by the
/// trainer (the forward pass itself is deterministic).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub labels: usize,
    pub dropout: f64,
}

impl ClassifierConfig {
    pub fn new(input_dim: usize, labels: usize) -> ClassifierConfig {
        ClassifierConfig { input_dim, hidden_dim: 300, layers: 2, labels, dropout: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(ModelError::Config("all classifier dimensions must be positive".into()));
        }
        if self.labels < 2 {
            return Err(ModelError::Config("need at least two labels".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Every classifier parameter name with its shape, in a fixed order.
pub fn clf_param_specs(config: &ClassifierConfig) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    for direction in DIRECTIONS {
        for layer in 0..config.layers {
            let prefix = cell_prefix(CLF_STACK, direction, layer);
            let input = config.layer_input_dim(layer);
            let h = config.hidden_dim;
            specs.push((format!("{prefix}.x"), vec![4 * h, input]));
            specs.push((format!("{prefix}.h"), vec![4 * h, h]));
            specs.push((format!("{prefix}.bias"), vec![4 * h]));
        }
    }
    specs.push((CLF_HEAD_WEIGHT.to_string(), vec![config.labels, 2 * config.hidden_dim]));
    specs.push((CLF_HEAD_BIAS.to_string(), vec![config.labels]));
    specs
}

/// Inserts fresh, seeded classifier parameters into `params`.
pub fn init_classifier_params(
    params: &mut ParamSet,
    config: &ClassifierConfig,
    rng: &mut ChaCha20Rng,
) -> Result<(), ModelError> {
    config.validate()?;
    for direction in DIRECTIONS {
        for layer in 0..config.layers {
            init_cell_params(
                params,
                &cell_prefix(CLF_STACK, direction, layer),
                config.layer_input_dim(layer),
                config.hidden_dim,
                rng,
            )?;
        }
    }
    params.insert(CLF_HEAD_WEIGHT, init::glorot(rng, config.labels, 2 * config.hidden_dim))?;
    params.insert(CLF_HEAD_BIAS, Tensor::zeros(&[config.labels]))?;
    Ok(())
}

/// Label logits for one lattice. `node_vectors[n]` is the context vector of
/// node `n`; only the start node may be `None` (no transition consumes it).
pub fn classifier_forward(
    tape: &mut Tape,
    params: &ParamSet,
    config: &ClassifierConfig,
    lattice: &Lattice,
    node_vectors: &[Option<Var>],
) -> Result<Var, ModelError> {
    config.validate()?;
    lattice.require_valid()?;
    if node_vectors.len() != lattice.num_nodes {
        return Err(ModelError::Config(format!(
            "{} node vectors for {} nodes",
            node_vectors.len(),
            lattice.num_nodes
        )));
    }

    let inputs: Vec<Var> = lattice
        .transitions
        .iter()
        .map(|t| node_vectors[t.next].ok_or(ModelError::MissingNodeVector { node: t.next }))
        .collect::<Result<_, _>>()?;

    let stack = LstmStack { prefix: CLF_STACK, layers: config.layers, hidden_dim: config.hidden_dim };
    let reversed = lattice.reversed()?;
    let forward = run_stack(tape, params, &stack, lattice, &inputs, "fwd")?;
    let backward = run_stack(tape, params, &stack, &reversed, &inputs, "bwd")?;

    let fwd_start = lattice.adjacency()?.start()?;
    let bwd_start = reversed.adjacency()?.start()?;
    let fwd_states: Vec<Var> = (0..lattice.num_nodes)
        .filter(|&n| n != fwd_start)
        .map(|n| forward.top_node_h(n))
        .collect();
    let bwd_states: Vec<Var> = (0..lattice.num_nodes)
        .filter(|&n| n != bwd_start)
        .map(|n| backward.top_node_h(n))
        .collect();
    let fwd_pooled = tape.max_pool(&fwd_states)?;
    let bwd_pooled = tape.max_pool(&bwd_states)?;
    let pooled = tape.concat(&[fwd_pooled, bwd_pooled])?;

    let head_w = tape.param(params, CLF_HEAD_WEIGHT)?;
    let head_b = tape.param(params, CLF_HEAD_BIAS)?;
    let scores = tape.matvec(head_w, pooled)?;
    Ok(tape.add(scores, head_b)?)
}
