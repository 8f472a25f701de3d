//! Scalar mixing of layer representations into per-node context vectors.
//!
//! Layer 0 is the pooled incoming word embeddings (tiled sideways to match
//! the doubled LSTM width); layer k ≥ 1 concatenates the forward and
//! backward pooled node states. A softmax over trainable logits weighs the
//! layers and a trainable scale multiplies the result.

use crate::lattice::{renormalize_weights, Lattice};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

use super::lattice_lstm::LatticeStates;
use super::{LmConfig, ModelError};

pub const MIX_LOGITS: &str = "mix.logits";
pub const MIX_GAMMA: &str = "mix.gamma";

/// Inserts the mixing logits (one per LM layer plus the embedding layer,
/// all zero) and the global scale (one).
pub fn init_mix_params(params: &mut ParamSet, lm_layers: usize) -> Result<(), ModelError> {
    params.insert(MIX_LOGITS, Tensor::zeros(&[lm_layers + 1]))?;
    params.insert(MIX_GAMMA, Tensor::scalar(1.0))?;
    Ok(())
}

/// `gamma * sum_k softmax(logits)_k * reps[k]`, all same width.
fn mix_reps(
    tape: &mut Tape,
    logits: Var,
    gamma: Var,
    reps: &[Var],
) -> Result<Var, ModelError> {
    let weights = tape.softmax_vec(logits)?;
    let mut acc: Option<Var> = None;
    for (k, &rep) in reps.iter().enumerate() {
        let w_k = tape.index(weights, k)?;
        let term = tape.mul_scalar(rep, w_k)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    let mixed = acc.expect("at least one layer");
    Ok(tape.mul_scalar(mixed, gamma)?)
}

/// One context vector per node with incoming transitions; the start node
/// (which has none) gets `None`. Vectors are `2 * hidden` wide.
pub fn scalar_mix(
    tape: &mut Tape,
    params: &ParamSet,
    config: &LmConfig,
    lattice: &Lattice,
    states: &LatticeStates,
) -> Result<Vec<Option<Var>>, ModelError> {
    let logits = tape.param(params, MIX_LOGITS)?;
    let expected_layers = config.layers + 1;
    if tape.value(logits).shape() != [expected_layers] {
        return Err(ModelError::ParamShape {
            name: MIX_LOGITS.to_string(),
            expected: vec![expected_layers],
            got: tape.value(logits).shape().to_vec(),
        });
    }
    let gamma = tape.param(params, MIX_GAMMA)?;
    let tile = config.mix_width() / config.embed_dim;
    let adj = lattice.adjacency()?;

    let mut vectors: Vec<Option<Var>> = vec![None; lattice.num_nodes];
    for node in 0..lattice.num_nodes {
        let incoming = adj.incoming(node);
        if incoming.is_empty() {
            continue;
        }
        let mut weights: Vec<f64> =
            incoming.iter().map(|&e| lattice.transitions[e].prob).collect();
        renormalize_weights(node, &mut weights)?;
        let terms: Vec<(f64, Var)> = weights
            .iter()
            .zip(incoming)
            .map(|(&w, &e)| (w, states.trans_embed[e]))
            .collect();
        let pooled_embed = tape.weighted_sum(&terms)?;
        let embed_rep = if tile == 1 {
            pooled_embed
        } else {
            tape.concat(&vec![pooled_embed; tile])?
        };

        let mut reps = Vec::with_capacity(config.layers + 1);
        reps.push(embed_rep);
        for layer in 0..config.layers {
            let fwd = states.forward.layers[layer].node_h[node];
            let bwd = states.backward.layers[layer].node_h[node];
            reps.push(tape.concat(&[fwd, bwd])?);
        }
        vectors[node] = Some(mix_reps(tape, logits, gamma, &reps)?);
    }
    Ok(vectors)
}
