//! LSTM over a lattice: transitions carry states, nodes pool them.
//!
//! Each transition is processed once per layer and direction, consuming the
//! pooled state of its source node. The backward direction runs the same
//! procedure on the reversed lattice, whose transition `i` corresponds to
//! transition `i` of the original with endpoints swapped.

use crate::lattice::{renormalize_weights, Lattice, NodeId};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

use super::cell::{load_cell, lstm_cell_step};
use super::{cell_prefix, LmConfig, ModelError, DECODER_BIAS, DECODER_WEIGHT, EMBEDDING};

/// Per-layer states of one direction: one `(h, c)` per transition, one
/// pooled `(h, c)` per node. The start node holds the zero initial state.
pub struct LayerStates {
    pub trans_h: Vec<Var>,
    pub trans_c: Vec<Var>,
    pub node_h: Vec<Var>,
    pub node_c: Vec<Var>,
}

pub struct DirectionStates {
    pub layers: Vec<LayerStates>,
}

impl DirectionStates {
    /// Pooled hidden state of `node` at the top layer.
    pub fn top_node_h(&self, node: NodeId) -> Var {
        self.layers.last().expect("at least one layer").node_h[node]
    }
}

/// Everything a full bidirectional forward pass over one lattice produced.
pub struct LatticeStates {
    pub hidden_dim: usize,
    pub forward: DirectionStates,
    pub backward: DirectionStates,
    /// The reversed lattice the backward direction ran on; transition `i`
    /// mirrors transition `i` of the original.
    pub reversed: Lattice,
    /// Word embedding of each original transition, shared by both directions.
    pub trans_embed: Vec<Var>,
}

/// Convex combination of incoming transition states. Weights are the
/// transition probabilities renormalized over the incoming set.
pub fn weighted_pool(
    tape: &mut Tape,
    node: NodeId,
    items: &[(f64, Var, Var)],
) -> Result<(Var, Var), ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyPool { node });
    }
    let mut weights: Vec<f64> = items.iter().map(|&(w, _, _)| w).collect();
    for &w in &weights {
        if w < 0.0 {
            return Err(ModelError::PoolWeight { node, weight: w });
        }
    }
    renormalize_weights(node, &mut weights)?;
    let h_terms: Vec<(f64, Var)> =
        weights.iter().zip(items).map(|(&w, &(_, h, _))| (w, h)).collect();
    let c_terms: Vec<(f64, Var)> =
        weights.iter().zip(items).map(|(&w, &(_, _, c))| (w, c)).collect();
    let h = tape.weighted_sum(&h_terms)?;
    let c = tape.weighted_sum(&c_terms)?;
    Ok((h, c))
}

/// Names and sizes of one LSTM stack; the language model and the classifier
/// run the same lattice recurrence under different parameter prefixes.
pub(super) struct LstmStack<'a> {
    pub prefix: &'a str,
    pub layers: usize,
    pub hidden_dim: usize,
}

/// One direction of a stacked lattice LSTM. `inputs[e]` is the layer-0 input
/// of transition `e`; layers above consume the previous layer's transition
/// states.
pub(super) fn run_stack(
    tape: &mut Tape,
    params: &ParamSet,
    stack: &LstmStack,
    lattice: &Lattice,
    inputs: &[Var],
    direction: &str,
) -> Result<DirectionStates, ModelError> {
    let adj = lattice.adjacency()?;
    let order = lattice.topological_order()?;
    let start = adj.start()?;
    let zero = tape.constant(Tensor::zeros(&[stack.hidden_dim]));
    let n_trans = lattice.transitions.len();

    let mut layers: Vec<LayerStates> = Vec::with_capacity(stack.layers);
    for layer in 0..stack.layers {
        let cell = load_cell(tape, params, &cell_prefix(stack.prefix, direction, layer))?;
        let mut trans_h: Vec<Option<Var>> = vec![None; n_trans];
        let mut trans_c: Vec<Option<Var>> = vec![None; n_trans];
        let mut node_h: Vec<Option<Var>> = vec![None; lattice.num_nodes];
        let mut node_c: Vec<Option<Var>> = vec![None; lattice.num_nodes];

        for &n in &order {
            let (h_n, c_n) = if n == start {
                (zero, zero)
            } else {
                let items: Vec<(f64, Var, Var)> = adj
                    .incoming(n)
                    .iter()
                    .map(|&e| {
                        let h = trans_h[e].expect("incoming transition precedes node");
                        let c = trans_c[e].expect("incoming transition precedes node");
                        (lattice.transitions[e].prob, h, c)
                    })
                    .collect();
                weighted_pool(tape, n, &items)?
            };
            node_h[n] = Some(h_n);
            node_c[n] = Some(c_n);

            for &e in adj.outgoing(n) {
                let x = if layer == 0 { inputs[e] } else { layers[layer - 1].trans_h[e] };
                let (h_e, c_e) = lstm_cell_step(tape, &cell, x, h_n, c_n)?;
                trans_h[e] = Some(h_e);
                trans_c[e] = Some(c_e);
            }
        }

        layers.push(LayerStates {
            trans_h: trans_h.into_iter().map(|v| v.expect("transition covered")).collect(),
            trans_c: trans_c.into_iter().map(|v| v.expect("transition covered")).collect(),
            node_h: node_h.into_iter().map(|v| v.expect("node covered")).collect(),
            node_c: node_c.into_iter().map(|v| v.expect("node covered")).collect(),
        });
    }
    Ok(DirectionStates { layers })
}

/// Bidirectional multi-layer pass over a valid, normalized lattice.
/// `word_ids` maps each transition to its row in the embedding table;
/// out-of-vocabulary words must already be collapsed to the unknown id.
pub fn lattice_lstm_forward(
    tape: &mut Tape,
    params: &ParamSet,
    config: &LmConfig,
    lattice: &Lattice,
    word_ids: &[usize],
) -> Result<LatticeStates, ModelError> {
    lattice.require_valid()?;
    if word_ids.len() != lattice.transitions.len() {
        return Err(ModelError::Config(format!(
            "{} word ids for {} transitions",
            word_ids.len(),
            lattice.transitions.len()
        )));
    }
    for (e, &id) in word_ids.iter().enumerate() {
        if id >= config.vocab_size {
            return Err(ModelError::WordIdRange {
                transition: e,
                word_id: id,
                vocab_size: config.vocab_size,
            });
        }
    }

    let table = tape.param(params, EMBEDDING)?;
    let trans_embed: Vec<Var> = word_ids
        .iter()
        .map(|&id| tape.row(table, id))
        .collect::<Result<_, _>>()?;

    let reversed = lattice.reversed()?;
    let stack = LstmStack { prefix: "lstm", layers: config.layers, hidden_dim: config.hidden_dim };
    let forward = run_stack(tape, params, &stack, lattice, &trans_embed, "fwd")?;
    let backward = run_stack(tape, params, &stack, &reversed, &trans_embed, "bwd")?;
    Ok(LatticeStates { hidden_dim: config.hidden_dim, forward, backward, reversed, trans_embed })
}

/// Tape handles for the shared next-word decoder.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    w: Var,
    bias: Option<Var>,
}

pub fn load_decoder(
    tape: &mut Tape,
    params: &ParamSet,
    config: &LmConfig,
) -> Result<DecoderVars, ModelError> {
    let w = tape.param(params, DECODER_WEIGHT)?;
    let bias = if config.decoder_bias { Some(tape.param(params, DECODER_BIAS)?) } else { None };
    Ok(DecoderVars { w, bias })
}

/// Vocabulary logits for the words leaving the node whose state is `h`.
pub fn decode_next(tape: &mut Tape, decoder: &DecoderVars, h: Var) -> Result<Var, ModelError> {
    let logits = tape.matvec(decoder.w, h)?;
    match decoder.bias {
        Some(bias) => Ok(tape.add(logits, bias)?),
        None => Ok(logits),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use crate::lattice::Transition;
    use crate::model::init_lm_params;
    use crate::numerics::softmax_slice;

    use super::*;

    fn tiny_config(vocab: usize) -> LmConfig {
        LmConfig { vocab_size: vocab, embed_dim: 4, hidden_dim: 4, layers: 2, decoder_bias: true }
    }

    #[test]
    fn pool_of_one_is_the_input_exactly() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::vector(vec![0.3, -0.9]));
        let c = tape.constant(Tensor::vector(vec![1.5, 0.2]));
        let (ph, pc) = weighted_pool(&mut tape, 7, &[(0.37, h, c)]).unwrap();
        assert_eq!(tape.value(ph).data(), &[0.3, -0.9]);
        assert_eq!(tape.value(pc).data(), &[1.5, 0.2]);
    }

    #[test]
    fn pool_renormalizes_incoming_mass() {
        // Weights 0.2 and 0.6 renormalize to 0.25 and 0.75.
        let mut tape = Tape::new();
        let h1 = tape.constant(Tensor::vector(vec![2.0, 0.0]));
        let h2 = tape.constant(Tensor::vector(vec![0.0, 2.0]));
        let c = tape.constant(Tensor::zeros(&[2]));
        let (ph, _) = weighted_pool(&mut tape, 0, &[(0.2, h1, c), (0.6, h2, c)]).unwrap();
        let got = tape.value(ph).data();
        assert!((got[0] - 0.5).abs() < 1e-15 && (got[1] - 1.5).abs() < 1e-15, "{got:?}");
    }

    #[test]
    fn equal_mass_pool_is_the_midpoint() {
        let mut tape = Tape::new();
        let h1 = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let h2 = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let c = tape.constant(Tensor::zeros(&[2]));
        let (ph, _) = weighted_pool(&mut tape, 0, &[(0.5, h1, c), (0.5, h2, c)]).unwrap();
        assert_eq!(tape.value(ph).data(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_and_negative_pools_are_rejected() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            weighted_pool(&mut tape, 3, &[]),
            Err(ModelError::EmptyPool { node: 3 })
        ));
        assert!(matches!(
            weighted_pool(&mut tape, 4, &[(0.9, h, h), (-0.1, h, h)]),
            Err(ModelError::PoolWeight { node: 4, .. })
        ));
    }

    fn diamond_same_word() -> Lattice {
        // Both branches carry "b" with equal mass and join before "c".
        Lattice::new(
            "d",
            4,
            vec![
                Transition::new(0, 1, "a", 1.0),
                Transition::new(1, 2, "b", 0.5),
                Transition::new(1, 2, "b", 0.5),
                Transition::new(2, 3, "c", 1.0),
            ],
        )
    }

    #[test]
    fn identical_branches_produce_identical_states() {
        let config = tiny_config(5);
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let params = init_lm_params(&config, &mut rng).unwrap();
        let lattice = diamond_same_word();
        let mut tape = Tape::new();
        let states =
            lattice_lstm_forward(&mut tape, &params, &config, &lattice, &[1, 2, 2, 3]).unwrap();
        for layer in &states.forward.layers {
            let b1 = tape.value(layer.trans_h[1]).data();
            let b2 = tape.value(layer.trans_h[2]).data();
            assert_eq!(b1, b2, "equal inputs, equal states");
            // The pooled join state is a convex combination of two equal
            // vectors, so it matches either branch.
            let join = tape.value(layer.node_h[2]).data();
            for (j, b) in join.iter().zip(b1) {
                assert!((j - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pooled_state_stays_in_the_coordinate_hull() {
        let config = tiny_config(6);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let params = init_lm_params(&config, &mut rng).unwrap();
        let lattice = Lattice::new(
            "hull",
            3,
            vec![
                Transition::new(0, 1, "a", 0.3),
                Transition::new(0, 1, "b", 0.45),
                Transition::new(0, 1, "c", 0.25),
                Transition::new(1, 2, "d", 1.0),
            ],
        );
        let mut tape = Tape::new();
        let states =
            lattice_lstm_forward(&mut tape, &params, &config, &lattice, &[1, 2, 3, 4]).unwrap();
        for layer in &states.forward.layers {
            let pooled = tape.value(layer.node_h[1]).data().to_vec();
            for (i, p) in pooled.iter().enumerate() {
                let inputs: Vec<f64> =
                    (0..3).map(|e| tape.value(layer.trans_h[e]).data()[i]).collect();
                let lo = inputs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = inputs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(lo - 1e-15 <= *p && *p <= hi + 1e-15, "{p} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn transition_storage_order_does_not_matter() {
        let config = tiny_config(6);
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let params = init_lm_params(&config, &mut rng).unwrap();

        let forward_order = Lattice::new(
            "p",
            4,
            vec![
                Transition::new(0, 1, "a", 1.0),
                Transition::new(1, 2, "b", 0.7),
                Transition::new(1, 2, "c", 0.3),
                Transition::new(2, 3, "d", 1.0),
            ],
        );
        let mut shuffled = forward_order.clone();
        shuffled.transitions.reverse();
        let ids = [1usize, 2, 3, 4];
        let rev_ids = [4usize, 3, 2, 1];

        let mut tape_a = Tape::new();
        let a = lattice_lstm_forward(&mut tape_a, &params, &config, &forward_order, &ids).unwrap();
        let mut tape_b = Tape::new();
        let b = lattice_lstm_forward(&mut tape_b, &params, &config, &shuffled, &rev_ids).unwrap();

        for (la, lb) in a.forward.layers.iter().zip(&b.forward.layers) {
            for node in 0..4 {
                let ha = tape_a.value(la.node_h[node]).data();
                let hb = tape_b.value(lb.node_h[node]).data();
                for (x, y) in ha.iter().zip(hb) {
                    assert!((x - y).abs() <= 1e-15, "node {node}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn backward_direction_runs_on_the_reversed_lattice() {
        let config = tiny_config(6);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let params = init_lm_params(&config, &mut rng).unwrap();
        let lattice = Lattice::from_tokens("c", &["x", "y"]).unwrap();
        let mut tape = Tape::new();
        let states =
            lattice_lstm_forward(&mut tape, &params, &config, &lattice, &[1, 2]).unwrap();
        // Original chain 0 -> 1 -> 2; reversed start is node 2, so its
        // backward pooled state is the zero vector and node 0 carries the
        // full right-to-left context.
        let top = states.backward.layers.last().unwrap();
        assert_eq!(tape.value(top.node_h[2]).data(), &[0.0; 4]);
        assert!(tape.value(top.node_h[0]).data().iter().any(|v| v.abs() > 0.0));
        assert_eq!(states.reversed.transitions[0].prev, 1);
        assert_eq!(states.reversed.transitions[0].next, 0);
        assert_eq!(states.reversed.transitions[0].word, "x");
    }

    #[test]
    fn decoder_maps_one_hot_through_identity() {
        let mut params = ParamSet::new();
        let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        params.insert(DECODER_WEIGHT, eye).unwrap();
        params.insert(DECODER_BIAS, Tensor::zeros(&[3])).unwrap();
        let config = LmConfig { vocab_size: 3, embed_dim: 3, hidden_dim: 3, layers: 1, decoder_bias: true };
        let mut tape = Tape::new();
        let decoder = load_decoder(&mut tape, &params, &config).unwrap();
        let h = tape.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let logits = decode_next(&mut tape, &decoder, h).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_decoder_gives_a_uniform_softmax() {
        let mut params = ParamSet::new();
        params.insert(DECODER_WEIGHT, Tensor::zeros(&[4, 2])).unwrap();
        params.insert(DECODER_BIAS, Tensor::zeros(&[4])).unwrap();
        let config = LmConfig { vocab_size: 4, embed_dim: 2, hidden_dim: 2, layers: 1, decoder_bias: true };
        let mut tape = Tape::new();
        let decoder = load_decoder(&mut tape, &params, &config).unwrap();
        let h = tape.constant(Tensor::vector(vec![3.0, -1.0]));
        let logits = decode_next(&mut tape, &decoder, h).unwrap();
        let probs = softmax_slice(tape.value(logits).data());
        for p in probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn random_decoder_matches_direct_multiplication() {
        let config = LmConfig { vocab_size: 5, embed_dim: 3, hidden_dim: 3, layers: 1, decoder_bias: true };
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let params = init_lm_params(&config, &mut rng).unwrap();
        let h_data = vec![0.4, -1.2, 0.9];
        let mut tape = Tape::new();
        let decoder = load_decoder(&mut tape, &params, &config).unwrap();
        let h = tape.constant(Tensor::vector(h_data.clone()));
        let logits = decode_next(&mut tape, &decoder, h).unwrap();

        let w = params.get(DECODER_WEIGHT).unwrap();
        let b = params.get(DECODER_BIAS).unwrap();
        for r in 0..5 {
            let mut expected = b.data()[r];
            for (c, x) in h_data.iter().enumerate() {
                expected += w.data()[r * 3 + c] * x;
            }
            let got = tape.value(logits).data()[r];
            assert!((got - expected).abs() < 1e-15, "row {r}: {got} vs {expected}");
        }
    }
}
