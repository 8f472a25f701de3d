//! Bidirectional LSTM language model over plain token sequences.
//!
//! This is its own loop over positions — no lattice structures anywhere —
//! yet it shares cell parameters and naming with the lattice form, so a
//! model trained here transfers into the lattice model by a plain copy, and
//! both produce the same numbers on a linear chain.

use crate::numerics::{Distribution, ParamSet, Tape, Tensor, Var};

use super::lattice_lstm::{decode_next, load_decoder};
use super::{cell_prefix, load_cell, lstm_cell_step, LmConfig, ModelError, EMBEDDING};

/// Hidden states of a bidirectional sequential pass, `[layer][position]`.
/// Forward position `i` is the state after consuming input `i` left to
/// right; backward position `i` after consuming inputs `len-1 ..= i`.
pub struct SeqStates {
    pub forward: Vec<Vec<Var>>,
    pub backward: Vec<Vec<Var>>,
}

/// The language-model objective of one sequence plus its per-event terms.
pub struct SeqLmLoss {
    /// Mean of each direction's event losses, directions weighted equally.
    pub loss: Var,
    /// One KL term per forward prediction event, in prediction order.
    pub forward_events: Vec<Var>,
    /// One KL term per backward prediction event, in prediction order.
    pub backward_events: Vec<Var>,
}

fn embed_ids(
    tape: &mut Tape,
    params: &ParamSet,
    config: &LmConfig,
    ids: &[usize],
) -> Result<Vec<Var>, ModelError> {
    for (i, &id) in ids.iter().enumerate() {
        if id >= config.vocab_size {
            return Err(ModelError::WordIdRange {
                transition: i,
                word_id: id,
                vocab_size: config.vocab_size,
            });
        }
    }
    let table = tape.param(params, EMBEDDING)?;
    Ok(ids.iter().map(|&id| tape.row(table, id)).collect::<Result<_, _>>()?)
}

/// Runs one direction's stack over already-embedded inputs, returning
/// `[layer][position]` hidden states.
fn run_chain(
    tape: &mut Tape,
    params: &ParamSet,
    config: &LmConfig,
    direction: &str,
    inputs: &[Var],
) -> Result<Vec<Vec<Var>>, ModelError> {
    let zero = tape.constant(Tensor::zeros(&[config.hidden_dim]));
    let mut layers: Vec<Vec<Var>> = Vec::with_capacity(config.layers);
    for layer in 0..config.layers {
        let cell = load_cell(tape, params, &cell_prefix("lstm", direction, layer))?;
        let mut h = zero;
        let mut c = zero;
        let mut states = Vec::with_capacity(inputs.len());
        for pos in 0..inputs.len() {
            let x = if layer == 0 { inputs[pos] } else { layers[layer - 1][pos] };
            let (h_next, c_next) = lstm_cell_step(tape, &cell, x, h, c)?;
            h = h_next;
            c = c_next;
            states.push(h);
        }
        layers.push(states);
    }
    Ok(layers)
}

/// Contextual states for every position of `ids`, both directions.
pub fn seq_lm_states(
    tape: &mut Tape,
    params: &ParamSet,
    config: &LmConfig,
    ids: &[usize],
) -> Result<SeqStates, ModelError> {
    if ids.is_empty() {
        return Err(ModelError::Config("empty sequence".into()));
    }
    let embeds = embed_ids(tape, params, config, ids)?;
    let forward = run_chain(tape, params, config, "fwd", &embeds)?;
    let mut rev_embeds = embeds;
    rev_embeds.reverse();
    let mut backward = run_chain(tape, params, config, "bwd", &rev_embeds)?;
    for layer in &mut backward {
        layer.reverse();
    }
    Ok(SeqStates { forward, backward })
}

/// Language-model loss of one sentinel-wrapped id sequence.
///
/// Each direction predicts every token of its reading order, the first from
/// the zero initial state: left to right that is `wrapped[0]` (the opening
/// sentinel) through `wrapped[last]`, right to left the mirror image. Every
/// event is a KL term against a one-hot target; the loss is the mean per
/// direction, then the mean of the two directions.
pub fn seq_lm_loss(
    tape: &mut Tape,
    params: &ParamSet,
    config: &LmConfig,
    wrapped: &[usize],
) -> Result<SeqLmLoss, ModelError> {
    if wrapped.len() < 2 {
        return Err(ModelError::Config("need at least two wrapped tokens".into()));
    }
    let decoder = load_decoder(tape, params, config)?;
    let embeds = embed_ids(tape, params, config, wrapped)?;
    let zero = tape.constant(Tensor::zeros(&[config.hidden_dim]));

    let mut run_events = |direction: &str, inputs: &[Var], targets: &[usize]| -> Result<Vec<Var>, ModelError> {
        // inputs[i] produces the state that predicts targets[i + 1];
        // targets[0] is predicted from the zero state.
        let layers = run_chain(tape, params, config, direction, inputs)?;
        let top = layers.last().expect("at least one layer");
        let mut events = Vec::with_capacity(targets.len());
        let first_logits = decode_next(tape, &decoder, zero)?;
        events.push(tape.kl_from_logits(first_logits, Distribution::one_hot(targets[0]))?);
        for (state, &target) in top.iter().zip(&targets[1..]) {
            let logits = decode_next(tape, &decoder, *state)?;
            events.push(tape.kl_from_logits(logits, Distribution::one_hot(target))?);
        }
        Ok(events)
    };

    let consumed_fwd = &embeds[..wrapped.len() - 1];
    let forward_events = run_events("fwd", consumed_fwd, wrapped)?;

    let mut reversed_ids = wrapped.to_vec();
    reversed_ids.reverse();
    let mut reversed_embeds = embeds.clone();
    reversed_embeds.reverse();
    let consumed_bwd = &reversed_embeds[..wrapped.len() - 1];
    let backward_events = run_events("bwd", consumed_bwd, &reversed_ids)?;

    let fwd_mean = tape.mean_scalars(&forward_events)?;
    let bwd_mean = tape.mean_scalars(&backward_events)?;
    let loss = tape.weighted_sum(&[(0.5, fwd_mean), (0.5, bwd_mean)])?;
    Ok(SeqLmLoss { loss, forward_events, backward_events })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use crate::model::init_lm_params;
    use crate::numerics::grad_check;

    use super::*;

    fn tiny_config(vocab: usize) -> LmConfig {
        LmConfig { vocab_size: vocab, embed_dim: 4, hidden_dim: 4, layers: 2, decoder_bias: true }
    }

    #[test]
    fn states_cover_every_layer_and_position() {
        let config = tiny_config(9);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let params = init_lm_params(&config, &mut rng).unwrap();
        let mut tape = Tape::new();
        let states = seq_lm_states(&mut tape, &params, &config, &[3, 1, 4, 1]).unwrap();
        assert_eq!(states.forward.len(), 2);
        assert_eq!(states.backward.len(), 2);
        for layer in states.forward.iter().chain(&states.backward) {
            assert_eq!(layer.len(), 4);
        }
        // Backward position 0 has consumed the whole sequence; position 3
        // only the last token. They must differ for a random model.
        let b0 = tape.value(states.backward[1][0]).data();
        let b3 = tape.value(states.backward[1][3]).data();
        assert_ne!(b0, b3);
    }

    #[test]
    fn loss_counts_one_event_per_token_per_direction() {
        let config = tiny_config(9);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let params = init_lm_params(&config, &mut rng).unwrap();
        let mut tape = Tape::new();
        let wrapped = [1usize, 3, 4, 5, 2];
        let out = seq_lm_loss(&mut tape, &params, &config, &wrapped).unwrap();
        assert_eq!(out.forward_events.len(), 5);
        assert_eq!(out.backward_events.len(), 5);
        let mean: f64 = out
            .forward_events
            .iter()
            .chain(&out.backward_events)
            .map(|&e| tape.value(e).item())
            .sum::<f64>()
            / 10.0;
        assert!((tape.value(out.loss).item() - mean).abs() < 1e-12);
    }

    #[test]
    fn an_untrained_model_sits_near_the_uniform_loss() {
        // Fresh small-weight models decode close to uniform logits, so the
        // per-event KL is close to ln(vocab).
        let config = tiny_config(50);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let params = init_lm_params(&config, &mut rng).unwrap();
        let mut tape = Tape::new();
        let out = seq_lm_loss(&mut tape, &params, &config, &[1, 7, 9, 2]).unwrap();
        let loss = tape.value(out.loss).item();
        let uniform = 50f64.ln();
        assert!((loss - uniform).abs() < 0.5, "loss {loss} vs uniform {uniform}");
    }

    #[test]
    fn sequence_gradients_match_finite_differences() {
        let config = LmConfig { vocab_size: 6, embed_dim: 2, hidden_dim: 2, layers: 2, decoder_bias: true };
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mut params = init_lm_params(&config, &mut rng).unwrap();
        // Step 1e-4 keeps the central-difference roundoff (~loss*eps/h) below the
        // tolerance on coordinates whose true gradient is tiny; smaller steps only
        // amplify cancellation noise, not accuracy.
        let report = grad_check(
            &mut params,
            |p| {
                let mut tape = Tape::new();
                let out = seq_lm_loss(&mut tape, p, &config, &[1, 4, 3, 2]).map_err(|e| match e {
                    ModelError::Numerics(inner) => inner,
                    other => panic!("unexpected error: {other}"),
                })?;
                let grads = tape.backward(out.loss)?;
                Ok((tape.value(out.loss).item(), grads))
            },
            1e-4,
            4,
            17,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
