//! The bidirectional lattice language-modeling objective.

use std::collections::BTreeMap;

use crate::data::Vocabulary;
use crate::lattice::{AdjacencyIndex, Lattice, NodeId};
use crate::model::{
    decode_next, lattice_lstm_forward, load_decoder, DirectionStates, LmConfig,
};
use crate::numerics::{Distribution, ParamSet, Tape, Var};

use super::PipelineError;

/// Next-word target at `node`: the renormalized outgoing transition
/// probabilities, grouped by vocabulary id. Parallel transitions carrying
/// the same word have their probabilities summed, and out-of-vocabulary
/// words collapse onto the UNK id, so the target is a proper distribution
/// over ids no matter how the lattice spells its alternatives.
pub fn ground_truth_next_distribution(
    lattice: &Lattice,
    adj: &AdjacencyIndex,
    node: NodeId,
    vocab: &Vocabulary,
) -> Result<Distribution, PipelineError> {
    let outgoing = adj.outgoing(node);
    if outgoing.is_empty() {
        return Err(PipelineError::NoOutgoing { node });
    }
    let mut weights: Vec<f64> = outgoing
        .iter()
        .map(|&e| lattice.transitions[e].prob)
        .collect();
    crate::lattice::renormalize_weights(node, &mut weights)?;
    let mut by_id: BTreeMap<usize, f64> = BTreeMap::new();
    for (&e, &w) in outgoing.iter().zip(&weights) {
        *by_id
            .entry(vocab.id(&lattice.transitions[e].word))
            .or_insert(0.0) += w;
    }
    // Re-summing normalized weights can push a grouped mass past 1.0 by an
    // ulp when one id absorbs nearly everything; dividing by the grouped
    // total restores a proper distribution and is a bitwise no-op (x / 1.0)
    // whenever the weights already sum to exactly 1.
    let total: f64 = by_id.values().sum();
    Ok(Distribution::new(
        by_id.into_iter().map(|(id, w)| (id, w / total)).collect(),
    )?)
}

/// KL terms of [`lattice_lm_loss`], one per predicting node per direction,
/// in topological order of the direction's lattice.
pub struct LatticeLmLoss {
    /// Equal-weight average of the two per-direction means.
    pub loss: Var,
    pub forward_events: Vec<Var>,
    pub backward_events: Vec<Var>,
}

/// Bidirectional LM loss of one lattice.
///
/// The lattice is renormalized and wrapped with BOS/EOS sentinel transitions
/// here, so callers pass task lattices directly. In each direction every
/// node except that direction's end node predicts the distribution of its
/// outgoing words (KL from the decoder's softmax to the ground-truth
/// distribution), nodes visited in topological order; the backward direction
/// runs on the reversed lattice with the reversed transition probabilities
/// as targets. On a linear chain the events reduce, term for term and in
/// the same order, to [`crate::model::seq_lm_loss`] on the wrapped ids.
pub fn lattice_lm_loss(
    tape: &mut Tape,
    params: &ParamSet,
    config: &LmConfig,
    lattice: &Lattice,
    vocab: &Vocabulary,
) -> Result<LatticeLmLoss, PipelineError> {
    let wrapped = lattice.normalized()?.with_sentinels()?;
    let word_ids: Vec<usize> = wrapped
        .transitions
        .iter()
        .map(|t| vocab.id(&t.word))
        .collect();
    let states = lattice_lstm_forward(tape, params, config, &wrapped, &word_ids)?;
    let decoder = load_decoder(tape, params, config)?;

    let direction_events =
        |tape: &mut Tape, lat: &Lattice, dir: &DirectionStates| -> Result<Vec<Var>, PipelineError> {
            let adj = lat.adjacency()?;
            let end = adj.end()?;
            let order = lat.topological_order()?;
            let mut events = Vec::with_capacity(order.len().saturating_sub(1));
            for &node in &order {
                if node == end {
                    continue;
                }
                let target = ground_truth_next_distribution(lat, &adj, node, vocab)?;
                let logits = decode_next(tape, &decoder, dir.top_node_h(node))?;
                events.push(tape.kl_from_logits(logits, target)?);
            }
            Ok(events)
        };
    let forward_events = direction_events(tape, &wrapped, &states.forward)?;
    let backward_events = direction_events(tape, &states.reversed, &states.backward)?;

    let fwd_mean = tape.mean_scalars(&forward_events)?;
    let bwd_mean = tape.mean_scalars(&backward_events)?;
    let loss = tape.weighted_sum(&[(0.5, fwd_mean), (0.5, bwd_mean)])?;
    Ok(LatticeLmLoss {
        loss,
        forward_events,
        backward_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, Vocabulary, UNK_ID};
    use crate::lattice::Transition;
    use crate::model::{init_lm_params, lm_param_specs, seq_lm_loss};
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn vocab_of(words: &[&str]) -> Vocabulary {
        build_vocab(&[words.join(" ")], &[], 1).unwrap()
    }

    fn zero_params(config: &LmConfig) -> ParamSet {
        let mut params = ParamSet::new();
        for (name, shape) in lm_param_specs(config) {
            params.insert(&name, Tensor::zeros(&shape)).unwrap();
        }
        params
    }

    #[test]
    fn targets_merge_duplicate_words_by_id() {
        let lattice = Lattice::new(
            "dup",
            2,
            vec![
                Transition::new(0, 1, "a", 0.5),
                Transition::new(0, 1, "a", 0.25),
                Transition::new(0, 1, "b", 0.25),
            ],
        );
        let vocab = vocab_of(&["a", "b"]);
        let adj = lattice.adjacency().unwrap();
        let dist = ground_truth_next_distribution(&lattice, &adj, 0, &vocab).unwrap();
        assert_eq!(dist.len(), 2);
        assert!((dist.prob(vocab.id("a")) - 0.75).abs() < 1e-15);
        assert!((dist.prob(vocab.id("b")) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn targets_renormalize_unnormalized_outgoing_mass() {
        let lattice = Lattice::new(
            "raw",
            2,
            vec![
                Transition::new(0, 1, "cat", 0.35),
                Transition::new(0, 1, "cap", 0.15),
            ],
        );
        let vocab = vocab_of(&["cat", "cap"]);
        let adj = lattice.adjacency().unwrap();
        let dist = ground_truth_next_distribution(&lattice, &adj, 0, &vocab).unwrap();
        assert!((dist.prob(vocab.id("cat")) - 0.7).abs() < 1e-12);
        assert!((dist.prob(vocab.id("cap")) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocabulary_words_collapse_onto_unk() {
        let lattice = Lattice::new(
            "oov",
            2,
            vec![
                Transition::new(0, 1, "zorp", 0.4),
                Transition::new(0, 1, "blim", 0.4),
                Transition::new(0, 1, "cat", 0.2),
            ],
        );
        let vocab = vocab_of(&["cat"]);
        let adj = lattice.adjacency().unwrap();
        let dist = ground_truth_next_distribution(&lattice, &adj, 0, &vocab).unwrap();
        assert_eq!(dist.len(), 2);
        assert!((dist.prob(UNK_ID) - 0.8).abs() < 1e-15);
        assert!((dist.prob(vocab.id("cat")) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn end_node_has_nothing_to_predict() {
        let lattice = Lattice::from_tokens("chain", &["a"]).unwrap();
        let vocab = vocab_of(&["a"]);
        let adj = lattice.adjacency().unwrap();
        let err = ground_truth_next_distribution(&lattice, &adj, 1, &vocab).unwrap_err();
        assert!(matches!(err, PipelineError::NoOutgoing { node: 1 }));
    }

    // With all parameters zero the decoder emits uniform logits, so each KL
    // term depends only on the target: KL(t || uniform_V) = ln V - H(t).
    #[test]
    fn uniform_model_loss_matches_closed_form() {
        let lattice = Lattice::new(
            "branch",
            2,
            vec![
                Transition::new(0, 1, "cat", 0.7),
                Transition::new(0, 1, "cap", 0.3),
            ],
        );
        // Pad the vocabulary to exactly 10 ids.
        let vocab = build_vocab(&["cat cap w3 w4 w5 w6 w7"], &[], 1).unwrap();
        assert_eq!(vocab.len(), 10);
        let mut config = LmConfig::new(vocab.len());
        config.embed_dim = 4;
        config.hidden_dim = 4;
        config.layers = 1;
        let params = zero_params(&config);
        let mut tape = Tape::new();
        let out = lattice_lm_loss(&mut tape, &params, &config, &lattice, &vocab).unwrap();

        // Wrapped lattice: start' -> 0 (BOS), branch 0 -> 1, 1 -> end' (EOS).
        // Forward events in topological order: BOS (one-hot, KL = ln 10),
        // the branch (0.7 ln 7 + 0.3 ln 3), EOS (ln 10).
        let ln10 = (10.0f64).ln();
        // KL({0.7, 0.3} || uniform) = 0.7 ln(0.7/0.1) + 0.3 ln(0.3/0.1).
        let branch = 0.7 * (7.0f64).ln() + 0.3 * (3.0f64).ln();
        assert!((branch - 1.6917).abs() < 1e-3);

        assert_eq!(out.forward_events.len(), 3);
        assert_eq!(out.backward_events.len(), 3);
        let fwd: Vec<f64> = out
            .forward_events
            .iter()
            .map(|&e| tape.value(e).item())
            .collect();
        assert!((fwd[0] - ln10).abs() < 1e-12);
        assert!((fwd[1] - branch).abs() < 1e-12);
        assert!((fwd[2] - ln10).abs() < 1e-12);
        // Backward direction sees the mirror image: EOS first, then the
        // branch (reversal preserves the probabilities here), then BOS.
        let bwd: Vec<f64> = out
            .backward_events
            .iter()
            .map(|&e| tape.value(e).item())
            .collect();
        assert!((bwd[0] - ln10).abs() < 1e-12);
        assert!((bwd[1] - branch).abs() < 1e-12);
        assert!((bwd[2] - ln10).abs() < 1e-12);
        let expected = (2.0 * ln10 + branch) / 3.0;
        assert!((tape.value(out.loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn chain_loss_equals_sequential_loss_event_for_event() {
        let sentence: Vec<String> = ["the", "cat", "sat", "on", "the", "mat"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let vocab = build_vocab(&[sentence.join(" ")], &[], 1).unwrap();
        let mut config = LmConfig::new(vocab.len());
        config.embed_dim = 4;
        config.hidden_dim = 6;
        config.layers = 2;
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let params = init_lm_params(&config, &mut rng).unwrap();

        let mut seq_tape = Tape::new();
        let wrapped_ids = vocab.wrapped_ids(&sentence);
        let seq = seq_lm_loss(&mut seq_tape, &params, &config, &wrapped_ids).unwrap();

        let lattice = Lattice::from_tokens("chain", &sentence).unwrap();
        let mut lat_tape = Tape::new();
        let lat = lattice_lm_loss(&mut lat_tape, &params, &config, &lattice, &vocab).unwrap();

        assert_eq!(seq.forward_events.len(), lat.forward_events.len());
        for (&s, &l) in seq.forward_events.iter().zip(&lat.forward_events) {
            let (sv, lv) = (seq_tape.value(s).item(), lat_tape.value(l).item());
            assert!((sv - lv).abs() < 1e-12, "forward event {sv} vs {lv}");
        }
        for (&s, &l) in seq.backward_events.iter().zip(&lat.backward_events) {
            let (sv, lv) = (seq_tape.value(s).item(), lat_tape.value(l).item());
            assert!((sv - lv).abs() < 1e-12, "backward event {sv} vs {lv}");
        }
        let (sv, lv) = (
            seq_tape.value(seq.loss).item(),
            lat_tape.value(lat.loss).item(),
        );
        assert!((sv - lv).abs() < 1e-12, "loss {sv} vs {lv}");
    }

    #[test]
    fn chain_gradients_match_sequential_gradients() {
        let sentence: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let vocab = build_vocab(&[sentence.join(" ")], &[], 1).unwrap();
        let mut config = LmConfig::new(vocab.len());
        config.embed_dim = 4;
        config.hidden_dim = 4;
        config.layers = 1;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let params = init_lm_params(&config, &mut rng).unwrap();

        let mut seq_tape = Tape::new();
        let seq = seq_lm_loss(&mut seq_tape, &params, &config, &vocab.wrapped_ids(&sentence)).unwrap();
        let seq_grads = seq_tape.backward(seq.loss).unwrap();

        let lattice = Lattice::from_tokens("chain", &sentence).unwrap();
        let mut lat_tape = Tape::new();
        let lat = lattice_lm_loss(&mut lat_tape, &params, &config, &lattice, &vocab).unwrap();
        let lat_grads = lat_tape.backward(lat.loss).unwrap();

        assert_eq!(seq_grads.len(), lat_grads.len());
        for (name, sg) in &seq_grads {
            let lg = &lat_grads[name];
            assert_eq!(sg.shape(), lg.shape());
            for (a, b) in sg.data().iter().zip(lg.data()) {
                assert!((a - b).abs() < 1e-12, "{name}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_on_a_branching_lattice() {
        let lattice = Lattice::new(
            "y",
            3,
            vec![
                Transition::new(0, 1, "see", 0.6),
                Transition::new(0, 1, "sea", 0.4),
                Transition::new(1, 2, "shore", 1.0),
            ],
        );
        let vocab = build_vocab(&["see sea shore"], &[], 1).unwrap();
        let mut config = LmConfig::new(vocab.len());
        config.embed_dim = 4;
        config.hidden_dim = 4;
        config.layers = 1;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let params = init_lm_params(&config, &mut rng).unwrap();
        let mut tape = Tape::new();
        let out = lattice_lm_loss(&mut tape, &params, &config, &lattice, &vocab).unwrap();
        assert!(tape.value(out.loss).item() >= 0.0);
        // One predicting node per non-end node of the wrapped lattice.
        assert_eq!(out.forward_events.len(), 4);
        assert_eq!(out.backward_events.len(), 4);
    }
}
