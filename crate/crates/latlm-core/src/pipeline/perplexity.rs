//! Perplexity of a language model over an evaluation set.

use crate::data::Vocabulary;
use crate::lattice::Lattice;
use crate::model::{decode_next, lattice_lstm_forward, load_decoder, seq_lm_loss, LmConfig};
use crate::numerics::{cross_entropy, ParamSet, Tape};

use super::objective::ground_truth_next_distribution;
use super::PipelineError;

/// `exp` of the mean per-event cross-entropy, per direction and combined.
#[derive(Debug, Clone, Copy)]
pub struct PerplexityReport {
    pub forward: f64,
    pub backward: f64,
    /// Equal-weight combination of the direction means, i.e. the geometric
    /// mean of the two per-direction perplexities.
    pub combined: f64,
    /// Prediction events per direction across the whole set.
    pub events: usize,
}

fn report(fwd_sum: f64, bwd_sum: f64, events: usize) -> PerplexityReport {
    let fwd_mean = fwd_sum / events as f64;
    let bwd_mean = bwd_sum / events as f64;
    PerplexityReport {
        forward: fwd_mean.exp(),
        backward: bwd_mean.exp(),
        combined: (0.5 * (fwd_mean + bwd_mean)).exp(),
        events,
    }
}

/// Perplexity of the lattice LM over `lattices`: every node except the end
/// node of each direction contributes one cross-entropy term between the
/// decoder's softmax and that node's ground-truth next-word distribution.
/// On one-hot chains this is ordinary language-model perplexity.
pub fn lattice_perplexity(
    params: &ParamSet,
    config: &LmConfig,
    lattices: &[Lattice],
    vocab: &Vocabulary,
) -> Result<PerplexityReport, PipelineError> {
    if lattices.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    let mut fwd_sum = 0.0;
    let mut bwd_sum = 0.0;
    let mut events = 0usize;
    for lattice in lattices {
        let mut tape = Tape::new();
        let wrapped = lattice.normalized()?.with_sentinels()?;
        let word_ids: Vec<usize> = wrapped
            .transitions
            .iter()
            .map(|t| vocab.id(&t.word))
            .collect();
        let states = lattice_lstm_forward(&mut tape, params, config, &wrapped, &word_ids)?;
        let decoder = load_decoder(&mut tape, params, config)?;
        for (lat, dir, sum) in [
            (&wrapped, &states.forward, &mut fwd_sum),
            (&states.reversed, &states.backward, &mut bwd_sum),
        ] {
            let adj = lat.adjacency()?;
            let end = adj.end()?;
            for &node in &lat.topological_order()? {
                if node == end {
                    continue;
                }
                let target = ground_truth_next_distribution(lat, &adj, node, vocab)?;
                let logits = decode_next(&mut tape, &decoder, dir.top_node_h(node))?;
                *sum += cross_entropy(&target, tape.value(logits).data())?;
            }
        }
        events += wrapped.num_nodes - 1;
    }
    Ok(report(fwd_sum, bwd_sum, events))
}

/// Perplexity of the sequential LM over sentinel-wrapped id sequences.
/// Aggregates exactly like [`lattice_perplexity`], so on linear chains the
/// two agree to rounding.
pub fn sequential_perplexity(
    params: &ParamSet,
    config: &LmConfig,
    sentences: &[Vec<usize>],
) -> Result<PerplexityReport, PipelineError> {
    if sentences.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    let mut fwd_sum = 0.0;
    let mut bwd_sum = 0.0;
    let mut events = 0usize;
    for wrapped_ids in sentences {
        let mut tape = Tape::new();
        let out = seq_lm_loss(&mut tape, params, config, wrapped_ids)?;
        // Targets are one-hot, so each KL term already equals the
        // cross-entropy of the event.
        for &e in &out.forward_events {
            fwd_sum += tape.value(e).item();
        }
        for &e in &out.backward_events {
            bwd_sum += tape.value(e).item();
        }
        events += out.forward_events.len();
    }
    Ok(report(fwd_sum, bwd_sum, events))
}
