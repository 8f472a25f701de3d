//! Stage training loops: sequential LM pre-training, lattice LM
//! fine-tuning, frozen-LM classifier training, and classifier evaluation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::Vocabulary;
use crate::lattice::Lattice;
use crate::model::{
    classifier_forward, init_classifier_params, init_lm_params, init_mix_params,
    lattice_lstm_forward, scalar_mix, seq_lm_loss, transfer_weights, ClassifierConfig, LmConfig,
    ModelError,
};
use crate::numerics::{adam_step, AdamState, Distribution, NumericsError, ParamSet, Tape, Tensor, Var};

use super::checkpoint::{Checkpoint, Stage};
use super::objective::lattice_lm_loss;
use super::perplexity::{lattice_perplexity, sequential_perplexity};
use super::PipelineError;

/// Knobs shared by every training stage. Gradients are averaged over
/// batches of `batch_size` examples before each optimizer step; training
/// stops after `patience` consecutive epochs without validation improvement.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
}

impl TrainConfig {
    /// Defaults for both LM pre-training stages.
    pub fn lm_defaults() -> TrainConfig {
        TrainConfig {
            lr: 1e-4,
            epochs: 10,
            batch_size: 16,
            seed: 42,
            patience: 5,
        }
    }

    /// Defaults for classifier training.
    pub fn classifier_defaults() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            epochs: 20,
            batch_size: 16,
            seed: 42,
            patience: 5,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |message: &str| PipelineError::BadTrainConfig {
            message: message.to_string(),
        };
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(bad("learning rate must be positive and finite"));
        }
        if self.epochs == 0 {
            return Err(bad("need at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-example training loss over the epoch, in tape order.
    pub train_loss: f64,
    /// Validation perplexity (LM stages) or validation accuracy
    /// (classifier stage), measured after the epoch's updates.
    pub valid_metric: f64,
}

/// Per-epoch trace of one stage. Epoch 0 is the untrained (or transferred)
/// initialization, recorded in `initial_metric`; the best checkpoint can be
/// that initialization if no epoch improves on it.
#[derive(Debug, Clone)]
pub struct TrainLog {
    pub initial_metric: f64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// One classification example: a lattice and its gold label.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub lattice: Lattice,
    pub label: String,
}

/// Gradient accumulator: averages `batch_size` per-example gradients, then
/// takes one optimizer step. `frozen` names are skipped entirely, so their
/// accumulated gradient stays zero and the optimizer update is exactly
/// `lr * 0 / (sqrt(0) + eps) = 0` — frozen tensors never move, bit for bit.
struct Batcher {
    adam: AdamState,
    batch_size: usize,
    pending: usize,
}

impl Batcher {
    fn new(tc: &TrainConfig) -> Batcher {
        Batcher {
            adam: AdamState::new(tc.lr),
            batch_size: tc.batch_size,
            pending: 0,
        }
    }

    fn accumulate(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, Tensor>,
        frozen: Option<&BTreeSet<String>>,
    ) -> Result<(), PipelineError> {
        for (name, grad) in grads {
            if frozen.is_some_and(|f| f.contains(name)) {
                continue;
            }
            params.accumulate_grad(name, grad)?;
        }
        self.pending += 1;
        if self.pending == self.batch_size {
            self.step(params)?;
        }
        Ok(())
    }

    /// Flushes a partial batch (used at epoch end).
    fn step(&mut self, params: &mut ParamSet) -> Result<(), PipelineError> {
        if self.pending == 0 {
            return Ok(());
        }
        params.scale_grads(1.0 / self.pending as f64);
        adam_step(&mut self.adam, params)?;
        self.pending = 0;
        Ok(())
    }
}

/// Tracks the best validation metric and a copy of the parameters that
/// achieved it. `observe` returns false once `patience` consecutive
/// non-improving epochs have passed.
struct BestTracker {
    lower_is_better: bool,
    patience: usize,
    best_metric: f64,
    best_epoch: usize,
    best_params: ParamSet,
    stale: usize,
}

impl BestTracker {
    fn new(initial_metric: f64, params: &ParamSet, lower_is_better: bool, patience: usize) -> BestTracker {
        BestTracker {
            lower_is_better,
            patience,
            best_metric: initial_metric,
            best_epoch: 0,
            best_params: params.clone(),
            stale: 0,
        }
    }

    fn observe(&mut self, epoch: usize, metric: f64, params: &ParamSet) -> bool {
        let improved = if self.lower_is_better {
            metric < self.best_metric
        } else {
            metric > self.best_metric
        };
        if improved {
            self.best_metric = metric;
            self.best_epoch = epoch;
            self.best_params = params.clone();
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved || self.stale < self.patience
    }
}

fn is_non_finite(err: &PipelineError) -> bool {
    let numeric = |e: &NumericsError| {
        matches!(
            e,
            NumericsError::NonFinite { .. } | NumericsError::NonFiniteGradient { .. }
        )
    };
    match err {
        PipelineError::Numerics(e) => numeric(e),
        PipelineError::Model(ModelError::Numerics(e)) => numeric(e),
        _ => false,
    }
}

/// Rewraps divergence errors with the epoch and offending example.
fn guard<T>(res: Result<T, PipelineError>, epoch: usize, item: &str) -> Result<T, PipelineError> {
    res.map_err(|err| {
        if is_non_finite(&err) {
            PipelineError::NonFiniteLoss {
                epoch,
                item: item.to_string(),
                detail: err.to_string(),
            }
        } else {
            err
        }
    })
}

/// Stage 1: trains a randomly initialized bidirectional LM on plain text.
/// `train` and `valid` are token sequences (without sentinels); the metric
/// is validation perplexity and the best-scoring parameters are returned as
/// a `seq-lm` checkpoint.
pub fn pretrain_stage1(
    train: &[Vec<String>],
    valid: &[Vec<String>],
    vocab: &Vocabulary,
    config: &LmConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    tc.validate()?;
    config.validate()?;
    if vocab.len() != config.vocab_size {
        return Err(PipelineError::BadTrainConfig {
            message: format!(
                "vocabulary has {} ids but config.vocab_size is {}",
                vocab.len(),
                config.vocab_size
            ),
        });
    }
    if train.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    if valid.is_empty() {
        return Err(PipelineError::EmptyValidation);
    }
    let train_ids: Vec<Vec<usize>> = train.iter().map(|s| vocab.wrapped_ids(s)).collect();
    let valid_ids: Vec<Vec<usize>> = valid.iter().map(|s| vocab.wrapped_ids(s)).collect();

    let mut rng = ChaCha20Rng::seed_from_u64(tc.seed);
    let mut params = init_lm_params(config, &mut rng)?;
    let initial = sequential_perplexity(&params, config, &valid_ids)?.combined;
    let mut tracker = BestTracker::new(initial, &params, true, tc.patience);
    let mut batcher = Batcher::new(tc);
    let mut epochs = Vec::new();

    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..train_ids.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let result: Result<(f64, BTreeMap<String, Tensor>), PipelineError> = (|| {
                let mut tape = Tape::new();
                let out = seq_lm_loss(&mut tape, &params, config, &train_ids[idx])?;
                let loss = tape.value(out.loss).item();
                let grads = tape.backward(out.loss)?;
                Ok((loss, grads))
            })();
            let (loss, grads) = guard(result, epoch, &format!("sentence {idx}"))?;
            loss_sum += loss;
            batcher.accumulate(&mut params, &grads, None)?;
        }
        batcher.step(&mut params)?;
        let metric = sequential_perplexity(&params, config, &valid_ids)?.combined;
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_ids.len() as f64,
            valid_metric: metric,
        });
        if !tracker.observe(epoch, metric, &params) {
            break;
        }
    }

    let checkpoint = Checkpoint::seq_lm(config, tc.seed, vocab.clone(), tracker.best_params)?;
    Ok(TrainOutcome {
        checkpoint,
        log: TrainLog {
            initial_metric: initial,
            epochs,
            best_epoch: tracker.best_epoch,
            best_metric: tracker.best_metric,
        },
    })
}

/// Stage 2: fine-tunes a stage-1 checkpoint on lattices. Weights transfer
/// unchanged (the two forms share parameter names), so on linear-chain
/// lattices the initial validation metric continues stage 1 exactly. The
/// metric is lattice perplexity; returns a `lattice-lm` checkpoint.
pub fn pretrain_stage2(
    train: &[Lattice],
    valid: &[Lattice],
    stage1: &Checkpoint,
    tc: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    tc.validate()?;
    stage1.require_stage(Stage::SeqLm)?;
    if train.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    if valid.is_empty() {
        return Err(PipelineError::EmptyValidation);
    }
    let config = stage1.lm_config()?;
    let vocab = &stage1.vocab;
    let mut params = transfer_weights(&stage1.params, &config)?;

    let mut rng = ChaCha20Rng::seed_from_u64(tc.seed);
    let initial = lattice_perplexity(&params, &config, valid, vocab)?.combined;
    let mut tracker = BestTracker::new(initial, &params, true, tc.patience);
    let mut batcher = Batcher::new(tc);
    let mut epochs = Vec::new();

    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let lattice = &train[idx];
            let result: Result<(f64, BTreeMap<String, Tensor>), PipelineError> = (|| {
                let mut tape = Tape::new();
                let out = lattice_lm_loss(&mut tape, &params, &config, lattice, vocab)?;
                let loss = tape.value(out.loss).item();
                let grads = tape.backward(out.loss)?;
                Ok((loss, grads))
            })();
            let (loss, grads) = guard(result, epoch, &format!("lattice {}", lattice.id))?;
            loss_sum += loss;
            batcher.accumulate(&mut params, &grads, None)?;
        }
        batcher.step(&mut params)?;
        let metric = lattice_perplexity(&params, &config, valid, vocab)?.combined;
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_metric: metric,
        });
        if !tracker.observe(epoch, metric, &params) {
            break;
        }
    }

    let checkpoint = Checkpoint::lattice_lm(&config, tc.seed, vocab.clone(), tracker.best_params)?;
    Ok(TrainOutcome {
        checkpoint,
        log: TrainLog {
            initial_metric: initial,
            epochs,
            best_epoch: tracker.best_epoch,
            best_metric: tracker.best_metric,
        },
    })
}

/// Classifier configuration whose input width matches the LM's mixed node
/// vectors.
pub fn classifier_config_for(
    lm: &LmConfig,
    labels: usize,
    hidden_dim: usize,
    layers: usize,
    dropout: f64,
) -> ClassifierConfig {
    ClassifierConfig {
        input_dim: lm.mix_width(),
        hidden_dim,
        layers,
        labels,
        dropout,
    }
}

/// Runs the frozen LM, mixes its layers into per-node vectors, optionally
/// applies inverted dropout to them (training only), and returns the
/// classifier's label logits.
fn classify_logits(
    tape: &mut Tape,
    params: &ParamSet,
    lm_config: &LmConfig,
    clf_config: &ClassifierConfig,
    vocab: &Vocabulary,
    lattice: &Lattice,
    dropout_rng: Option<&mut ChaCha20Rng>,
) -> Result<Var, PipelineError> {
    let wrapped = lattice.normalized()?.with_sentinels()?;
    let word_ids: Vec<usize> = wrapped
        .transitions
        .iter()
        .map(|t| vocab.id(&t.word))
        .collect();
    let states = lattice_lstm_forward(tape, params, lm_config, &wrapped, &word_ids)?;
    let mut node_vectors = scalar_mix(tape, params, lm_config, &wrapped, &states)?;
    if let Some(rng) = dropout_rng {
        let p = clf_config.dropout;
        if p > 0.0 {
            let keep_scale = 1.0 / (1.0 - p);
            for slot in node_vectors.iter_mut() {
                if let Some(v) = slot.take() {
                    let mask: Vec<f64> = (0..clf_config.input_dim)
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
                        .collect();
                    let mask = tape.constant(Tensor::vector(mask));
                    *slot = Some(tape.mul(v, mask)?);
                }
            }
        }
    }
    Ok(classifier_forward(tape, params, clf_config, &wrapped, &node_vectors)?)
}

/// First index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn split_accuracy(
    params: &ParamSet,
    lm_config: &LmConfig,
    clf_config: &ClassifierConfig,
    vocab: &Vocabulary,
    examples: &[(usize, &Lattice)],
) -> Result<f64, PipelineError> {
    let mut correct = 0usize;
    for &(gold, lattice) in examples {
        let mut tape = Tape::new();
        let logits = classify_logits(&mut tape, params, lm_config, clf_config, vocab, lattice, None)?;
        if argmax(tape.value(logits).data()) == gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Stage 3: trains the scalar mix and classifier head on top of a frozen
/// lattice LM. The label inventory is the sorted set of training labels
/// (validation labels must be covered); the metric is validation accuracy.
/// The LM parameters are verified bit-identical before and after training
/// and shipped inside the returned `classifier` checkpoint.
pub fn train_classifier(
    train: &[LabeledExample],
    valid: &[LabeledExample],
    lm: &Checkpoint,
    clf_config: &ClassifierConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    tc.validate()?;
    lm.require_stage(Stage::LatticeLm)?;
    if train.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    if valid.is_empty() {
        return Err(PipelineError::EmptyValidation);
    }
    let lm_config = lm.lm_config()?;
    let vocab = &lm.vocab;
    if clf_config.input_dim != lm_config.mix_width() {
        return Err(PipelineError::BadTrainConfig {
            message: format!(
                "classifier input_dim {} does not match the LM's mixed width {}",
                clf_config.input_dim,
                lm_config.mix_width()
            ),
        });
    }
    clf_config.validate()?;

    let label_set: BTreeSet<&str> = train.iter().map(|e| e.label.as_str()).collect();
    let labels: Vec<String> = label_set.iter().map(|s| s.to_string()).collect();
    if clf_config.labels != labels.len() {
        return Err(PipelineError::LabelCountMismatch {
            expected: clf_config.labels,
            got: labels.len(),
        });
    }
    let label_id = |label: &str| -> Result<usize, PipelineError> {
        labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| PipelineError::UnknownLabel {
                label: label.to_string(),
            })
    };
    let train_ref: Vec<(usize, &Lattice)> = train
        .iter()
        .map(|e| Ok((label_id(&e.label)?, &e.lattice)))
        .collect::<Result<_, PipelineError>>()?;
    let valid_ref: Vec<(usize, &Lattice)> = valid
        .iter()
        .map(|e| Ok((label_id(&e.label)?, &e.lattice)))
        .collect::<Result<_, PipelineError>>()?;

    // One parameter set: frozen LM weights plus trainable mix + classifier.
    let frozen: BTreeSet<String> = lm.params.names().map(String::from).collect();
    let lm_checksums = lm.params.bit_checksums();
    let mut rng = ChaCha20Rng::seed_from_u64(tc.seed);
    let mut params = lm.params.clone();
    init_mix_params(&mut params, lm_config.layers)?;
    init_classifier_params(&mut params, clf_config, &mut rng)?;

    let initial = split_accuracy(&params, &lm_config, clf_config, vocab, &valid_ref)?;
    let mut tracker = BestTracker::new(initial, &params, false, tc.patience);
    let mut batcher = Batcher::new(tc);
    let mut epochs = Vec::new();

    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..train_ref.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let (gold, lattice) = train_ref[idx];
            let result: Result<(f64, BTreeMap<String, Tensor>), PipelineError> = (|| {
                let mut tape = Tape::new();
                let logits = classify_logits(
                    &mut tape,
                    &params,
                    &lm_config,
                    clf_config,
                    vocab,
                    lattice,
                    Some(&mut rng),
                )?;
                let loss = tape.kl_from_logits(logits, Distribution::one_hot(gold))?;
                let value = tape.value(loss).item();
                let grads = tape.backward(loss)?;
                Ok((value, grads))
            })();
            let (loss, grads) = guard(result, epoch, &format!("lattice {}", lattice.id))?;
            loss_sum += loss;
            batcher.accumulate(&mut params, &grads, Some(&frozen))?;
        }
        batcher.step(&mut params)?;
        let metric = split_accuracy(&params, &lm_config, clf_config, vocab, &valid_ref)?;
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_ref.len() as f64,
            valid_metric: metric,
        });
        if !tracker.observe(epoch, metric, &params) {
            break;
        }
    }

    // The freeze is structural (frozen gradients are never accumulated),
    // but verify it anyway: a changed LM weight here is a hard bug.
    for candidate in [&params, &tracker.best_params] {
        for (name, expected) in &lm_checksums {
            let tensor = candidate.get(name)?;
            if tensor.bit_checksum() != *expected {
                return Err(PipelineError::FrozenParamChanged { name: name.clone() });
            }
        }
    }

    let checkpoint = Checkpoint::classifier(
        &lm_config,
        clf_config,
        &labels,
        tc.seed,
        vocab.clone(),
        tracker.best_params,
    )?;
    Ok(TrainOutcome {
        checkpoint,
        log: TrainLog {
            initial_metric: initial,
            epochs,
            best_epoch: tracker.best_epoch,
            best_metric: tracker.best_metric,
        },
    })
}

/// Classifier evaluation: accuracy, a gold-by-predicted confusion matrix,
/// and per-example predictions in input order.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Label inventory, index = label id (row/column order of `confusion`).
    pub labels: Vec<String>,
    /// `confusion[gold][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// `(lattice id, gold label id, predicted label id)` per example.
    pub predictions: Vec<(String, usize, usize)>,
}

pub fn evaluate(clf: &Checkpoint, examples: &[LabeledExample]) -> Result<Evaluation, PipelineError> {
    clf.require_stage(Stage::Classifier)?;
    if examples.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    let lm_config = clf.lm_config()?;
    let clf_config = clf.classifier_config()?;
    let labels = clf.labels()?;
    let vocab = &clf.vocab;

    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    let mut predictions = Vec::with_capacity(examples.len());
    let mut correct = 0usize;
    for example in examples {
        let gold = labels
            .iter()
            .position(|l| *l == example.label)
            .ok_or_else(|| PipelineError::UnknownLabel {
                label: example.label.clone(),
            })?;
        let mut tape = Tape::new();
        let logits = classify_logits(
            &mut tape,
            &clf.params,
            &lm_config,
            &clf_config,
            vocab,
            &example.lattice,
            None,
        )?;
        let predicted = argmax(tape.value(logits).data());
        confusion[gold][predicted] += 1;
        if predicted == gold {
            correct += 1;
        }
        predictions.push((example.lattice.id.clone(), gold, predicted));
    }
    Ok(Evaluation {
        accuracy: correct as f64 / examples.len() as f64,
        labels,
        confusion,
        predictions,
    })
}
