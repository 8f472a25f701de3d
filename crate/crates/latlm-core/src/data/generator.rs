//! Seeded synthetic confusion lattices standing in for a speech recognizer.
//!
//! A clean sentence becomes a lattice by, per token position, either keeping
//! the single true edge or fanning out into `branches` parallel hypotheses
//! (the true word plus confusable tokens) with Dirichlet-drawn weights, plus
//! occasional skip edges that delete a word. The topology family (parallel
//! substitutions + skip edges) is a deliberate approximation of recognizer
//! output, not a model of one.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution as SampleFrom, Gamma};

use super::DataError;
use crate::lattice::{Lattice, Transition};

/// Per-position corruption model. `pool` is the token inventory confusables
/// are drawn from; edit-distance-1 neighbors of the true word are preferred,
/// random pool tokens fill the remaining branches.
#[derive(Debug, Clone)]
pub struct ConfusionModel {
    pub substitution_rate: f64,
    pub branches: usize,
    pub deletion_rate: f64,
    pub concentration: f64,
    pub pool: Vec<String>,
}

impl ConfusionModel {
    /// Defaults: substitute 40% of positions into 3-way confusions with a
    /// flat Dirichlet, delete 10% of deletable positions.
    pub fn new(pool: Vec<String>) -> ConfusionModel {
        ConfusionModel {
            substitution_rate: 0.4,
            branches: 3,
            deletion_rate: 0.1,
            concentration: 1.0,
            pool,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (field, value) in [
            ("substitution_rate", self.substitution_rate),
            ("deletion_rate", self.deletion_rate),
        ] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(DataError::RateOutOfRange { field, value });
            }
        }
        if self.branches < 2 {
            return Err(DataError::BadBranchFactor { got: self.branches });
        }
        if !self.concentration.is_finite() || self.concentration <= 0.0 {
            return Err(DataError::BadConcentration { got: self.concentration });
        }
        if self.substitution_rate > 0.0 {
            let distinct: HashSet<&str> = self.pool.iter().map(|s| s.as_str()).collect();
            // worst case the true word sits in the pool and is unusable
            if distinct.len().saturating_sub(1) < self.branches - 1 {
                return Err(DataError::PoolTooSmall {
                    needed: self.branches - 1,
                    available: distinct.len().saturating_sub(1),
                });
            }
        }
        Ok(())
    }
}

/// True iff the words differ by exactly one character edit.
fn edit_distance_is_one(a: &str, b: &str) -> bool {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    match long.len() - short.len() {
        0 => short.iter().zip(long.iter()).filter(|(x, y)| x != y).count() == 1,
        1 => {
            let mut i = 0;
            while i < short.len() && short[i] == long[i] {
                i += 1;
            }
            short[i..] == long[i + 1..]
        }
        _ => false,
    }
}

/// Picks `branches - 1` distinct tokens ≠ `word`: all (or a random subset
/// of) edit-distance-1 neighbors first, then uniform draws from the rest of
/// the pool.
fn confusables<R: Rng>(
    word: &str,
    model: &ConfusionModel,
    rng: &mut R,
) -> Result<Vec<String>, DataError> {
    let need = model.branches - 1;
    let mut seen = HashSet::new();
    let mut neighbors: Vec<&str> = Vec::new();
    let mut others: Vec<&str> = Vec::new();
    for token in &model.pool {
        let token = token.as_str();
        if token == word || !seen.insert(token) {
            continue;
        }
        if edit_distance_is_one(word, token) {
            neighbors.push(token);
        } else {
            others.push(token);
        }
    }
    if neighbors.len() + others.len() < need {
        return Err(DataError::PoolTooSmall {
            needed: need,
            available: neighbors.len() + others.len(),
        });
    }
    let mut out: Vec<String> = Vec::with_capacity(need);
    if neighbors.len() <= need {
        out.extend(neighbors.iter().map(|s| s.to_string()));
    } else {
        let picks = rand::seq::index::sample(rng, neighbors.len(), need);
        out.extend(picks.iter().map(|i| neighbors[i].to_string()));
    }
    while out.len() < need {
        let idx = rng.random_range(0..others.len());
        out.push(others.swap_remove(idx).to_string());
    }
    Ok(out)
}

#[derive(Debug, Default, Clone, Copy)]
struct CorruptionStats {
    positions: usize,
    substitutions: usize,
    deletion_slots: usize,
    deletions: usize,
}

fn generate_with_stats<S: AsRef<str>, R: Rng>(
    id: &str,
    sentence: &[S],
    model: &ConfusionModel,
    rng: &mut R,
    stats: &mut CorruptionStats,
) -> Result<Lattice, DataError> {
    if sentence.is_empty() {
        return Err(DataError::EmptySentence);
    }
    model.validate()?;
    let len = sentence.len();
    let mut transitions = Vec::with_capacity(len);
    for (i, token) in sentence.iter().enumerate() {
        let word = token.as_ref();
        stats.positions += 1;
        let block_start = transitions.len();
        if model.substitution_rate > 0.0 && rng.random::<f64>() < model.substitution_rate {
            stats.substitutions += 1;
            let alts = confusables(word, model, rng)?;
            let gamma = Gamma::new(model.concentration, 1.0).expect("positive shape");
            let mut weights: Vec<f64> =
                (0..model.branches).map(|_| gamma.sample(rng).max(1e-9)).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            // slot 0 goes to the true word, but nothing orders the draws, so
            // the true word is not guaranteed to be the most probable branch
            transitions.push(Transition::new(i, i + 1, word, weights[0]));
            for (alt, &w) in alts.iter().zip(&weights[1..]) {
                transitions.push(Transition::new(i, i + 1, alt.as_str(), w));
            }
        } else {
            transitions.push(Transition::new(i, i + 1, word, 1.0));
        }
        if i + 2 <= len
            && model.deletion_rate > 0.0
            && rng.random::<f64>() < model.deletion_rate
        {
            stats.deletions += 1;
            // skip edge deletes this word: it consumes the following word
            // while bridging straight past both positions' alternatives
            for t in &mut transitions[block_start..] {
                t.prob *= 1.0 - model.deletion_rate;
            }
            transitions.push(Transition::new(
                i,
                i + 2,
                sentence[i + 1].as_ref(),
                model.deletion_rate,
            ));
        }
        if i + 2 <= len {
            stats.deletion_slots += 1;
        }
    }
    Ok(Lattice::new(id, len + 1, transitions).normalized()?)
}

/// Corrupts one sentence into a lattice. The result is a pure function of
/// `(sentence, model, rng state)`, validates, and is already normalized.
pub fn generate_confusion_lattice<S: AsRef<str>, R: Rng>(
    id: &str,
    sentence: &[S],
    model: &ConfusionModel,
    rng: &mut R,
) -> Result<Lattice, DataError> {
    let mut stats = CorruptionStats::default();
    generate_with_stats(id, sentence, model, rng, &mut stats)
}

/// One intent-style label. A clean sentence picks one token per slot, so the
/// pool of distinct sentences is the product of the slot sizes.
#[derive(Debug, Clone)]
pub struct LabelTemplate {
    pub label: String,
    pub slots: Vec<Vec<String>>,
}

const MAX_TEMPLATE_POOL: usize = 1 << 20;

impl LabelTemplate {
    pub fn new(label: impl Into<String>) -> LabelTemplate {
        LabelTemplate { label: label.into(), slots: Vec::new() }
    }

    pub fn slot<S: AsRef<str>>(mut self, options: &[S]) -> LabelTemplate {
        self.slots.push(options.iter().map(|s| s.as_ref().to_string()).collect());
        self
    }

    fn pool_size(&self) -> Result<usize, DataError> {
        if self.slots.is_empty() || self.slots.iter().any(|s| s.is_empty()) {
            return Err(DataError::EmptySlot { label: self.label.clone() });
        }
        let mut size: usize = 1;
        for slot in &self.slots {
            size = size
                .checked_mul(slot.len())
                .filter(|&z| z <= MAX_TEMPLATE_POOL)
                .ok_or_else(|| DataError::TemplatePoolTooLarge {
                    label: self.label.clone(),
                    limit: MAX_TEMPLATE_POOL,
                })?;
        }
        Ok(size)
    }

    /// All sentences in odometer order (last slot varies fastest).
    fn enumerate(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new()];
        for slot in &self.slots {
            let mut grown = Vec::with_capacity(out.len() * slot.len());
            for prefix in &out {
                for option in slot {
                    let mut sentence = prefix.clone();
                    sentence.push(option.clone());
                    grown.push(sentence);
                }
            }
            out = grown;
        }
        out
    }
}

/// Per-label example counts for the three splits.
#[derive(Debug, Clone, Copy)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, valid: usize, test: usize) -> SplitSizes {
        SplitSizes { train, valid, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

/// One labeled item: the clean sentence, its confusion lattice, and the
/// lattice's most probable transcript.
#[derive(Debug, Clone)]
pub struct Example {
    pub clean: Vec<String>,
    pub lattice: Lattice,
    pub one_best: Vec<String>,
    pub label: String,
}

/// A generated classification dataset plus its provenance manifest.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
    pub manifest: Vec<(String, String)>,
}

impl SyntheticTask {
    pub fn splits(&self) -> [(&str, &[Example]); 3] {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
    }
}

fn build_split<R: Rng>(
    name: &str,
    mut rows: Vec<(Vec<String>, String)>,
    model: &ConfusionModel,
    rng: &mut R,
    stats: &mut CorruptionStats,
) -> Result<Vec<Example>, DataError> {
    rows.shuffle(rng);
    rows.into_iter()
        .enumerate()
        .map(|(idx, (clean, label))| {
            let id = format!("{name}-{idx:04}");
            let lattice = generate_with_stats(&id, &clean, model, rng, stats)?;
            let one_best = lattice.one_best_path()?;
            Ok(Example { clean, lattice, one_best, label })
        })
        .collect()
}

/// Samples disjoint clean sentences per label, corrupts each into a lattice,
/// and reports achieved corruption statistics in the manifest. The dataset
/// is a pure function of `(templates, sizes, model, seed)`.
pub fn make_synthetic_task(
    templates: &[LabelTemplate],
    sizes: SplitSizes,
    model: &ConfusionModel,
    seed: u64,
) -> Result<SyntheticTask, DataError> {
    if templates.len() < 2 {
        return Err(DataError::TooFewLabels { got: templates.len() });
    }
    model.validate()?;
    let need = sizes.total();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut owner: HashMap<String, String> = HashMap::new();
    let mut pending: [Vec<(Vec<String>, String)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for template in templates {
        let available = template.pool_size()?;
        if available < need {
            return Err(DataError::TemplatePoolTooSmall {
                label: template.label.clone(),
                needed: need,
                available,
            });
        }
        let mut pool = template.enumerate();
        pool.shuffle(&mut rng);
        pool.truncate(need);
        for sentence in &pool {
            let joined = sentence.join(" ");
            if let Some(first) = owner.insert(joined.clone(), template.label.clone()) {
                return Err(DataError::AmbiguousSentence {
                    sentence: joined,
                    first,
                    second: template.label.clone(),
                });
            }
        }
        let mut taken = pool.into_iter();
        for (split, count) in pending.iter_mut().zip([sizes.train, sizes.valid, sizes.test]) {
            split.extend(taken.by_ref().take(count).map(|s| (s, template.label.clone())));
        }
    }

    let [train_rows, valid_rows, test_rows] = pending;
    let mut stats = CorruptionStats::default();
    let train = build_split("train", train_rows, model, &mut rng, &mut stats)?;
    let valid = build_split("valid", valid_rows, model, &mut rng, &mut stats)?;
    let test = build_split("test", test_rows, model, &mut rng, &mut stats)?;

    let mut ref_tokens = 0usize;
    let mut one_best_edits = 0usize;
    let mut oracle_edits = 0usize;
    for example in train.iter().chain(&valid).chain(&test) {
        ref_tokens += example.clean.len();
        one_best_edits += levenshtein(&example.one_best, &example.clean);
        oracle_edits += oracle_edit_distance(&example.lattice, &example.clean)?;
    }

    let ratio = |num: usize, den: usize| {
        if den == 0 { 0.0 } else { num as f64 / den as f64 }
    };
    let manifest = vec![
        ("seed".to_string(), seed.to_string()),
        ("rng".to_string(), "chacha20".to_string()),
        ("labels".to_string(), templates.len().to_string()),
        ("train_per_label".to_string(), sizes.train.to_string()),
        ("valid_per_label".to_string(), sizes.valid.to_string()),
        ("test_per_label".to_string(), sizes.test.to_string()),
        ("substitution_rate".to_string(), model.substitution_rate.to_string()),
        ("branches".to_string(), model.branches.to_string()),
        ("deletion_rate".to_string(), model.deletion_rate.to_string()),
        ("concentration".to_string(), model.concentration.to_string()),
        ("token_positions".to_string(), stats.positions.to_string()),
        (
            "achieved_substitution_rate".to_string(),
            format!("{:.6}", ratio(stats.substitutions, stats.positions)),
        ),
        (
            "achieved_deletion_rate".to_string(),
            format!("{:.6}", ratio(stats.deletions, stats.deletion_slots)),
        ),
        ("one_best_wer".to_string(), format!("{:.6}", ratio(one_best_edits, ref_tokens))),
        ("oracle_wer".to_string(), format!("{:.6}", ratio(oracle_edits, ref_tokens))),
    ];

    Ok(SyntheticTask { train, valid, test, manifest })
}

/// Five intent-style labels over a shared carrier vocabulary. Only the
/// keyword slot separates the labels, so corrupting it is exactly what makes
/// lattice-aware classification pay off. Pool per label: 4·3·4·2·8·4 = 3072
/// distinct sentences.
pub fn default_templates() -> Vec<LabelTemplate> {
    let openers = ["please", "now", "just", "hey"];
    let verbs = ["set", "get", "make"];
    let preps = ["for", "in"];
    let objects =
        ["kitchen", "bedroom", "office", "monday", "evening", "boston", "paris", "home"];
    let tails = ["today", "tomorrow", "soon", "later"];
    let keywords: [(&str, [&str; 4]); 5] = [
        ("weather", ["weather", "forecast", "temperature", "rain"]),
        ("music", ["music", "playlist", "song", "radio"]),
        ("alarm", ["alarm", "timer", "reminder", "clock"]),
        ("lights", ["lights", "lamp", "brightness", "dimmer"]),
        ("calendar", ["calendar", "meeting", "schedule", "agenda"]),
    ];
    keywords
        .iter()
        .map(|(label, words)| {
            LabelTemplate::new(*label)
                .slot(&openers)
                .slot(&verbs)
                .slot(words)
                .slot(&preps)
                .slot(&objects)
                .slot(&tails)
        })
        .collect()
}

/// Sorted, deduplicated inventory of every token the templates can emit;
/// the natural confusable pool for the task.
pub fn template_tokens(templates: &[LabelTemplate]) -> Vec<String> {
    let mut tokens: Vec<String> =
        templates.iter().flat_map(|t| t.slots.iter().flatten().cloned()).collect();
    tokens.sort();
    tokens.dedup();
    tokens
}

/// Token-level edit distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Smallest edit distance between `reference` and any complete path of the
/// lattice — the transcript a perfect rescorer could pick. Dynamic program
/// over (node, reference position) in topological order.
pub fn oracle_edit_distance<S: AsRef<str>>(
    lattice: &Lattice,
    reference: &[S],
) -> Result<usize, DataError> {
    lattice.require_valid()?;
    let adj = lattice.adjacency()?;
    let order = lattice.topological_order()?;
    let start = adj.start()?;
    let end = adj.end()?;
    let r = reference.len();
    const INF: usize = usize::MAX / 2;
    let mut dist = vec![vec![INF; r + 1]; lattice.num_nodes];
    for (j, cell) in dist[start].iter_mut().enumerate() {
        *cell = j;
    }
    for &node in &order {
        for &e in adj.incoming(node) {
            let t = &lattice.transitions[e];
            for j in 0..=r {
                // the edge's word is an insertion against the reference
                let ins = dist[t.prev][j] + 1;
                if ins < dist[node][j] {
                    dist[node][j] = ins;
                }
                if j > 0 {
                    let cost = usize::from(reference[j - 1].as_ref() != t.word);
                    let matched = dist[t.prev][j - 1] + cost;
                    if matched < dist[node][j] {
                        dist[node][j] = matched;
                    }
                }
            }
        }
        // reference tokens skipped at this node count as deletions
        for j in 1..=r {
            let del = dist[node][j - 1] + 1;
            if del < dist[node][j] {
                dist[node][j] = del;
            }
        }
    }
    Ok(dist[end][r])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::serialize_lattices;

    fn pool() -> Vec<String> {
        ["cat", "cap", "car", "dog", "dot", "sun", "moon", "star"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn zero_rates_give_exactly_the_linear_chain() {
        let mut model = ConfusionModel::new(pool());
        model.substitution_rate = 0.0;
        model.deletion_rate = 0.0;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let lattice =
            generate_confusion_lattice("l", &["sun", "and", "moon"], &model, &mut rng).unwrap();
        let chain = Lattice::from_tokens("l", &["sun", "and", "moon"]).unwrap();
        assert_eq!(lattice.transitions, chain.transitions);
        assert_eq!(lattice.num_nodes, chain.num_nodes);
    }

    #[test]
    fn full_substitution_rate_with_two_branches_doubles_the_edges() {
        let mut model = ConfusionModel::new(pool());
        model.substitution_rate = 1.0;
        model.branches = 2;
        model.deletion_rate = 0.0;
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let lattice =
            generate_confusion_lattice("l", &["cat", "dog", "sun"], &model, &mut rng).unwrap();
        assert_eq!(lattice.num_nodes, 4);
        assert_eq!(lattice.transitions.len(), 6);
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let model = ConfusionModel::new(pool());
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let err = generate_confusion_lattice::<&str, _>("l", &[], &model, &mut rng);
        assert!(matches!(err, Err(DataError::EmptySentence)));
    }

    #[test]
    fn bad_model_parameters_are_rejected() {
        let mut model = ConfusionModel::new(pool());
        model.substitution_rate = 1.5;
        assert!(matches!(model.validate(), Err(DataError::RateOutOfRange { .. })));
        let mut model = ConfusionModel::new(pool());
        model.branches = 1;
        assert!(matches!(model.validate(), Err(DataError::BadBranchFactor { got: 1 })));
        let mut model = ConfusionModel::new(pool());
        model.concentration = 0.0;
        assert!(matches!(model.validate(), Err(DataError::BadConcentration { .. })));
        let mut model = ConfusionModel::new(vec!["only".to_string()]);
        model.branches = 3;
        assert!(matches!(model.validate(), Err(DataError::PoolTooSmall { .. })));
    }

    #[test]
    fn same_seed_reproduces_the_lattice_byte_for_byte() {
        let model = ConfusionModel::new(pool());
        let sentence = ["cat", "and", "dog", "star"];
        let a = generate_confusion_lattice(
            "l",
            &sentence,
            &model,
            &mut ChaCha20Rng::seed_from_u64(7),
        )
        .unwrap();
        let b = generate_confusion_lattice(
            "l",
            &sentence,
            &model,
            &mut ChaCha20Rng::seed_from_u64(7),
        )
        .unwrap();
        assert_eq!(serialize_lattices(&[a]), serialize_lattices(&[b]));
    }

    #[test]
    fn generated_lattices_validate_and_are_already_normalized() {
        let model = ConfusionModel::new(pool());
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for len in 1..=8 {
            for round in 0..6 {
                let sentence: Vec<String> =
                    (0..len).map(|i| pool()[(i + round) % 8].clone()).collect();
                let lattice =
                    generate_confusion_lattice("l", &sentence, &model, &mut rng).unwrap();
                lattice.require_valid().unwrap();
                let renormalized = lattice.normalized().unwrap();
                assert_eq!(
                    serialize_lattices(&[lattice]),
                    serialize_lattices(&[renormalized])
                );
            }
        }
    }

    #[test]
    fn clean_sentence_is_a_complete_path_without_deletions() {
        let mut model = ConfusionModel::new(pool());
        model.deletion_rate = 0.0;
        model.substitution_rate = 0.7;
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let sentence = vec!["cat", "sun", "dog", "moon"];
        for _ in 0..10 {
            let lattice =
                generate_confusion_lattice("l", &sentence, &model, &mut rng).unwrap();
            let paths = lattice.enumerate_paths(100_000).unwrap();
            let clean: Vec<String> = sentence.iter().map(|s| s.to_string()).collect();
            assert!(paths.entries.iter().any(|p| p.words == clean));
        }
    }

    #[test]
    fn true_word_is_not_always_the_most_probable_branch() {
        let mut model = ConfusionModel::new(pool());
        model.substitution_rate = 1.0;
        model.deletion_rate = 0.0;
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let mut dethroned = false;
        for _ in 0..20 {
            let lattice = generate_confusion_lattice("l", &["cat", "dog"], &model, &mut rng)
                .unwrap();
            let adj = lattice.adjacency().unwrap();
            for node in 0..lattice.num_nodes {
                let out = adj.outgoing(node);
                if out.len() < 2 {
                    continue;
                }
                // the true word edge is emitted first within each block
                let first = &lattice.transitions[out[0]];
                if out[1..].iter().any(|&e| lattice.transitions[e].prob > first.prob) {
                    dethroned = true;
                }
            }
        }
        assert!(dethroned, "Dirichlet branch weights never beat the true word in 20 draws");
    }

    #[test]
    fn skip_edges_delete_exactly_one_word() {
        let mut model = ConfusionModel::new(pool());
        model.substitution_rate = 0.0;
        model.deletion_rate = 1.0;
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let lattice =
            generate_confusion_lattice("l", &["cat", "dog", "sun"], &model, &mut rng).unwrap();
        let paths = lattice.enumerate_paths(1000).unwrap();
        // chain path plus one path per skip edge (two deletable positions)
        assert!(paths.entries.iter().any(|p| p.words == ["cat", "dog", "sun"]));
        assert!(paths.entries.iter().any(|p| p.words == ["dog", "sun"]));
        assert!(paths.entries.iter().any(|p| p.words == ["cat", "sun"]));
    }

    #[test]
    fn levenshtein_matches_hand_counts() {
        let a: Vec<&str> = vec!["a", "b", "c"];
        assert_eq!(levenshtein(&a, &a), 0);
        assert_eq!(levenshtein(&a, &["a", "c"]), 1);
        assert_eq!(levenshtein(&a, &["x", "b", "c"]), 1);
        assert_eq!(levenshtein(&a, &[] as &[&str]), 3);
        let kitten: Vec<char> = "kitten".chars().collect();
        let sitting: Vec<char> = "sitting".chars().collect();
        assert_eq!(levenshtein(&kitten, &sitting), 3);
    }

    #[test]
    fn edit_distance_one_detects_neighbors() {
        assert!(edit_distance_is_one("cat", "cap"));
        assert!(edit_distance_is_one("cat", "cats"));
        assert!(edit_distance_is_one("cat", "at"));
        assert!(!edit_distance_is_one("cat", "cat"));
        assert!(!edit_distance_is_one("cat", "dog"));
        assert!(!edit_distance_is_one("cat", "catty"));
    }

    #[test]
    fn oracle_distance_agrees_with_path_enumeration() {
        let model = ConfusionModel::new(pool());
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let reference = vec!["cat", "dog", "sun", "moon"];
        for _ in 0..8 {
            let lattice =
                generate_confusion_lattice("l", &reference, &model, &mut rng).unwrap();
            let by_dp = oracle_edit_distance(&lattice, &reference).unwrap();
            let by_paths = lattice
                .enumerate_paths(100_000)
                .unwrap()
                .entries
                .iter()
                .map(|p| {
                    let hyp: Vec<&str> = p.words.iter().map(|w| w.as_str()).collect();
                    levenshtein(&hyp, &reference)
                })
                .min()
                .unwrap();
            assert_eq!(by_dp, by_paths);
        }
    }

    #[test]
    fn oracle_distance_is_zero_when_the_reference_survives() {
        let mut model = ConfusionModel::new(pool());
        model.deletion_rate = 0.0;
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let reference = vec!["cat", "dog"];
        let lattice = generate_confusion_lattice("l", &reference, &model, &mut rng).unwrap();
        assert_eq!(oracle_edit_distance(&lattice, &reference).unwrap(), 0);
    }

    #[test]
    fn synthetic_task_is_deterministic_and_disjoint() {
        let templates = default_templates();
        let model = ConfusionModel::new(template_tokens(&templates));
        let sizes = SplitSizes::new(6, 2, 2);
        let a = make_synthetic_task(&templates, sizes, &model, 42).unwrap();
        let b = make_synthetic_task(&templates, sizes, &model, 42).unwrap();
        for ((_, xs), (_, ys)) in a.splits().iter().zip(b.splits().iter()) {
            let xl: Vec<&Lattice> = xs.iter().map(|e| &e.lattice).collect();
            let yl: Vec<&Lattice> = ys.iter().map(|e| &e.lattice).collect();
            assert_eq!(xl, yl);
        }
        assert_eq!(a.manifest, b.manifest);
        let c = make_synthetic_task(&templates, sizes, &model, 43).unwrap();
        assert_ne!(
            a.train.iter().map(|e| e.clean.clone()).collect::<Vec<_>>(),
            c.train.iter().map(|e| e.clean.clone()).collect::<Vec<_>>()
        );

        let mut seen = HashSet::new();
        for (_, examples) in a.splits() {
            for example in examples {
                assert!(seen.insert(example.clean.join(" ")), "clean sentence reused");
            }
        }
        assert_eq!(a.train.len(), 30);
        assert_eq!(a.valid.len(), 10);
        assert_eq!(a.test.len(), 10);
    }

    #[test]
    fn task_manifest_tracks_the_requested_corruption_rate() {
        let templates = default_templates();
        let model = ConfusionModel::new(template_tokens(&templates));
        let sizes = SplitSizes::new(20, 5, 5);
        let task = make_synthetic_task(&templates, sizes, &model, 7).unwrap();
        let achieved: f64 = crate::data::manifest_value(&task.manifest, "achieved_substitution_rate")
            .unwrap()
            .parse()
            .unwrap();
        assert!((achieved - 0.4).abs() < 0.05, "achieved rate {achieved}");
        let wer: f64 = crate::data::manifest_value(&task.manifest, "one_best_wer")
            .unwrap()
            .parse()
            .unwrap();
        let oracle: f64 =
            crate::data::manifest_value(&task.manifest, "oracle_wer").unwrap().parse().unwrap();
        assert!(wer > 0.0, "corruption should hurt the one-best transcript");
        assert!(oracle <= wer, "a perfect rescorer can't do worse than one-best");
    }

    #[test]
    fn clean_rates_make_one_best_equal_clean() {
        let templates = default_templates();
        let mut model = ConfusionModel::new(template_tokens(&templates));
        model.substitution_rate = 0.0;
        model.deletion_rate = 0.0;
        let task = make_synthetic_task(&templates, SplitSizes::new(3, 1, 1), &model, 5).unwrap();
        for (_, examples) in task.splits() {
            for example in examples {
                assert_eq!(example.one_best, example.clean);
            }
        }
    }

    #[test]
    fn template_pool_exhaustion_is_reported() {
        let templates = vec![
            LabelTemplate::new("tiny").slot(&["a", "b"]),
            LabelTemplate::new("other").slot(&["c", "d"]),
        ];
        let model = ConfusionModel::new(pool());
        let err = make_synthetic_task(&templates, SplitSizes::new(3, 0, 0), &model, 1);
        match err {
            Err(DataError::TemplatePoolTooSmall { label, needed, available }) => {
                assert_eq!(label, "tiny");
                assert_eq!(needed, 3);
                assert_eq!(available, 2);
            }
            other => panic!("expected pool error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_templates_are_rejected() {
        let templates = vec![
            LabelTemplate::new("x").slot(&["same"]).slot(&["words"]),
            LabelTemplate::new("y").slot(&["same"]).slot(&["words"]),
        ];
        let model = ConfusionModel::new(pool());
        let err = make_synthetic_task(&templates, SplitSizes::new(1, 0, 0), &model, 1);
        assert!(matches!(err, Err(DataError::AmbiguousSentence { .. })));
    }

    #[test]
    fn single_label_tasks_are_rejected() {
        let templates = vec![LabelTemplate::new("only").slot(&["a"])];
        let model = ConfusionModel::new(pool());
        let err = make_synthetic_task(&templates, SplitSizes::new(1, 0, 0), &model, 1);
        assert!(matches!(err, Err(DataError::TooFewLabels { got: 1 })));
    }
}
