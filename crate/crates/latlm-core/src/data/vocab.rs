//! Token ↔ id mapping with reserved sentinel ids.

use std::collections::HashMap;

use super::DataError;
use crate::lattice::Lattice;
use crate::{BOS_TOKEN, EOS_TOKEN, UNK_TOKEN};

pub const UNK_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;

const RESERVED: [&str; 3] = [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// Bidirectional token/id map. Ids 0..3 are the reserved sentinels; real
/// tokens start at id 3 in descending-count order with lexicographic
/// tie-breaking, so construction is deterministic for a given corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    fn with_reserved() -> Vocabulary {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            counts: Vec::new(),
        };
        for token in RESERVED {
            vocab.token_to_id.insert(token.to_string(), vocab.id_to_token.len());
            vocab.id_to_token.push(token.to_string());
            vocab.counts.push(0);
        }
        vocab
    }

    fn push(&mut self, token: String, count: u64) -> Result<(), DataError> {
        if RESERVED.contains(&token.as_str()) {
            return Err(DataError::ReservedToken { token });
        }
        if self.token_to_id.contains_key(&token) {
            return Err(DataError::DuplicateToken { token });
        }
        self.token_to_id.insert(token.clone(), self.id_to_token.len());
        self.id_to_token.push(token);
        self.counts.push(count);
        Ok(())
    }

    /// Rebuilds a vocabulary from `(token, count)` rows in id order, the
    /// layout checkpoints store. Row `i` gets id `3 + i`.
    pub fn from_counted_tokens(rows: Vec<(String, u64)>) -> Result<Vocabulary, DataError> {
        let mut vocab = Vocabulary::with_reserved();
        for (token, count) in rows {
            vocab.push(token, count)?;
        }
        Ok(vocab)
    }

    /// Total number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    /// Never true: the reserved ids are always present.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for `token`, falling back to `UNK_ID`.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Exact lookup without the UNK fallback.
    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// `BOS + ids + EOS`, the event layout the language models train on.
    pub fn wrapped_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut out = Vec::with_capacity(tokens.len() + 2);
        out.push(BOS_ID);
        out.extend(tokens.iter().map(|t| self.id(t.as_ref())));
        out.push(EOS_ID);
        out
    }

    /// `(id, token, count)` rows for the non-reserved tail, in id order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &str, u64)> + '_ {
        (RESERVED.len()..self.id_to_token.len())
            .map(|i| (i, self.id_to_token[i].as_str(), self.counts[i]))
    }
}

/// Counts whitespace-separated tokens from `corpus` lines plus every
/// transition word of `lattices`; tokens with count ≥ `min_count` get ids in
/// descending-count order (ties broken lexicographically). Everything else
/// maps to UNK. Reserved sentinel strings are ignored if they appear.
pub fn build_vocab<S: AsRef<str>>(
    corpus: &[S],
    lattices: &[Lattice],
    min_count: u64,
) -> Result<Vocabulary, DataError> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut bump = |token: &str| {
        if !RESERVED.contains(&token) {
            *counts.entry(token.to_string()).or_insert(0) += 1;
        }
    };
    for line in corpus {
        for token in line.as_ref().split_whitespace() {
            bump(token);
        }
    }
    for lattice in lattices {
        for transition in &lattice.transitions {
            bump(&transition.word);
        }
    }
    if counts.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut rows: Vec<(String, u64)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_counted_tokens(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_then_count_then_lex_order() {
        let vocab = build_vocab(&["a a b"], &[], 1).unwrap();
        assert_eq!(vocab.token(UNK_ID), Some(UNK_TOKEN));
        assert_eq!(vocab.token(BOS_ID), Some(BOS_TOKEN));
        assert_eq!(vocab.token(EOS_ID), Some(EOS_TOKEN));
        assert_eq!(vocab.id("a"), 3);
        assert_eq!(vocab.id("b"), 4);
        assert_eq!(vocab.len(), 5);
        assert_eq!(vocab.count(3), 2);
    }

    #[test]
    fn min_count_drops_rare_tokens_to_unk() {
        let vocab = build_vocab(&["a a b"], &[], 2).unwrap();
        assert_eq!(vocab.lookup("b"), None);
        assert_eq!(vocab.id("b"), UNK_ID);
        assert_eq!(vocab.id("a"), 3);
        assert_eq!(vocab.len(), 4);
    }

    #[test]
    fn higher_count_wins_over_lexicographic_order() {
        let vocab = build_vocab(&["z z z a"], &[], 1).unwrap();
        assert_eq!(vocab.id("z"), 3);
        assert_eq!(vocab.id("a"), 4);
    }

    #[test]
    fn equal_counts_break_ties_lexicographically() {
        let vocab = build_vocab(&["b a", "a b"], &[], 1).unwrap();
        assert_eq!(vocab.id("a"), 3);
        assert_eq!(vocab.id("b"), 4);
    }

    #[test]
    fn lattice_words_count_toward_the_vocabulary() {
        let lattice = Lattice::from_tokens("l", &["c", "c", "c"]).unwrap();
        let vocab = build_vocab(&["a"], &[lattice], 2).unwrap();
        assert_eq!(vocab.id("c"), 3);
        assert_eq!(vocab.id("a"), UNK_ID);
    }

    #[test]
    fn reserved_strings_in_the_corpus_are_ignored() {
        let vocab = build_vocab(&["<unk> <s> </s> a"], &[], 1).unwrap();
        assert_eq!(vocab.len(), 4);
        assert_eq!(vocab.id("a"), 3);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(build_vocab::<&str>(&[], &[], 1), Err(DataError::EmptyCorpus)));
        assert!(matches!(build_vocab(&["   "], &[], 1), Err(DataError::EmptyCorpus)));
    }

    #[test]
    fn wrapped_ids_add_sentinels_and_map_unknowns() {
        let vocab = build_vocab(&["a a b"], &[], 1).unwrap();
        assert_eq!(vocab.wrapped_ids(&["a", "mystery", "b"]), vec![BOS_ID, 3, UNK_ID, 4, EOS_ID]);
    }

    #[test]
    fn counted_token_rows_round_trip() {
        let vocab = build_vocab(&["a a b c c c"], &[], 1).unwrap();
        let rows: Vec<(String, u64)> =
            vocab.entries().map(|(_, t, c)| (t.to_string(), c)).collect();
        let rebuilt = Vocabulary::from_counted_tokens(rows).unwrap();
        assert_eq!(rebuilt, vocab);
    }

    #[test]
    fn rebuilding_rejects_reserved_and_duplicate_tokens() {
        let reserved = Vocabulary::from_counted_tokens(vec![("<s>".into(), 1)]);
        assert!(matches!(reserved, Err(DataError::ReservedToken { .. })));
        let dup = Vocabulary::from_counted_tokens(vec![("a".into(), 1), ("a".into(), 2)]);
        assert!(matches!(dup, Err(DataError::DuplicateToken { .. })));
    }
}
