//! Complete-path enumeration (the desk-scale oracle) and the Viterbi
//! one-best transcript.

use super::{Lattice, LatticeError, NodeId};

/// One complete start-to-end path.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub words: Vec<String>,
    pub prob: f64,
}

/// All complete paths of a lattice, sorted by descending probability with
/// lexicographic word order breaking ties.
#[derive(Debug, Clone, Default)]
pub struct PathSet {
    pub entries: Vec<LatticePath>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|p| p.prob).sum()
    }
}

impl Lattice {
    /// Exhaustively enumerates every start-to-end path with its probability
    /// (the product of transition probabilities along the path). Refuses
    /// lattices with more than `max_paths` complete paths; this is a test
    /// oracle, not a production decoder.
    pub fn enumerate_paths(&self, max_paths: usize) -> Result<PathSet, LatticeError> {
        let order = self.topological_order()?;
        let adj = self.adjacency()?;
        let start = adj.start()?;
        let end = adj.end()?;

        let mut counts = vec![0u128; self.num_nodes];
        counts[start] = 1;
        for &n in &order {
            for &e in adj.outgoing(n) {
                let next = self.transitions[e].next;
                counts[next] = counts[next].saturating_add(counts[n]);
            }
        }
        if counts[end] > max_paths as u128 {
            return Err(LatticeError::TooManyPaths { limit: max_paths });
        }

        let mut entries = Vec::with_capacity(counts[end] as usize);
        let mut words: Vec<String> = Vec::new();
        let mut stack: Vec<(NodeId, usize, f64)> = vec![(start, 0, 1.0)];
        while let Some((node, edge_pos, prob)) = stack.pop() {
            if node == end && edge_pos == 0 && node != start {
                entries.push(LatticePath { words: words.clone(), prob });
            }
            if let Some(&e) = adj.outgoing(node).get(edge_pos) {
                stack.push((node, edge_pos + 1, prob));
                let t = &self.transitions[e];
                words.push(t.word.clone());
                stack.push((t.next, 0, prob * t.prob));
            } else if edge_pos == adj.outgoing(node).len() {
                words.pop();
            }
        }

        entries.sort_by(|a, b| {
            b.prob
                .partial_cmp(&a.prob)
                .expect("path probabilities are finite")
                .then_with(|| a.words.cmp(&b.words))
        });
        Ok(PathSet { entries })
    }

    /// The token sequence of the maximum-probability complete path, computed
    /// by Viterbi over probability products in topological order. Exact
    /// probability ties keep the lexicographically smaller word sequence, so
    /// the result matches the top entry of [`Lattice::enumerate_paths`].
    pub fn one_best_path(&self) -> Result<Vec<String>, LatticeError> {
        let order = self.topological_order()?;
        let adj = self.adjacency()?;
        let start = adj.start()?;
        let end = adj.end()?;

        let mut best: Vec<Option<(f64, Vec<String>)>> = vec![None; self.num_nodes];
        best[start] = Some((1.0, Vec::new()));
        for &n in &order {
            let Some((prob, words)) = best[n].clone() else { continue };
            for &e in adj.outgoing(n) {
                let t = &self.transitions[e];
                let cand_prob = prob * t.prob;
                let better = match &best[t.next] {
                    None => true,
                    Some((p, w)) => {
                        cand_prob > *p
                            || (cand_prob == *p && {
                                let mut cand = words.clone();
                                cand.push(t.word.clone());
                                cand < *w
                            })
                    }
                };
                if better {
                    let mut cand = words.clone();
                    cand.push(t.word.clone());
                    best[t.next] = Some((cand_prob, cand));
                }
            }
        }
        best[end]
            .take()
            .map(|(_, words)| words)
            .ok_or(LatticeError::NotSingleEnd { count: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Transition;

    fn tr(prev: NodeId, next: NodeId, word: &str, prob: f64) -> Transition {
        Transition::new(prev, next, word, prob)
    }

    #[test]
    fn chain_has_one_unit_path() {
        let lat = Lattice::from_tokens("t", &["a", "b", "c"]).unwrap();
        let paths = lat.enumerate_paths(10).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths.entries[0].prob, 1.0);
        assert_eq!(paths.entries[0].words, vec!["a", "b", "c"]);
        assert_eq!(lat.one_best_path().unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn diamond_paths_follow_branch_probabilities() {
        let lat = Lattice::new(
            "t",
            4,
            vec![tr(0, 1, "cat", 0.7), tr(0, 2, "cap", 0.3), tr(1, 3, "x", 1.0), tr(2, 3, "x", 1.0)],
        );
        let paths = lat.enumerate_paths(10).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(paths.entries[0].words, vec!["cat", "x"]);
        assert!((paths.entries[0].prob - 0.7).abs() < 1e-15);
        assert!((paths.entries[1].prob - 0.3).abs() < 1e-15);
        assert_eq!(lat.one_best_path().unwrap(), vec!["cat", "x"]);
    }

    #[test]
    fn consecutive_branches_multiply_out() {
        let lat = Lattice::new(
            "t",
            3,
            vec![
                tr(0, 1, "a", 0.6),
                tr(0, 1, "b", 0.4),
                tr(1, 2, "c", 0.5),
                tr(1, 2, "d", 0.5),
            ],
        );
        let paths = lat.enumerate_paths(10).unwrap();
        let probs: Vec<f64> = paths.entries.iter().map(|p| p.prob).collect();
        assert_eq!(paths.len(), 4);
        for (got, want) in probs.iter().zip([0.3, 0.3, 0.2, 0.2]) {
            assert!((got - want).abs() < 1e-15, "{probs:?}");
        }
        // Equal-probability paths rank lexicographically.
        assert_eq!(paths.entries[0].words, vec!["a", "c"]);
        assert_eq!(paths.entries[1].words, vec!["a", "d"]);
    }

    #[test]
    fn path_overflow_is_an_error() {
        let lat = Lattice::new(
            "t",
            3,
            vec![
                tr(0, 1, "a", 0.5),
                tr(0, 1, "b", 0.5),
                tr(1, 2, "c", 0.5),
                tr(1, 2, "d", 0.5),
            ],
        );
        assert!(matches!(lat.enumerate_paths(3), Err(LatticeError::TooManyPaths { limit: 3 })));
    }

    #[test]
    fn sausage_one_best_matches_enumeration() {
        // Three confusion bins with asymmetric probabilities.
        let lat = Lattice::new(
            "t",
            4,
            vec![
                tr(0, 1, "the", 0.9),
                tr(0, 1, "a", 0.1),
                tr(1, 2, "cat", 0.4),
                tr(1, 2, "cap", 0.35),
                tr(1, 2, "mat", 0.25),
                tr(2, 3, "sat", 0.6),
                tr(2, 3, "sad", 0.4),
            ],
        );
        let paths = lat.enumerate_paths(100).unwrap();
        assert_eq!(lat.one_best_path().unwrap(), paths.entries[0].words);
        assert!((paths.total_probability() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_chain_identity() {
        let tokens = ["a", "b", "c"];
        let lat = Lattice::from_tokens("t", &tokens).unwrap();
        assert_eq!(lat.one_best_path().unwrap(), tokens);
    }
}
