//! Structural operations: topological ordering, reversal, linear-chain
//! construction, probability normalization, and sentinel wrapping.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::validate::find_cycle_edge;
use super::{Lattice, LatticeError, NodeId, Transition};
use crate::{BOS_TOKEN, EOS_TOKEN};

/// Sums within this distance of 1 are treated as already normalized, which
/// makes [`Lattice::normalized`] a bitwise fixed point.
const NORMALIZED_SLACK: f64 = 1e-12;

impl Lattice {
    /// Nodes in topological order, ties broken by ascending node id.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, LatticeError> {
        let adj = self.adjacency()?;
        let mut indegree: Vec<usize> = (0..self.num_nodes).map(|n| adj.incoming(n).len()).collect();
        let mut ready: BinaryHeap<Reverse<NodeId>> = (0..self.num_nodes)
            .filter(|&n| indegree[n] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::with_capacity(self.num_nodes);
        while let Some(Reverse(n)) = ready.pop() {
            order.push(n);
            for &e in adj.outgoing(n) {
                let next = self.transitions[e].next;
                indegree[next] -= 1;
                if indegree[next] == 0 {
                    ready.push(Reverse(next));
                }
            }
        }
        if order.len() < self.num_nodes {
            let (prev, next) =
                find_cycle_edge(self, &adj).expect("incomplete Kahn order implies a cycle");
            return Err(LatticeError::Cycle { prev, next });
        }
        Ok(order)
    }

    /// Reverses every transition and swaps the start/end roles.
    ///
    /// The reversed probability of an edge is its prefix mass (the total
    /// probability of start-to-edge prefixes flowing through it) before
    /// renormalization per node. This preserves the path distribution: every
    /// reversed complete path keeps the probability its forward counterpart
    /// had, which keeps backward-direction LM targets well-formed.
    pub fn reversed(&self) -> Result<Lattice, LatticeError> {
        let order = self.topological_order()?;
        let adj = self.adjacency()?;
        let start = adj.start()?;
        adj.end()?;

        let mut prefix_mass = vec![0.0f64; self.num_nodes];
        prefix_mass[start] = 1.0;
        for &n in &order {
            for &e in adj.outgoing(n) {
                let t = &self.transitions[e];
                prefix_mass[t.next] += prefix_mass[n] * t.prob;
            }
        }

        let transitions = self
            .transitions
            .iter()
            .map(|t| Transition {
                prev: t.next,
                next: t.prev,
                word: t.word.clone(),
                prob: prefix_mass[t.prev] * t.prob,
            })
            .collect();
        Lattice::new(self.id.clone(), self.num_nodes, transitions).normalized()
    }

    /// The linear-chain embedding of a token sequence: `tokens.len() + 1`
    /// nodes and one unit-probability transition per token.
    pub fn from_tokens<S: AsRef<str>>(id: impl Into<String>, tokens: &[S]) -> Result<Lattice, LatticeError> {
        if tokens.is_empty() {
            return Err(LatticeError::EmptyTokenSequence);
        }
        let transitions = tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| Transition::new(i, i + 1, tok.as_ref(), 1.0))
            .collect();
        Ok(Lattice::new(id, tokens.len() + 1, transitions))
    }

    /// Rescales each node's outgoing probabilities to sum to one. Topology
    /// and words are untouched; applying it twice is a bitwise no-op.
    pub fn normalized(&self) -> Result<Lattice, LatticeError> {
        let adj = self.adjacency()?;
        let mut out = self.clone();
        for node in 0..self.num_nodes {
            let edges = adj.outgoing(node);
            if edges.is_empty() {
                continue;
            }
            let sum: f64 = edges.iter().map(|&e| self.transitions[e].prob).sum();
            if sum <= 0.0 {
                return Err(LatticeError::ZeroOutgoingMass { node });
            }
            if (sum - 1.0).abs() <= NORMALIZED_SLACK {
                continue;
            }
            for &e in edges {
                out.transitions[e].prob = self.transitions[e].prob / sum;
            }
        }
        Ok(out)
    }

    /// Adds a fresh start node reaching the old start through a BOS
    /// transition and a fresh end node reached from the old end through an
    /// EOS transition, both with probability one. Existing node ids are
    /// preserved; the new nodes take the next two ids.
    pub fn with_sentinels(&self) -> Result<Lattice, LatticeError> {
        self.require_valid()?;
        let adj = self.adjacency()?;
        let old_start = adj.start()?;
        let old_end = adj.end()?;
        let new_start = self.num_nodes;
        let new_end = self.num_nodes + 1;
        let mut transitions = self.transitions.clone();
        transitions.push(Transition::new(new_start, old_start, BOS_TOKEN, 1.0));
        transitions.push(Transition::new(old_end, new_end, EOS_TOKEN, 1.0));
        Ok(Lattice::new(self.id.clone(), self.num_nodes + 2, transitions))
    }
}

/// Renormalizes a weight slice in place unless it already sums to one
/// within the fixed-point slack. Shared by node pooling, which applies the
/// same convention to incoming transition weights; `node` only labels the
/// error when the slice carries no mass.
pub fn renormalize_weights(node: NodeId, weights: &mut [f64]) -> Result<(), LatticeError> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(LatticeError::ZeroOutgoingMass { node });
    }
    if (sum - 1.0).abs() > NORMALIZED_SLACK {
        for w in weights.iter_mut() {
            *w /= sum;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(prev: NodeId, next: NodeId, word: &str, prob: f64) -> Transition {
        Transition::new(prev, next, word, prob)
    }

    fn diamond(p_top: f64, p_bottom: f64) -> Lattice {
        Lattice::new(
            "diamond",
            4,
            vec![
                tr(0, 1, "a", p_top),
                tr(0, 2, "b", p_bottom),
                tr(1, 3, "c", 1.0),
                tr(2, 3, "d", 1.0),
            ],
        )
    }

    #[test]
    fn chain_topological_order_is_forced() {
        let lat = Lattice::from_tokens("t", &["a", "b", "c"]).unwrap();
        assert_eq!(lat.topological_order().unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn diamond_order_breaks_ties_by_node_id() {
        assert_eq!(diamond(0.5, 0.5).topological_order().unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn relabeled_diamond_order_still_ascends() {
        // Same shape with the middle labels swapped in storage order.
        let lat = Lattice::new(
            "t",
            4,
            vec![tr(0, 2, "a", 0.5), tr(0, 1, "b", 0.5), tr(2, 3, "c", 1.0), tr(1, 3, "d", 1.0)],
        );
        assert_eq!(lat.topological_order().unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn cycle_error_names_an_edge_on_the_cycle() {
        let lat = Lattice::new(
            "t",
            4,
            vec![tr(0, 1, "a", 1.0), tr(1, 2, "b", 1.0), tr(2, 1, "c", 1.0), tr(2, 3, "d", 1.0)],
        );
        match lat.topological_order() {
            Err(LatticeError::Cycle { prev, next }) => {
                assert!(matches!((prev, next), (1, 2) | (2, 1)));
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn chain_reversal_reverses_traversal() {
        let lat = Lattice::from_tokens("t", &["a", "b", "c"]).unwrap();
        let rev = lat.reversed().unwrap();
        assert_eq!(rev.one_best_path().unwrap(), vec!["c", "b", "a"]);
        assert!(rev.transitions.iter().all(|t| t.prob == 1.0));
    }

    #[test]
    fn reverse_is_an_involution_on_structure() {
        let lat = diamond(0.6, 0.4);
        let back = lat.reversed().unwrap().reversed().unwrap();
        assert_eq!(back.num_nodes, lat.num_nodes);
        for (a, b) in lat.transitions.iter().zip(&back.transitions) {
            assert_eq!((a.prev, a.next, a.word.as_str()), (b.prev, b.next, b.word.as_str()));
            assert!((a.prob - b.prob).abs() < 1e-15);
        }
    }

    #[test]
    fn reversed_start_distributes_by_path_mass() {
        let rev = diamond(0.6, 0.4).reversed().unwrap();
        let adj = rev.adjacency().unwrap();
        assert_eq!(adj.start().unwrap(), 3);
        let mut out: Vec<(String, f64)> = adj
            .outgoing(3)
            .iter()
            .map(|&e| (rev.transitions[e].word.clone(), rev.transitions[e].prob))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(out[0].0, "c");
        assert!((out[0].1 - 0.6).abs() < 1e-15);
        assert!((out[1].1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn reversed_path_distribution_matches_original() {
        let lat = diamond(0.6, 0.4).normalized().unwrap();
        let fwd = lat.enumerate_paths(100).unwrap();
        let rev = lat.reversed().unwrap();
        let bwd = rev.enumerate_paths(100).unwrap();
        for (p, q) in fwd.entries.iter().zip(&bwd.entries) {
            assert!((p.prob - q.prob).abs() < 1e-12);
            let mut reversed_words = q.words.clone();
            reversed_words.reverse();
            assert_eq!(p.words, reversed_words);
        }
    }

    #[test]
    fn from_tokens_builds_unit_chain() {
        let lat = Lattice::from_tokens("t", &["show", "flights"]).unwrap();
        assert_eq!(lat.num_nodes, 3);
        assert_eq!(lat.transitions.len(), 2);
        assert!(lat.transitions.iter().all(|t| t.prob == 1.0));

        let single = Lattice::from_tokens("s", &["a"]).unwrap();
        assert_eq!((single.num_nodes, single.transitions.len()), (2, 1));

        assert!(matches!(
            Lattice::from_tokens::<&str>("e", &[]),
            Err(LatticeError::EmptyTokenSequence)
        ));
    }

    #[test]
    fn normalization_scales_proportionally() {
        let lat = Lattice::new("t", 3, vec![tr(0, 1, "a", 0.2), tr(0, 1, "b", 0.2), tr(1, 2, "c", 1.0)]);
        let norm = lat.normalized().unwrap();
        assert_eq!(norm.transitions[0].prob, 0.5);
        assert_eq!(norm.transitions[1].prob, 0.5);

        let lat = Lattice::new("t", 3, vec![tr(0, 1, "a", 1.0), tr(0, 1, "b", 3.0), tr(1, 2, "c", 1.0)]);
        let norm = lat.normalized().unwrap();
        assert_eq!(norm.transitions[0].prob, 0.25);
        assert_eq!(norm.transitions[1].prob, 0.75);
    }

    #[test]
    fn normalization_is_a_bitwise_fixed_point() {
        let lat = Lattice::new(
            "t",
            3,
            vec![tr(0, 1, "a", 0.1), tr(0, 1, "b", 0.2), tr(0, 1, "c", 0.6), tr(1, 2, "d", 1.0)],
        );
        let once = lat.normalized().unwrap();
        let twice = once.normalized().unwrap();
        for (a, b) in once.transitions.iter().zip(&twice.transitions) {
            assert_eq!(a.prob.to_bits(), b.prob.to_bits());
        }

        let already = Lattice::new("t", 3, vec![tr(0, 1, "a", 0.3), tr(0, 1, "b", 0.7), tr(1, 2, "c", 1.0)]);
        let norm = already.normalized().unwrap();
        assert_eq!(norm.transitions[0].prob.to_bits(), (0.3f64).to_bits());
        assert_eq!(norm.transitions[1].prob.to_bits(), (0.7f64).to_bits());
    }

    #[test]
    fn normalization_rejects_zero_mass() {
        let lat = Lattice::new("t", 3, vec![tr(0, 1, "a", 0.0), tr(1, 2, "b", 1.0)]);
        assert!(matches!(lat.normalized(), Err(LatticeError::ZeroOutgoingMass { node: 0 })));
    }

    #[test]
    fn sentinel_wrapping_adds_boundary_chain() {
        let lat = Lattice::from_tokens("t", &["a", "b"]).unwrap();
        let wrapped = lat.with_sentinels().unwrap();
        assert_eq!(wrapped.num_nodes, lat.num_nodes + 2);
        assert_eq!(wrapped.transitions.len(), lat.transitions.len() + 2);
        assert_eq!(
            wrapped.one_best_path().unwrap(),
            vec![BOS_TOKEN, "a", "b", EOS_TOKEN]
        );
    }

    #[test]
    fn wrapped_diamond_still_validates_and_normalizes() {
        let wrapped = diamond(0.6, 0.4).with_sentinels().unwrap();
        assert!(wrapped.is_valid());
        assert!(wrapped.normalized().is_ok());
        assert_eq!(wrapped.start().unwrap(), 4);
        assert_eq!(wrapped.end().unwrap(), 5);
    }
}
