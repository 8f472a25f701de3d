//! Edge-labeled weighted DAGs ("lattices") and their structural algorithms.
//!
//! A lattice stores multiple recognition hypotheses of one utterance as a
//! DAG with a single start node and a single end node. Every transition
//! carries a word and a probability; a plain token sequence embeds as a
//! linear-chain lattice, which makes everything downstream of this module
//! a strict generalization of the sequential case.

mod ops;
mod paths;
mod validate;

pub use ops::renormalize_weights;
pub use paths::{LatticePath, PathSet};
pub use validate::{ValidationReport, Violation};

use thiserror::Error;

/// Node identifier. Nodes of a lattice with `n` nodes are exactly `0..n`.
pub type NodeId = usize;

/// A weighted, word-labeled edge of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub prev: NodeId,
    pub next: NodeId,
    pub word: String,
    pub prob: f64,
}

impl Transition {
    pub fn new(prev: NodeId, next: NodeId, word: impl Into<String>, prob: f64) -> Self {
        Transition { prev, next, word: word.into(), prob }
    }
}

/// An edge-labeled DAG with dense node ids `0..num_nodes`.
///
/// Start and end nodes are inferred from degrees rather than declared, so a
/// `Lattice` value may be structurally broken; [`Lattice::validate`] reports
/// every violation and the structural operations require a valid input.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub id: String,
    pub num_nodes: usize,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("lattice {id:?} is invalid: {report}")]
    Invalid { id: String, report: ValidationReport },
    #[error("cycle through edge {prev} -> {next}")]
    Cycle { prev: NodeId, next: NodeId },
    #[error("expected exactly one start node, found {count}")]
    NotSingleStart { count: usize },
    #[error("expected exactly one end node, found {count}")]
    NotSingleEnd { count: usize },
    #[error("transition {transition} references node {node} outside 0..{num_nodes}")]
    NodeOutOfRange { transition: usize, node: NodeId, num_nodes: usize },
    #[error("node {node} has outgoing transitions with zero total probability mass")]
    ZeroOutgoingMass { node: NodeId },
    #[error("cannot build a lattice from an empty token sequence")]
    EmptyTokenSequence,
    #[error("lattice has more than {limit} complete paths")]
    TooManyPaths { limit: usize },
}

/// Per-node lists of incoming and outgoing transition indices.
#[derive(Debug, Clone)]
pub struct AdjacencyIndex {
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl AdjacencyIndex {
    pub fn build(lattice: &Lattice) -> Result<AdjacencyIndex, LatticeError> {
        let n = lattice.num_nodes;
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for (i, t) in lattice.transitions.iter().enumerate() {
            for node in [t.prev, t.next] {
                if node >= n {
                    return Err(LatticeError::NodeOutOfRange { transition: i, node, num_nodes: n });
                }
            }
            outgoing[t.prev].push(i);
            incoming[t.next].push(i);
        }
        Ok(AdjacencyIndex { incoming, outgoing })
    }

    pub fn incoming(&self, node: NodeId) -> &[usize] {
        &self.incoming[node]
    }

    pub fn outgoing(&self, node: NodeId) -> &[usize] {
        &self.outgoing[node]
    }

    /// The unique node with no incoming transitions and at least one outgoing.
    /// Isolated nodes are neither start nor end candidates.
    pub fn start(&self) -> Result<NodeId, LatticeError> {
        let candidates: Vec<NodeId> = (0..self.incoming.len())
            .filter(|&n| self.incoming[n].is_empty() && !self.outgoing[n].is_empty())
            .collect();
        match candidates.as_slice() {
            [start] => Ok(*start),
            other => Err(LatticeError::NotSingleStart { count: other.len() }),
        }
    }

    /// The unique node with no outgoing transitions and at least one incoming.
    pub fn end(&self) -> Result<NodeId, LatticeError> {
        let candidates: Vec<NodeId> = (0..self.outgoing.len())
            .filter(|&n| self.outgoing[n].is_empty() && !self.incoming[n].is_empty())
            .collect();
        match candidates.as_slice() {
            [end] => Ok(*end),
            other => Err(LatticeError::NotSingleEnd { count: other.len() }),
        }
    }
}

impl Lattice {
    pub fn new(id: impl Into<String>, num_nodes: usize, transitions: Vec<Transition>) -> Self {
        Lattice { id: id.into(), num_nodes, transitions }
    }

    pub fn adjacency(&self) -> Result<AdjacencyIndex, LatticeError> {
        AdjacencyIndex::build(self)
    }

    pub fn start(&self) -> Result<NodeId, LatticeError> {
        self.adjacency()?.start()
    }

    pub fn end(&self) -> Result<NodeId, LatticeError> {
        self.adjacency()?.end()
    }

    /// Shorthand for "validation report is empty".
    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Turns a non-empty validation report into an error.
    pub fn require_valid(&self) -> Result<(), LatticeError> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(LatticeError::Invalid { id: self.id.clone(), report })
        }
    }
}
