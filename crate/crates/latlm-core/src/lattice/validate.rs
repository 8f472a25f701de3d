//! Structural validation. Violations are data, not failures: callers decide
//! whether a non-empty report is fatal.

use std::collections::VecDeque;
use std::fmt;

use super::{AdjacencyIndex, Lattice, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NodeOutOfRange { transition: usize, node: NodeId },
    SelfLoop { transition: usize },
    ProbOutOfRange { transition: usize, prob: f64 },
    Cycle { prev: NodeId, next: NodeId },
    NoStartNode,
    MultipleStartNodes { nodes: Vec<NodeId> },
    NoEndNode,
    MultipleEndNodes { nodes: Vec<NodeId> },
    UnreachableNode { node: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeOutOfRange { transition, node } => {
                write!(f, "transition {transition} references unknown node {node}")
            }
            Violation::SelfLoop { transition } => write!(f, "self-loop at transition {transition}"),
            Violation::ProbOutOfRange { transition, prob } => {
                write!(f, "transition {transition} has probability {prob} outside [0, 1]")
            }
            Violation::Cycle { prev, next } => write!(f, "cycle through edge {prev} -> {next}"),
            Violation::NoStartNode => write!(f, "no start node"),
            Violation::MultipleStartNodes { nodes } => write!(f, "multiple start nodes {nodes:?}"),
            Violation::NoEndNode => write!(f, "no end node"),
            Violation::MultipleEndNodes { nodes } => write!(f, "multiple end nodes {nodes:?}"),
            Violation::UnreachableNode { node } => write!(f, "unreachable node {node}"),
        }
    }
}

/// Result of [`Lattice::validate`]; empty means the lattice is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains_cycle(&self) -> bool {
        self.violations.iter().any(|v| matches!(v, Violation::Cycle { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let rendered: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", rendered.join("; "))
    }
}

impl Lattice {
    /// Checks every structural invariant and reports all violations found:
    /// out-of-range node references, self-loops, probabilities outside
    /// [0, 1], cycles, missing or ambiguous start/end nodes, and nodes that
    /// lie on no start-to-end path.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();

        for (i, t) in self.transitions.iter().enumerate() {
            for node in [t.prev, t.next] {
                if node >= self.num_nodes {
                    violations.push(Violation::NodeOutOfRange { transition: i, node });
                }
            }
            if t.prev == t.next {
                violations.push(Violation::SelfLoop { transition: i });
            }
            if !(0.0..=1.0).contains(&t.prob) {
                violations.push(Violation::ProbOutOfRange { transition: i, prob: t.prob });
            }
        }
        if violations.iter().any(|v| matches!(v, Violation::NodeOutOfRange { .. })) {
            // Degree and traversal checks need in-range endpoints.
            return ValidationReport { violations };
        }

        let adj = AdjacencyIndex::build(self).expect("node ranges checked above");

        let starts: Vec<NodeId> = (0..self.num_nodes)
            .filter(|&n| adj.incoming(n).is_empty() && !adj.outgoing(n).is_empty())
            .collect();
        let ends: Vec<NodeId> = (0..self.num_nodes)
            .filter(|&n| adj.outgoing(n).is_empty() && !adj.incoming(n).is_empty())
            .collect();
        match starts.as_slice() {
            [] => violations.push(Violation::NoStartNode),
            [_] => {}
            _ => violations.push(Violation::MultipleStartNodes { nodes: starts.clone() }),
        }
        match ends.as_slice() {
            [] => violations.push(Violation::NoEndNode),
            [_] => {}
            _ => violations.push(Violation::MultipleEndNodes { nodes: ends.clone() }),
        }

        if let Some((prev, next)) = find_cycle_edge(self, &adj) {
            violations.push(Violation::Cycle { prev, next });
        }

        // A node is on a start-to-end path iff it is forward-reachable from
        // the start and backward-reachable from the end.
        if let ([start], [end]) = (starts.as_slice(), ends.as_slice()) {
            let forward = reach(self.num_nodes, *start, |n| {
                adj.outgoing(n).iter().map(|&e| self.transitions[e].next).collect()
            });
            let backward = reach(self.num_nodes, *end, |n| {
                adj.incoming(n).iter().map(|&e| self.transitions[e].prev).collect()
            });
            for n in 0..self.num_nodes {
                if !(forward[n] && backward[n]) {
                    violations.push(Violation::UnreachableNode { node: n });
                }
            }
        }

        ValidationReport { violations }
    }
}

fn reach(num_nodes: usize, from: NodeId, neighbors: impl Fn(NodeId) -> Vec<NodeId>) -> Vec<bool> {
    let mut seen = vec![false; num_nodes];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        for m in neighbors(n) {
            if !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        }
    }
    seen
}

/// Kahn elimination; any edge left between uneliminated nodes feeds a cycle,
/// and a DFS among them recovers one concrete back edge to report.
pub(super) fn find_cycle_edge(lattice: &Lattice, adj: &AdjacencyIndex) -> Option<(NodeId, NodeId)> {
    let n = lattice.num_nodes;
    let mut indegree: Vec<usize> = (0..n).map(|v| adj.incoming(v).len()).collect();
    let mut queue: VecDeque<NodeId> =
        (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut remaining = n;
    while let Some(v) = queue.pop_front() {
        remaining -= 1;
        for &e in adj.outgoing(v) {
            let next = lattice.transitions[e].next;
            indegree[next] -= 1;
            if indegree[next] == 0 {
                queue.push_back(next);
            }
        }
    }
    if remaining == 0 {
        return None;
    }

    // Every edge out of a node with indegree > 0 here stays inside the
    // cyclic remainder, so a DFS must close a loop.
    let start = (0..n).find(|&v| indegree[v] > 0)?;
    let mut on_stack = vec![false; n];
    let mut visited = vec![false; n];
    let mut stack = vec![(start, 0usize)];
    visited[start] = true;
    on_stack[start] = true;
    while let Some(&mut (v, ref mut edge_pos)) = stack.last_mut() {
        if let Some(&e) = adj.outgoing(v).get(*edge_pos) {
            *edge_pos += 1;
            let next = lattice.transitions[e].next;
            if indegree[next] == 0 {
                continue;
            }
            if on_stack[next] {
                return Some((v, next));
            }
            if !visited[next] {
                visited[next] = true;
                on_stack[next] = true;
                stack.push((next, 0));
            }
        } else {
            on_stack[v] = false;
            stack.pop();
        }
    }
    None
}
