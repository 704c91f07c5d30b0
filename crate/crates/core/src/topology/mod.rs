//! Feedforward nested-function network structure.
//!
//! A [`NetworkTopology`] is a DAG whose nodes are raw inputs, univariate
//! nonlinear nodes, linear coupling nodes or multi-input black-box nodes.
//! Structure is checked by [`NetworkTopology::validate`], which reports every
//! violation as data; a topology that passes can be promoted to a
//! [`ValidTopology`], the form every analysis and training routine consumes.

mod file;
pub mod generate;

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use file::{NetworkDocument, NodeParams};

/// Dense node index, assigned by the topology file.
pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Raw input coordinate `index` (0-based).
    Input { index: usize },
    /// One-input nonlinear node (a spline in the smooth engine).
    Univariate,
    /// Weighted sum of its in-edges plus a bias.
    Linear,
    /// Opaque multi-input node, e.g. a boosted tree ensemble.
    BlackBox { arity: usize },
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Input { .. } => "input",
            NodeKind::Univariate => "univariate",
            NodeKind::Linear => "linear",
            NodeKind::BlackBox { .. } => "blackbox",
        }
    }

    pub fn is_input(&self) -> bool {
        matches!(self, NodeKind::Input { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkTopology {
    pub input_dim: usize,
    /// Node kinds indexed by [`NodeId`].
    pub nodes: Vec<NodeKind>,
    /// Directed edges `(source, target)`. The order of a node's in-edges in
    /// this list defines the order of its arguments.
    pub edges: Vec<(NodeId, NodeId)>,
    pub output: NodeId,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology is invalid:\n{0}")]
    Invalid(ValidationReport),
    #[error("cycle detected among nodes {0:?}")]
    Cyclic(Vec<NodeId>),
    #[error("malformed topology document: {0}")]
    Format(String),
    #[error("failed to parse topology JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
}

/// A single broken structural rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    ZeroInputDim,
    MissingOutput { node: NodeId },
    DanglingEdge { from: NodeId, to: NodeId },
    DuplicateEdge { from: NodeId, to: NodeId },
    CycleDetected { node: NodeId },
    InputIndexOutOfRange { node: NodeId, index: usize },
    DuplicateInputIndex { node: NodeId, index: usize },
    InputHasInEdges { node: NodeId },
    ArityMismatch { node: NodeId, expected: String, found: usize },
    UnreachableFromInputs { node: NodeId },
    DeadNode { node: NodeId },
}

impl Violation {
    /// Offending node, when the rule is attached to one.
    pub fn node(&self) -> Option<NodeId> {
        match *self {
            Violation::ZeroInputDim => None,
            Violation::MissingOutput { node }
            | Violation::CycleDetected { node }
            | Violation::InputIndexOutOfRange { node, .. }
            | Violation::DuplicateInputIndex { node, .. }
            | Violation::InputHasInEdges { node }
            | Violation::ArityMismatch { node, .. }
            | Violation::UnreachableFromInputs { node }
            | Violation::DeadNode { node } => Some(node),
            Violation::DanglingEdge { to, .. } | Violation::DuplicateEdge { to, .. } => Some(to),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroInputDim => write!(f, "input_dim must be at least 1"),
            Violation::MissingOutput { node } => write!(f, "output node {node} does not exist"),
            Violation::DanglingEdge { from, to } => {
                write!(f, "edge [{from}, {to}] references a missing node")
            }
            Violation::DuplicateEdge { from, to } => write!(f, "edge [{from}, {to}] is repeated"),
            Violation::CycleDetected { node } => write!(f, "node {node}: cycle detected"),
            Violation::InputIndexOutOfRange { node, index } => {
                write!(f, "node {node}: input index {index} is out of range")
            }
            Violation::DuplicateInputIndex { node, index } => {
                write!(f, "node {node}: input index {index} is already bound")
            }
            Violation::InputHasInEdges { node } => {
                write!(f, "node {node}: input nodes cannot have in-edges")
            }
            Violation::ArityMismatch {
                node,
                expected,
                found,
            } => write!(f, "node {node}: expected {expected} in-edges, found {found}"),
            Violation::UnreachableFromInputs { node } => {
                write!(f, "node {node}: not reachable from any input")
            }
            Violation::DeadNode { node } => write!(f, "node {node}: does not reach the output"),
        }
    }
}

/// Outcome of [`NetworkTopology::validate`]: empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl NetworkTopology {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of univariate nodes (`m` in the counting bound).
    pub fn univariate_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|k| matches!(k, NodeKind::Univariate))
            .count()
    }

    /// Number of linear coupling nodes.
    pub fn linear_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|k| matches!(k, NodeKind::Linear))
            .count()
    }

    /// Largest argument count over the nonlinear nodes (1 for univariate).
    pub fn max_node_arity(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|k| match k {
                NodeKind::Univariate => Some(1),
                NodeKind::BlackBox { arity } => Some(*arity),
                _ => None,
            })
            .max()
    }

    fn has_node(&self, id: NodeId) -> bool {
        id < self.nodes.len()
    }

    /// Checks every structural invariant and lists all violations.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let count = self.nodes.len();

        if self.input_dim == 0 {
            violations.push(Violation::ZeroInputDim);
        }
        if !self.has_node(self.output) {
            violations.push(Violation::MissingOutput { node: self.output });
        }

        let mut seen = HashSet::new();
        let mut in_degree = vec![0usize; count];
        let mut good_edges = Vec::with_capacity(self.edges.len());
        for &(from, to) in &self.edges {
            if !self.has_node(from) || !self.has_node(to) {
                violations.push(Violation::DanglingEdge { from, to });
                continue;
            }
            if !seen.insert((from, to)) {
                violations.push(Violation::DuplicateEdge { from, to });
                continue;
            }
            in_degree[to] += 1;
            good_edges.push((from, to));
        }

        let mut bound_inputs = HashSet::new();
        for (id, kind) in self.nodes.iter().enumerate() {
            let found = in_degree[id];
            match *kind {
                NodeKind::Input { index } => {
                    if index >= self.input_dim {
                        violations.push(Violation::InputIndexOutOfRange { node: id, index });
                    } else if !bound_inputs.insert(index) {
                        violations.push(Violation::DuplicateInputIndex { node: id, index });
                    }
                    if found > 0 {
                        violations.push(Violation::InputHasInEdges { node: id });
                    }
                }
                NodeKind::Univariate if found != 1 => {
                    violations.push(Violation::ArityMismatch {
                        node: id,
                        expected: "exactly 1".into(),
                        found,
                    });
                }
                NodeKind::Linear if found == 0 => {
                    violations.push(Violation::ArityMismatch {
                        node: id,
                        expected: "at least 1".into(),
                        found,
                    });
                }
                NodeKind::BlackBox { arity } if arity == 0 || found != arity => {
                    violations.push(Violation::ArityMismatch {
                        node: id,
                        expected: format!("exactly {} (declared arity, at least 1)", arity.max(1)),
                        found,
                    });
                }
                _ => {}
            }
        }

        for node in cyclic_nodes(count, &good_edges) {
            violations.push(Violation::CycleDetected { node });
        }

        // Reachability, forward from inputs and backward from the output.
        let mut succ = vec![Vec::new(); count];
        let mut pred = vec![Vec::new(); count];
        for &(from, to) in &good_edges {
            succ[from].push(to);
            pred[to].push(from);
        }
        let starts: Vec<NodeId> = (0..count).filter(|&i| self.nodes[i].is_input()).collect();
        let from_inputs = flood(&succ, starts);
        for (id, kind) in self.nodes.iter().enumerate() {
            if !kind.is_input() && !from_inputs[id] {
                violations.push(Violation::UnreachableFromInputs { node: id });
            }
        }
        if self.has_node(self.output) {
            let to_output = flood(&pred, vec![self.output]);
            for id in (0..count).filter(|&id| !to_output[id]) {
                violations.push(Violation::DeadNode { node: id });
            }
        }

        ValidationReport { violations }
    }

    /// Promotes the topology after a successful [`validate`](Self::validate).
    pub fn into_valid(self) -> Result<ValidTopology, TopologyError> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(TopologyError::Invalid(report));
        }
        let order = topological_order(&self)?;
        let count = self.nodes.len();
        let mut in_edges = vec![Vec::new(); count];
        let mut out_edges = vec![Vec::new(); count];
        for &(from, to) in &self.edges {
            in_edges[to].push(from);
            out_edges[from].push(to);
        }
        Ok(ValidTopology {
            topology: self,
            order,
            in_edges,
            out_edges,
        })
    }
}

fn flood(adj: &[Vec<NodeId>], starts: Vec<NodeId>) -> Vec<bool> {
    let mut mark = vec![false; adj.len()];
    let mut queue: VecDeque<NodeId> = VecDeque::new();
    for s in starts {
        if !mark[s] {
            mark[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !mark[w] {
                mark[w] = true;
                queue.push_back(w);
            }
        }
    }
    mark
}

/// Nodes lying on a directed cycle: whatever survives peeling off sources
/// and then sinks.
fn cyclic_nodes(count: usize, edges: &[(NodeId, NodeId)]) -> Vec<NodeId> {
    let mut alive = vec![true; count];
    let mut changed = true;
    while changed {
        changed = false;
        let mut indeg = vec![0usize; count];
        let mut outdeg = vec![0usize; count];
        for &(a, b) in edges {
            if alive[a] && alive[b] {
                outdeg[a] += 1;
                indeg[b] += 1;
            }
        }
        for v in 0..count {
            if alive[v] && (indeg[v] == 0 || outdeg[v] == 0) {
                alive[v] = false;
                changed = true;
            }
        }
    }
    (0..count).filter(|&v| alive[v]).collect()
}

/// Kahn's algorithm; among ready nodes the smallest id is emitted first.
pub fn topological_order(topology: &NetworkTopology) -> Result<Vec<NodeId>, TopologyError> {
    let count = topology.nodes.len();
    let mut indeg = vec![0usize; count];
    let mut succ = vec![Vec::new(); count];
    for &(from, to) in &topology.edges {
        if from >= count || to >= count {
            return Err(TopologyError::Format(format!(
                "edge [{from}, {to}] references a missing node"
            )));
        }
        succ[from].push(to);
        indeg[to] += 1;
    }
    let mut ready: BTreeSet<NodeId> = (0..count).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(count);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.insert(w);
            }
        }
    }
    if order.len() != count {
        let stuck = (0..count).filter(|&v| indeg[v] > 0).collect();
        return Err(TopologyError::Cyclic(stuck));
    }
    Ok(order)
}

/// Tree test on an arbitrary topology; errors unless it validates.
pub fn is_tree(topology: &NetworkTopology) -> Result<bool, TopologyError> {
    Ok(topology.clone().into_valid()?.is_tree())
}

/// A topology that passed validation, with cached adjacency and evaluation
/// order. Immutable; share freely across threads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidTopology {
    topology: NetworkTopology,
    order: Vec<NodeId>,
    in_edges: Vec<Vec<NodeId>>,
    out_edges: Vec<Vec<NodeId>>,
}

impl ValidTopology {
    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn into_inner(self) -> NetworkTopology {
        self.topology
    }

    pub fn input_dim(&self) -> usize {
        self.topology.input_dim
    }

    pub fn output(&self) -> NodeId {
        self.topology.output
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.topology.nodes[id]
    }

    pub fn node_count(&self) -> usize {
        self.topology.nodes.len()
    }

    /// Evaluation order (ascending id among ties).
    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    /// Argument sources of `id`, in edge-list order.
    pub fn inputs_of(&self, id: NodeId) -> &[NodeId] {
        &self.in_edges[id]
    }

    pub fn consumers_of(&self, id: NodeId) -> &[NodeId] {
        &self.out_edges[id]
    }

    /// True iff every node other than the output feeds exactly one node.
    pub fn is_tree(&self) -> bool {
        (0..self.node_count())
            .filter(|&v| v != self.topology.output)
            .all(|v| self.out_edges[v].len() == 1)
    }

    /// Nodes strictly downstream of `id`, in evaluation order.
    pub fn downstream_of(&self, id: NodeId) -> Vec<NodeId> {
        let mark = flood(&self.out_edges, vec![id]);
        self.order
            .iter()
            .copied()
            .filter(|&v| v != id && mark[v])
            .collect()
    }
}

impl std::ops::Deref for ValidTopology {
    type Target = NetworkTopology;

    fn deref(&self) -> &NetworkTopology {
        &self.topology
    }
}

/// The three-model structure `w(u(x1, x2), v(y1, y2))`: inputs 0..=3 are
/// `x1, x2, y1, y2`, nodes 4 and 5 are `u` and `v`, node 6 is `w`.
pub fn nested_pair_topology() -> NetworkTopology {
    NetworkTopology {
        input_dim: 4,
        nodes: vec![
            NodeKind::Input { index: 0 },
            NodeKind::Input { index: 1 },
            NodeKind::Input { index: 2 },
            NodeKind::Input { index: 3 },
            NodeKind::BlackBox { arity: 2 },
            NodeKind::BlackBox { arity: 2 },
            NodeKind::BlackBox { arity: 2 },
        ],
        edges: vec![(0, 4), (1, 4), (2, 5), (3, 5), (4, 6), (5, 6)],
        output: 6,
    }
}
