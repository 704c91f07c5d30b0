//! JSON topology documents.
//!
//! ```json
//! {
//!   "input_dim": 2,
//!   "nodes": [
//!     {"id": 0, "kind": "input", "params": {"index": 0}},
//!     {"id": 1, "kind": "input", "params": {"index": 1}},
//!     {"id": 2, "kind": "univariate"},
//!     {"id": 3, "kind": "linear", "params": {"weights": [1.0, 0.5], "bias": 0.0}}
//!   ],
//!   "edges": [[0, 2], [2, 3], [1, 3]],
//!   "output": 3
//! }
//! ```
//!
//! `kind` is one of `input`, `univariate`, `linear`, `blackbox`. `params` is
//! required for `input` (`{"index"}`) and `blackbox` (`{"arity"}` plus an
//! optional `"ensemble"`), and optional for `univariate` (a spline:
//! `{"domain", "grid_intervals", "coefficients"}`) and `linear`
//! (`{"weights", "bias"}`). Node ids must be exactly `0..N`. Unknown fields
//! anywhere are rejected.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{NetworkTopology, NodeKind, TopologyError};
use crate::nodefuncs::{LinearCoupling, SplineNode, TreeEnsembleNode};

/// Trainable parameters attached to a node.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeParams {
    Spline(SplineNode),
    Linear(LinearCoupling),
    Ensemble(TreeEnsembleNode),
}

/// A topology together with whatever node parameters the file carried.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkDocument {
    pub topology: NetworkTopology,
    /// Indexed by node id; `None` for inputs and for untrained nodes.
    pub params: Vec<Option<NodeParams>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    input_dim: usize,
    nodes: Vec<RawNode>,
    edges: Vec<[usize; 2]>,
    output: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: usize,
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<Value>,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    Input,
    Univariate,
    Linear,
    Blackbox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputParams {
    index: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlackBoxParams {
    arity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ensemble: Option<TreeEnsembleNode>,
}

fn json_error(e: serde_json::Error) -> TopologyError {
    TopologyError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn params_of<T: for<'de> Deserialize<'de>>(
    id: usize,
    value: Option<Value>,
) -> Result<Option<T>, TopologyError> {
    value
        .map(|v| {
            serde_json::from_value(v)
                .map_err(|e| TopologyError::Format(format!("node {id}: invalid params: {e}")))
        })
        .transpose()
}

impl NetworkDocument {
    /// Parses a topology document. Structural rules are not checked here;
    /// call [`NetworkTopology::validate`] for that.
    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let raw: RawDocument = serde_json::from_str(text).map_err(json_error)?;
        let count = raw.nodes.len();
        let mut kinds: Vec<Option<NodeKind>> = vec![None; count];
        let mut params: Vec<Option<NodeParams>> = vec![None; count];
        for node in raw.nodes {
            let id = node.id;
            if id >= count {
                return Err(TopologyError::Format(format!(
                    "node id {id} out of range: ids must be 0..{count}"
                )));
            }
            if kinds[id].is_some() {
                return Err(TopologyError::Format(format!("duplicate node id {id}")));
            }
            let (kind, param) = match node.kind {
                RawKind::Input => {
                    let p: InputParams = params_of(id, node.params)?.ok_or_else(|| {
                        TopologyError::Format(format!("node {id}: input needs params.index"))
                    })?;
                    (NodeKind::Input { index: p.index }, None)
                }
                RawKind::Univariate => (
                    NodeKind::Univariate,
                    params_of::<SplineNode>(id, node.params)?.map(NodeParams::Spline),
                ),
                RawKind::Linear => (
                    NodeKind::Linear,
                    params_of::<LinearCoupling>(id, node.params)?.map(NodeParams::Linear),
                ),
                RawKind::Blackbox => {
                    let p: BlackBoxParams = params_of(id, node.params)?.ok_or_else(|| {
                        TopologyError::Format(format!("node {id}: blackbox needs params.arity"))
                    })?;
                    if let Some(e) = &p.ensemble {
                        if e.arity() != p.arity {
                            return Err(TopologyError::Format(format!(
                                "node {id}: ensemble arity {} differs from node arity {}",
                                e.arity(),
                                p.arity
                            )));
                        }
                    }
                    (
                        NodeKind::BlackBox { arity: p.arity },
                        p.ensemble.map(NodeParams::Ensemble),
                    )
                }
            };
            kinds[id] = Some(kind);
            params[id] = param;
        }
        let nodes = kinds
            .into_iter()
            .map(|k| k.expect("every id in 0..count was assigned exactly once"))
            .collect();
        Ok(Self {
            topology: NetworkTopology {
                input_dim: raw.input_dim,
                nodes,
                edges: raw.edges.into_iter().map(|[a, b]| (a, b)).collect(),
                output: raw.output,
            },
            params,
        })
    }

    pub fn from_topology(topology: NetworkTopology) -> Self {
        let params = vec![None; topology.nodes.len()];
        Self { topology, params }
    }

    /// Pretty JSON with nodes in id order. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_json(&self) -> String {
        let nodes = self
            .topology
            .nodes
            .iter()
            .enumerate()
            .map(|(id, kind)| {
                let param = self.params.get(id).and_then(Option::as_ref);
                let (kind, params) = match *kind {
                    NodeKind::Input { index } => (
                        RawKind::Input,
                        Some(serde_json::to_value(InputParams { index })),
                    ),
                    NodeKind::Univariate => (
                        RawKind::Univariate,
                        match param {
                            Some(NodeParams::Spline(s)) => Some(serde_json::to_value(s)),
                            _ => None,
                        },
                    ),
                    NodeKind::Linear => (
                        RawKind::Linear,
                        match param {
                            Some(NodeParams::Linear(l)) => Some(serde_json::to_value(l)),
                            _ => None,
                        },
                    ),
                    NodeKind::BlackBox { arity } => (
                        RawKind::Blackbox,
                        Some(serde_json::to_value(BlackBoxParams {
                            arity,
                            ensemble: match param {
                                Some(NodeParams::Ensemble(e)) => Some(e.clone()),
                                _ => None,
                            },
                        })),
                    ),
                };
                RawNode {
                    id,
                    kind,
                    params: params.map(|p| p.expect("parameter types serialize to JSON")),
                }
            })
            .collect();
        let raw = RawDocument {
            input_dim: self.topology.input_dim,
            nodes,
            edges: self.topology.edges.iter().map(|&(a, b)| [a, b]).collect(),
            output: self.topology.output,
        };
        let mut text = serde_json::to_string_pretty(&raw).expect("document serializes");
        text.push('\n');
        text
    }
}
