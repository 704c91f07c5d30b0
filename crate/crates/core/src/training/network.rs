//! Node parameters and the forward pass shared by both engines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::data::SampleMatrix;
use crate::nodefuncs::{LinearCoupling, SplineNode, DEFAULT_DOMAIN, DEFAULT_GRID};
use crate::par;
use crate::topology::{NodeId, NodeKind, NodeParams, ValidTopology};

/// Parameters of every node, indexed by node id.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    nodes: Vec<Option<NodeParams>>,
}

impl Parameters {
    pub fn new(nodes: Vec<Option<NodeParams>>) -> Self {
        Self { nodes }
    }

    pub fn empty(node_count: usize) -> Self {
        Self::new(vec![None; node_count])
    }

    pub fn get(&self, id: NodeId) -> Option<&NodeParams> {
        self.nodes.get(id).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut NodeParams> {
        self.nodes.get_mut(id).and_then(Option::as_mut)
    }

    pub fn set(&mut self, id: NodeId, params: NodeParams) {
        self.nodes[id] = Some(params);
    }

    pub fn into_inner(self) -> Vec<Option<NodeParams>> {
        self.nodes
    }

    pub fn as_slice(&self) -> &[Option<NodeParams>] {
        &self.nodes
    }

    /// Smooth-engine parameters flattened in node-id order: spline
    /// coefficients, then linear weights followed by the bias.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.nodes.iter().flatten() {
            match p {
                NodeParams::Spline(s) => out.extend_from_slice(s.coefficients()),
                NodeParams::Linear(l) => {
                    out.extend_from_slice(&l.weights);
                    out.push(l.bias);
                }
                NodeParams::Ensemble(_) => {}
            }
        }
        out
    }

    /// Inverse of [`flat_values`](Self::flat_values).
    pub fn set_flat(&mut self, values: &[f64]) {
        let mut at = 0;
        for p in self.nodes.iter_mut().flatten() {
            match p {
                NodeParams::Spline(s) => {
                    let n = s.coefficients().len();
                    s.coefficients_mut().copy_from_slice(&values[at..at + n]);
                    at += n;
                }
                NodeParams::Linear(l) => {
                    let n = l.weights.len();
                    l.weights.copy_from_slice(&values[at..at + n]);
                    l.bias = values[at + n];
                    at += n + 1;
                }
                NodeParams::Ensemble(_) => {}
            }
        }
        assert_eq!(at, values.len(), "flat parameter length mismatch");
    }

    /// Every non-input node carries parameters of its kind and arity.
    pub fn check_shapes(&self, topology: &ValidTopology) -> Result<(), TrainError> {
        if self.nodes.len() != topology.node_count() {
            return Err(TrainError::Shape(format!(
                "{} parameter slots for {} nodes",
                self.nodes.len(),
                topology.node_count()
            )));
        }
        for id in 0..topology.node_count() {
            let fan_in = topology.inputs_of(id).len();
            let shape = |detail: String| TrainError::NodeShape { node: id, detail };
            match (topology.kind(id), self.get(id)) {
                (NodeKind::Input { .. }, None) => {}
                (NodeKind::Input { .. }, Some(_)) => {
                    return Err(shape("input nodes take no parameters".into()))
                }
                (NodeKind::Univariate, Some(NodeParams::Spline(_))) => {}
                (NodeKind::Linear, Some(NodeParams::Linear(l))) => {
                    if l.weights.len() != fan_in {
                        return Err(shape(format!(
                            "{} weights for {fan_in} in-edges",
                            l.weights.len()
                        )));
                    }
                }
                (NodeKind::BlackBox { .. }, Some(NodeParams::Ensemble(e))) => {
                    if e.arity() != fan_in {
                        return Err(shape(format!("ensemble arity {} for {fan_in} in-edges", e.arity())));
                    }
                }
                (kind, None) => return Err(shape(format!("{} node has no parameters", kind.label()))),
                (kind, Some(_)) => {
                    return Err(shape(format!("parameters do not match a {} node", kind.label())))
                }
            }
        }
        Ok(())
    }
}

/// Outputs of every node for a batch of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    outputs: Vec<Vec<f64>>,
    output: NodeId,
}

impl ForwardCache {
    pub fn node(&self, id: NodeId) -> &[f64] {
        &self.outputs[id]
    }

    pub fn predictions(&self) -> &[f64] {
        &self.outputs[self.output]
    }

    pub fn into_outputs(self) -> Vec<Vec<f64>> {
        self.outputs
    }

    pub fn samples(&self) -> usize {
        self.outputs[self.output].len()
    }
}

/// Evaluates one node given the outputs of its sources.
pub(crate) fn eval_node(
    topology: &ValidTopology,
    params: &Parameters,
    id: NodeId,
    outputs: &[Vec<f64>],
    inputs: &SampleMatrix,
) -> Result<Vec<f64>, TrainError> {
    let sources = topology.inputs_of(id);
    let rows = inputs.rows();
    let mut column = vec![0.0; rows];
    match (topology.kind(id), params.get(id)) {
        (NodeKind::Input { index }, _) => {
            if index >= inputs.cols() {
                return Err(TrainError::NodeShape {
                    node: id,
                    detail: format!("input index {index} but data has {} columns", inputs.cols()),
                });
            }
            column.copy_from_slice(inputs.column(index));
        }
        (NodeKind::Univariate, Some(NodeParams::Spline(s))) => {
            let src = &outputs[sources[0]];
            par::fill_indexed(&mut column, |r| s.eval_unchecked(src[r]));
        }
        (NodeKind::Linear, Some(NodeParams::Linear(l))) => {
            let cols: Vec<&[f64]> = sources.iter().map(|&s| outputs[s].as_slice()).collect();
            par::fill_indexed(&mut column, |r| {
                l.weights
                    .iter()
                    .zip(&cols)
                    .fold(l.bias, |acc, (w, c)| acc + w * c[r])
            });
        }
        (NodeKind::BlackBox { .. }, Some(NodeParams::Ensemble(e))) => {
            let cols: Vec<&[f64]> = sources.iter().map(|&s| outputs[s].as_slice()).collect();
            column = e.predict(&cols)?;
        }
        (kind, _) => {
            return Err(TrainError::NodeShape {
                node: id,
                detail: format!("missing or mismatched parameters for {} node", kind.label()),
            })
        }
    }
    if column.iter().any(|v| v.is_nan()) {
        return Err(TrainError::NanOutput { node: id });
    }
    Ok(column)
}

/// Evaluates every node in topological order.
pub fn forward(
    topology: &ValidTopology,
    params: &Parameters,
    inputs: &SampleMatrix,
) -> Result<ForwardCache, TrainError> {
    if inputs.cols() != topology.input_dim() {
        return Err(TrainError::Shape(format!(
            "data has {} columns, topology expects {}",
            inputs.cols(),
            topology.input_dim()
        )));
    }
    let mut outputs = vec![Vec::new(); topology.node_count()];
    for &id in topology.order() {
        outputs[id] = eval_node(topology, params, id, &outputs, inputs)?;
    }
    Ok(ForwardCache {
        outputs,
        output: topology.output(),
    })
}

/// Fills in missing smooth-engine parameters: identity splines on the
/// default domain and grid, linear weights uniform in `+-1/sqrt(fan_in)`
/// with zero bias. Existing parameters are kept.
pub fn init_smooth_params(
    topology: &ValidTopology,
    existing: Parameters,
    seed: u64,
) -> Result<Parameters, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = existing;
    if params.as_slice().len() != topology.node_count() {
        return Err(TrainError::Shape("parameter slots do not match node count".into()));
    }
    for id in 0..topology.node_count() {
        match topology.kind(id) {
            NodeKind::BlackBox { .. } => return Err(TrainError::BlackBoxInGradient { node: id }),
            NodeKind::Univariate if params.get(id).is_none() => {
                params.set(
                    id,
                    NodeParams::Spline(SplineNode::identity(DEFAULT_DOMAIN, DEFAULT_GRID)?),
                );
            }
            NodeKind::Linear if params.get(id).is_none() => {
                let fan_in = topology.inputs_of(id).len();
                let scale = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in).map(|_| rng.gen_range(-scale..scale)).collect();
                params.set(id, NodeParams::Linear(LinearCoupling::new(weights, 0.0)));
            }
            _ => {}
        }
    }
    params.check_shapes(topology)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{NetworkTopology, NodeKind};

    fn identity() -> ValidTopology {
        NetworkTopology {
            input_dim: 1,
            nodes: vec![NodeKind::Input { index: 0 }],
            edges: vec![],
            output: 0,
        }
        .into_valid()
        .unwrap()
    }

    /// w(u(x1, x2), v(y1, y2)) with pass-through splines and sum couplings.
    fn pass_through_pair() -> (ValidTopology, Parameters) {
        let t = NetworkTopology {
            input_dim: 4,
            nodes: vec![
                NodeKind::Input { index: 0 },
                NodeKind::Input { index: 1 },
                NodeKind::Input { index: 2 },
                NodeKind::Input { index: 3 },
                NodeKind::Linear,
                NodeKind::Linear,
                NodeKind::Univariate,
                NodeKind::Univariate,
                NodeKind::Linear,
            ],
            edges: vec![(0, 4), (1, 4), (2, 5), (3, 5), (4, 6), (5, 7), (6, 8), (7, 8)],
            output: 8,
        }
        .into_valid()
        .unwrap();
        let mut p = Parameters::empty(9);
        for id in [4, 5, 8] {
            p.set(id, NodeParams::Linear(LinearCoupling::sum(2)));
        }
        for id in [6, 7] {
            p.set(id, NodeParams::Spline(SplineNode::identity([-4.0, 4.0], 8).unwrap()));
        }
        (t, p)
    }

    #[test]
    fn identity_network_returns_input_column() {
        let t = identity();
        let x = SampleMatrix::from_columns(vec![vec![0.5, -2.0, 7.0]]).unwrap();
        let cache = forward(&t, &Parameters::empty(1), &x).unwrap();
        assert_eq!(cache.predictions(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn composed_identities_sum_inputs() {
        let (t, p) = pass_through_pair();
        let x = SampleMatrix::from_rows(&[vec![1.0, 1.0, 1.0, 1.0], vec![0.5, -0.25, 1.0, 0.0]]).unwrap();
        let cache = forward(&t, &p, &x).unwrap();
        assert!((cache.predictions()[0] - 4.0).abs() < 1e-12);
        assert!((cache.predictions()[1] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_name_the_node() {
        let (t, mut p) = pass_through_pair();
        p.set(8, NodeParams::Linear(LinearCoupling::sum(3)));
        assert!(matches!(p.check_shapes(&t), Err(TrainError::NodeShape { node: 8, .. })));
        let x = SampleMatrix::zeros(2, 3);
        assert!(matches!(forward(&t, &p, &x), Err(TrainError::Shape(_))));
    }

    #[test]
    fn nan_is_reported_with_origin() {
        let (t, p) = pass_through_pair();
        let x = SampleMatrix::from_rows(&[vec![f64::NAN, 1.0, 1.0, 1.0]]).unwrap();
        assert!(matches!(forward(&t, &p, &x), Err(TrainError::NanOutput { node: 0 })));
    }

    #[test]
    fn flat_round_trip() {
        let (t, p) = pass_through_pair();
        let flat = p.flat_values();
        assert_eq!(flat.len(), 3 * 3 + 2 * 11);
        let mut q = init_smooth_params(&t, p.clone(), 0).unwrap();
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        q.set_flat(&shifted);
        assert_eq!(q.flat_values(), shifted);
    }
}
