//! Block-coordinate functional gradient boosting of nested tree ensembles.
//!
//! Every non-input node is a [`TreeEnsembleNode`]. Each round first adds a
//! tree to the output node fitted to the current residuals, then visits the
//! remaining ensembles in ascending id. For such an upstream node `q` the
//! per-sample sensitivity `s_q = [w(q + eps) - w(q - eps)] / (2 eps)` is
//! measured by re-evaluating everything downstream of `q` with its output
//! column shifted, and a tree on `q`'s own inputs is fitted to `s_q * r`.
//! Before round 1 each upstream node receives one depth-2 tree fitted to
//! the final target, so that the output ensemble has something to split on.

use super::network::{eval_node, forward, ForwardCache, Parameters};
use super::{
    mean, normalized_rmse, population_std, Dataset, Engine, EngineConfig, RoundRecord, TrainError,
    TrainingTrace,
};
use crate::nodefuncs::{
    fit_ensemble, fit_tree, BoostParams, RegressionTree, TreeEnsembleNode, TreeParams,
};
use crate::data::SampleMatrix;
use crate::par;
use crate::topology::{NodeId, NodeKind, NodeParams, ValidTopology};

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 5;
const BOOTSTRAP_DEPTH: usize = 2;
/// Doublings of the sensitivity probe for rows where it found no slope.
pub const MAX_WIDENINGS: usize = 5;

/// Which ensembles receive trees during [`train_boosted_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpstreamUpdates {
    /// Output node and every upstream ensemble, as in [`train_boosted`].
    Coordinate,
    /// Only the output node; upstream ensembles keep their bootstrap tree.
    Frozen,
}

/// Result of [`fit_staged`].
#[derive(Clone, Debug, PartialEq)]
pub struct StagedFit {
    pub params: Parameters,
    pub train_rmse_norm: f64,
    pub val_rmse_norm: f64,
    /// Normalized training RMSE of each supervised upstream node.
    pub node_rmse_norm: Vec<(NodeId, f64)>,
}

fn check_boosted(topology: &ValidTopology, config: &EngineConfig) -> Result<(), TrainError> {
    config.check()?;
    if config.engine != Engine::Boosted {
        return Err(TrainError::EngineMismatch(
            "train_boosted needs engine = boosted".into(),
        ));
    }
    for id in 0..topology.node_count() {
        match topology.kind(id) {
            NodeKind::Input { .. } | NodeKind::BlackBox { .. } => {}
            kind => {
                return Err(TrainError::EngineMismatch(format!(
                    "node {id} is a {} node; the boosted engine only trains black-box ensembles",
                    kind.label()
                )))
            }
        }
    }
    Ok(())
}

fn check_datasets(train: &Dataset, val: &Dataset) -> Result<(), TrainError> {
    for ds in [train, val] {
        if ds.len() < 2 {
            return Err(TrainError::TooFewSamples(ds.len()));
        }
        if !(population_std(ds.targets()) > 0.0) {
            return Err(TrainError::DegenerateTarget);
        }
    }
    Ok(())
}

fn tree_params(config: &EngineConfig) -> TreeParams {
    TreeParams {
        max_depth: config.tree_depth,
        min_leaf_count: config.min_leaf_count,
    }
}

fn ensemble(params: &Parameters, id: NodeId) -> &TreeEnsembleNode {
    match params.get(id) {
        Some(NodeParams::Ensemble(e)) => e,
        _ => unreachable!("boosted parameters hold an ensemble at every non-input node"),
    }
}

fn ensemble_mut(params: &mut Parameters, id: NodeId) -> &mut TreeEnsembleNode {
    match params.get_mut(id) {
        Some(NodeParams::Ensemble(e)) => e,
        _ => unreachable!("boosted parameters hold an ensemble at every non-input node"),
    }
}

fn source_columns<'a>(topology: &ValidTopology, outputs: &'a [Vec<f64>], id: NodeId) -> Vec<&'a [f64]> {
    topology.inputs_of(id).iter().map(|&s| outputs[s].as_slice()).collect()
}

fn mse(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / targets.len() as f64
}

/// Node outputs kept in sync with the parameters as trees are appended.
struct State<'a> {
    topology: &'a ValidTopology,
    train: &'a Dataset,
    val: &'a Dataset,
    train_out: Vec<Vec<f64>>,
    val_out: Vec<Vec<f64>>,
}

impl<'a> State<'a> {
    fn new(
        topology: &'a ValidTopology,
        params: &Parameters,
        train: &'a Dataset,
        val: &'a Dataset,
    ) -> Result<Self, TrainError> {
        Ok(Self {
            topology,
            train,
            val,
            train_out: forward(topology, params, train.inputs())?.into_outputs(),
            val_out: forward(topology, params, val.inputs())?.into_outputs(),
        })
    }

    /// Appends `tree` to node `id`, adds its shrunk contribution to the
    /// cached column and re-evaluates everything downstream.
    fn append(&mut self, params: &mut Parameters, id: NodeId, tree: RegressionTree) -> Result<(), TrainError> {
        let step = ensemble(params, id).shrinkage();
        for (outputs, inputs) in [
            (&mut self.train_out, self.train.inputs()),
            (&mut self.val_out, self.val.inputs()),
        ] {
            let delta = {
                let cols = source_columns(self.topology, outputs, id);
                par::map_range(inputs.rows(), |r| tree.predict_with(|f| cols[f][r]))
            };
            for (o, d) in outputs[id].iter_mut().zip(delta) {
                *o += step * d;
            }
            if outputs[id].iter().any(|v| v.is_nan()) {
                return Err(TrainError::NanOutput { node: id });
            }
        }
        ensemble_mut(params, id).push(tree)?;
        for down in self.topology.downstream_of(id) {
            self.train_out[down] = eval_node(self.topology, params, down, &self.train_out, self.train.inputs())?;
            self.val_out[down] = eval_node(self.topology, params, down, &self.val_out, self.val.inputs())?;
        }
        Ok(())
    }

    fn residuals(&self) -> Vec<f64> {
        let pred = &self.train_out[self.topology.output()];
        self.train.targets().iter().zip(pred).map(|(t, p)| t - p).collect()
    }

    /// Central-difference derivative of the network output with respect to
    /// the output column of `id`, per training sample. Rows whose
    /// difference is exactly zero are probed again with the step doubled,
    /// up to [`MAX_WIDENINGS`] times, because piecewise-constant downstream
    /// ensembles are flat between their split thresholds.
    fn sensitivity(&self, params: &Parameters, id: NodeId, eps_fraction: f64) -> Result<Vec<f64>, TrainError> {
        let spread = population_std(&self.train_out[id]);
        let base_eps = if spread > 0.0 { eps_fraction * spread } else { eps_fraction };
        let downstream = self.topology.downstream_of(id);
        let output = self.topology.output();
        let shifted = |outputs: &[Vec<f64>], inputs: &SampleMatrix, delta: f64| -> Result<Vec<f64>, TrainError> {
            let mut outputs = outputs.to_vec();
            for v in outputs[id].iter_mut() {
                *v += delta;
            }
            for &down in &downstream {
                outputs[down] = eval_node(self.topology, params, down, &outputs, inputs)?;
            }
            Ok(std::mem::take(&mut outputs[output]))
        };
        let central = |outputs: &[Vec<f64>], inputs: &SampleMatrix, eps: f64| -> Result<Vec<f64>, TrainError> {
            let (plus, minus) = par::join(|| shifted(outputs, inputs, eps), || shifted(outputs, inputs, -eps));
            let (plus, minus) = (plus?, minus?);
            Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
        };

        let mut sens = central(&self.train_out, self.train.inputs(), base_eps)?;
        let mut eps = base_eps;
        for _ in 0..MAX_WIDENINGS {
            let pending: Vec<usize> = (0..sens.len()).filter(|&r| sens[r] == 0.0).collect();
            if pending.is_empty() {
                break;
            }
            eps *= 2.0;
            let sub_out: Vec<Vec<f64>> = self
                .train_out
                .iter()
                .map(|col| if col.is_empty() { Vec::new() } else { pending.iter().map(|&r| col[r]).collect() })
                .collect();
            let sub_in = self.train.inputs().select_rows(&pending);
            let sub = central(&sub_out, &sub_in, eps)?;
            for (&r, v) in pending.iter().zip(sub) {
                sens[r] = v;
            }
        }
        Ok(sens)
    }

    fn record(&self, round: usize) -> Result<RoundRecord, TrainError> {
        let out = self.topology.output();
        Ok(RoundRecord {
            round,
            train_rmse_norm: normalized_rmse(&self.train_out[out], self.train.targets())?,
            val_rmse_norm: normalized_rmse(&self.val_out[out], self.val.targets())?,
        })
    }
}

/// Trains every ensemble of `topology` from scratch on the final target
/// only. One trace record per round.
pub fn train_boosted(
    topology: &ValidTopology,
    train: &Dataset,
    val: &Dataset,
    config: &EngineConfig,
) -> Result<(Parameters, TrainingTrace), TrainError> {
    train_boosted_with(topology, train, val, config, UpstreamUpdates::Coordinate)
}

/// [`train_boosted`] with a choice of which ensembles are updated.
pub fn train_boosted_with(
    topology: &ValidTopology,
    train: &Dataset,
    val: &Dataset,
    config: &EngineConfig,
    updates: UpstreamUpdates,
) -> Result<(Parameters, TrainingTrace), TrainError> {
    check_boosted(topology, config)?;
    check_datasets(train, val)?;
    let output = topology.output();
    if topology.kind(output).is_input() {
        return Err(TrainError::EngineMismatch("the output node is a raw input".into()));
    }
    let step = config.learning_rate;
    let upstream: Vec<NodeId> = (0..topology.node_count())
        .filter(|&id| id != output && !topology.kind(id).is_input())
        .collect();

    let mut params = Parameters::empty(topology.node_count());
    for id in (0..topology.node_count()).filter(|&id| !topology.kind(id).is_input()) {
        let base = if id == output { mean(train.targets()) } else { 0.0 };
        let arity = topology.inputs_of(id).len();
        params.set(id, NodeParams::Ensemble(TreeEnsembleNode::new(arity, base, step)?));
    }

    let mut state = State::new(topology, &params, train, val)?;
    // Bootstrap: one shallow tree per upstream node against the final target,
    // scaled so that after shrinkage it contributes at full strength.
    let bootstrap = TreeParams {
        max_depth: BOOTSTRAP_DEPTH,
        min_leaf_count: config.min_leaf_count,
    };
    for &id in &upstream {
        let cols = source_columns(topology, &state.train_out, id);
        let mut tree = fit_tree(&cols, train.targets(), bootstrap)?;
        tree.scale_leaves(1.0 / step);
        state.append(&mut params, id, tree)?;
    }

    let initial_loss = mse(&state.train_out[output], train.targets());
    let mut trace = TrainingTrace::new(config.seed, Engine::Boosted, config.digest());
    let tree_cfg = tree_params(config);
    let mut over = 0usize;

    for round in 1..=config.rounds {
        let residual = state.residuals();
        let tree = {
            let cols = source_columns(topology, &state.train_out, output);
            fit_tree(&cols, &residual, tree_cfg)?
        };
        state.append(&mut params, output, tree)?;

        if updates == UpstreamUpdates::Coordinate {
            for &id in &upstream {
                let residual = state.residuals();
                let sens = state.sensitivity(&params, id, config.fd_epsilon)?;
                let pseudo: Vec<f64> = sens.iter().zip(&residual).map(|(s, r)| s * r).collect();
                let tree = {
                    let cols = source_columns(topology, &state.train_out, id);
                    fit_tree(&cols, &pseudo, tree_cfg)?
                };
                state.append(&mut params, id, tree)?;
            }
        }

        let record = state.record(round)?;
        log::debug!(
            "boosted round {round}: train {:.6} val {:.6}",
            record.train_rmse_norm,
            record.val_rmse_norm
        );
        trace.push(record);

        let loss = mse(&state.train_out[output], train.targets());
        over = if !(loss <= DIVERGENCE_FACTOR * initial_loss) { over + 1 } else { 0 };
        if over >= DIVERGENCE_PATIENCE {
            return Err(TrainError::Diverged {
                round,
                initial: initial_loss,
                loss,
                trace: Box::new(trace),
            });
        }
    }
    Ok((params, trace))
}

/// Fits each ensemble directly against its own target, in topological
/// order, with plain least-squares boosting. `node_targets` supplies
/// training targets for upstream nodes; the output node uses the dataset
/// target. Downstream nodes see the fitted (not the true) upstream outputs.
pub fn fit_staged(
    topology: &ValidTopology,
    train: &Dataset,
    val: &Dataset,
    node_targets: &[(NodeId, &[f64])],
    config: &EngineConfig,
) -> Result<StagedFit, TrainError> {
    check_boosted(topology, config)?;
    check_datasets(train, val)?;
    let output = topology.output();
    let boost = BoostParams {
        rounds: config.rounds,
        shrinkage: config.learning_rate,
        tree: tree_params(config),
    };
    let mut params = Parameters::empty(topology.node_count());
    let mut train_out: Vec<Vec<f64>> = vec![Vec::new(); topology.node_count()];
    let mut val_out: Vec<Vec<f64>> = vec![Vec::new(); topology.node_count()];
    let mut node_rmse_norm = Vec::new();

    for &id in topology.order() {
        if !topology.kind(id).is_input() {
            let target: &[f64] = if id == output {
                train.targets()
            } else {
                node_targets
                    .iter()
                    .find(|(n, _)| *n == id)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| TrainError::InvalidConfig(format!("no staged target for node {id}")))?
            };
            if target.len() != train.len() {
                return Err(TrainError::Shape(format!(
                    "staged target for node {id} has {} rows, dataset has {}",
                    target.len(),
                    train.len()
                )));
            }
            let cols = source_columns(topology, &train_out, id);
            let (fitted, _) = fit_ensemble(&cols, target, boost)?;
            params.set(id, NodeParams::Ensemble(fitted));
            if id != output {
                let pred = ensemble(&params, id).predict(&cols)?;
                node_rmse_norm.push((id, normalized_rmse(&pred, target)?));
            }
        }
        train_out[id] = eval_node(topology, &params, id, &train_out, train.inputs())?;
        val_out[id] = eval_node(topology, &params, id, &val_out, val.inputs())?;
    }

    Ok(StagedFit {
        train_rmse_norm: normalized_rmse(&train_out[output], train.targets())?,
        val_rmse_norm: normalized_rmse(&val_out[output], val.targets())?,
        params,
        node_rmse_norm,
    })
}

/// Forward pass convenience used by callers that only need predictions.
pub fn predict(topology: &ValidTopology, params: &Parameters, data: &Dataset) -> Result<ForwardCache, TrainError> {
    forward(topology, params, data.inputs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleMatrix;
    use crate::topology::nested_pair_topology;
    use crate::training::Split;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(rows: usize, seed: u64, split: Split, f: fn(&[f64]) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows_v: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y = rows_v.iter().map(|r| f(r)).collect();
        Dataset::new(SampleMatrix::from_rows(&rows_v).unwrap(), y, split).unwrap()
    }

    fn z(r: &[f64]) -> f64 {
        r[0] * r[0] * r[1] + r[2] * r[3] * r[3]
    }

    fn small_config(rounds: usize) -> EngineConfig {
        EngineConfig {
            rounds,
            ..EngineConfig::boosted()
        }
    }

    #[test]
    fn frozen_upstream_gives_monotone_training_loss() {
        let t = nested_pair_topology().into_valid().unwrap();
        let train = data(800, 1, Split::Train, z);
        let val = data(200, 2, Split::Validation, z);
        let (_, trace) = train_boosted_with(&t, &train, &val, &small_config(40), UpstreamUpdates::Frozen).unwrap();
        for pair in trace.records.windows(2) {
            assert!(pair[1].train_rmse_norm <= pair[0].train_rmse_norm + 1e-12);
        }
    }

    #[test]
    fn runs_are_bit_identical() {
        let t = nested_pair_topology().into_valid().unwrap();
        let train = data(500, 3, Split::Train, z);
        let val = data(100, 4, Split::Validation, z);
        let a = train_boosted(&t, &train, &val, &small_config(10)).unwrap();
        let b = train_boosted(&t, &train, &val, &small_config(10)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.records.len(), 10);
    }

    #[test]
    fn cached_outputs_match_a_fresh_forward_pass() {
        let t = nested_pair_topology().into_valid().unwrap();
        let train = data(400, 5, Split::Train, z);
        let val = data(100, 6, Split::Validation, z);
        let (params, trace) = train_boosted(&t, &train, &val, &small_config(8)).unwrap();
        let pred = predict(&t, &params, &val).unwrap();
        let fresh = normalized_rmse(pred.predictions(), val.targets()).unwrap();
        assert!((fresh - trace.final_val().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rejects_smooth_nodes_and_wrong_engine() {
        let t = nested_pair_topology().into_valid().unwrap();
        let train = data(50, 7, Split::Train, z);
        let err = train_boosted(&t, &train, &train, &EngineConfig::smooth()).unwrap_err();
        assert!(matches!(err, TrainError::EngineMismatch(_)));
        let mut raw = nested_pair_topology();
        raw.nodes[4] = NodeKind::Linear;
        let t = raw.into_valid().unwrap();
        let err = train_boosted(&t, &train, &train, &small_config(1)).unwrap_err();
        assert!(matches!(err, TrainError::EngineMismatch(_)));
    }

    #[test]
    fn staged_fit_needs_every_upstream_target() {
        let t = nested_pair_topology().into_valid().unwrap();
        let train = data(100, 8, Split::Train, z);
        let u: Vec<f64> = (0..100).map(|r| train.inputs().get(r, 0)).collect();
        let err = fit_staged(&t, &train, &train, &[(4, &u)], &small_config(5)).unwrap_err();
        assert!(matches!(err, TrainError::InvalidConfig(_)));
    }
}
