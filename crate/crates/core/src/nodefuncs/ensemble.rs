use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, RegressionTree, TreeParams};
use super::NodeError;
use crate::par;

/// Boosted tree ensemble: `base_value + shrinkage * sum_t tree_t(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleRepr", into = "EnsembleRepr")]
pub struct TreeEnsembleNode {
    arity: usize,
    base_value: f64,
    shrinkage: f64,
    trees: Vec<RegressionTree>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleRepr {
    arity: usize,
    base_value: f64,
    shrinkage: f64,
    trees: Vec<RegressionTree>,
}

impl From<TreeEnsembleNode> for EnsembleRepr {
    fn from(e: TreeEnsembleNode) -> Self {
        EnsembleRepr {
            arity: e.arity,
            base_value: e.base_value,
            shrinkage: e.shrinkage,
            trees: e.trees,
        }
    }
}

impl TryFrom<EnsembleRepr> for TreeEnsembleNode {
    type Error = NodeError;

    fn try_from(r: EnsembleRepr) -> Result<Self, NodeError> {
        let mut e = TreeEnsembleNode::new(r.arity, r.base_value, r.shrinkage)?;
        for t in r.trees {
            e.push(t)?;
        }
        Ok(e)
    }
}

impl TreeEnsembleNode {
    pub fn new(arity: usize, base_value: f64, shrinkage: f64) -> Result<Self, NodeError> {
        if !(shrinkage > 0.0 && shrinkage <= 1.0) {
            return Err(NodeError::InvalidShrinkage(shrinkage));
        }
        if !base_value.is_finite() {
            return Err(NodeError::InvalidTree("base value must be finite".into()));
        }
        Ok(Self {
            arity,
            base_value,
            shrinkage,
            trees: Vec::new(),
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// Appends a tree; its splits must only use features below the arity.
    pub fn push(&mut self, tree: RegressionTree) -> Result<(), NodeError> {
        if let Some(f) = tree.max_feature() {
            if f >= self.arity {
                return Err(NodeError::ArityMismatch {
                    expected: self.arity,
                    found: f + 1,
                });
            }
        }
        self.trees.push(tree);
        Ok(())
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict_with(|f| row[f])
    }

    #[inline]
    pub fn predict_with(&self, feature: impl Fn(usize) -> f64 + Copy) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_with(feature)).sum();
        self.base_value + self.shrinkage * sum
    }

    /// Per-row prediction over column-major features.
    pub fn predict(&self, features: &[&[f64]]) -> Result<Vec<f64>, NodeError> {
        if features.len() != self.arity {
            return Err(NodeError::ArityMismatch {
                expected: self.arity,
                found: features.len(),
            });
        }
        let rows = features.first().map_or(0, |c| c.len());
        if let Some(bad) = features.iter().find(|c| c.len() != rows) {
            return Err(NodeError::RowMismatch {
                features: bad.len(),
                targets: rows,
            });
        }
        // Tree-major within each chunk keeps one tree hot in cache; each row
        // still sums its trees in order, so results equal `predict_with`.
        let chunks = par::map_chunks(rows, |range| {
            let mut acc = vec![0.0; range.len()];
            for tree in &self.trees {
                for (slot, r) in acc.iter_mut().zip(range.clone()) {
                    *slot += tree.predict_with(|f| features[f][r]);
                }
            }
            acc
        });
        Ok(chunks
            .into_iter()
            .flatten()
            .map(|sum| self.base_value + self.shrinkage * sum)
            .collect())
    }
}

/// Settings for plain least-squares gradient boosting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub shrinkage: f64,
    pub tree: TreeParams,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            rounds: 300,
            shrinkage: 0.1,
            tree: TreeParams::default(),
        }
    }
}

/// Least-squares boosting from the target mean. Returns the ensemble and
/// the training SSE after each round (index 0 is the base prediction).
pub fn fit_ensemble(
    features: &[&[f64]],
    targets: &[f64],
    params: BoostParams,
) -> Result<(TreeEnsembleNode, Vec<f64>), NodeError> {
    if targets.is_empty() {
        return Err(NodeError::EmptyDataset);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let mut ensemble = TreeEnsembleNode::new(features.len(), mean, params.shrinkage)?;
    let mut pred = vec![mean; targets.len()];
    let sse = |p: &[f64]| -> f64 { p.iter().zip(targets).map(|(a, b)| (a - b).powi(2)).sum() };
    let mut history = vec![sse(&pred)];
    let mut residual = vec![0.0; targets.len()];
    for _ in 0..params.rounds {
        for (r, (t, p)) in residual.iter_mut().zip(targets.iter().zip(&pred)) {
            *r = t - p;
        }
        let tree = fit_tree(features, &residual, params.tree)?;
        let step = params.shrinkage;
        par::fill_indexed(&mut residual, |r| tree.predict_with(|f| features[f][r]));
        for (p, t) in pred.iter_mut().zip(&residual) {
            *p += step * t;
        }
        ensemble.push(tree)?;
        history.push(sse(&pred));
    }
    Ok((ensemble, history))
}
