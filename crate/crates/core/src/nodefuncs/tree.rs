//! Greedy variance-reduction CART regression trees.

use serde::{Deserialize, Serialize};

use super::NodeError;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go to `left`, the rest to `right`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf_count: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_leaf_count: 5,
        }
    }
}

/// Binary regression tree stored as a flat node array rooted at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr", into = "TreeRepr")]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
    max_depth: usize,
    min_leaf_count: usize,
    layout: Layout,
}

/// The tree padded to a complete binary tree of its own depth, so that
/// prediction walks a fixed number of levels without data-dependent
/// branches. A leaf above the bottom level is copied into every slot
/// below it, which makes the split stored above those copies irrelevant.
#[derive(Clone, Debug, PartialEq, Default)]
struct Layout {
    depth: u32,
    features: Vec<u32>,
    thresholds: Vec<f64>,
    leaves: Vec<f64>,
}

/// Deeper trees fall back to walking the node array.
const MAX_LAYOUT_DEPTH: usize = 16;

impl Layout {
    fn build(nodes: &[TreeNode], depth: usize) -> Self {
        if depth > MAX_LAYOUT_DEPTH {
            return Self::default();
        }
        let internal = (1usize << depth) - 1;
        let mut layout = Layout {
            depth: depth as u32,
            features: vec![0; internal],
            thresholds: vec![0.0; internal],
            leaves: vec![0.0; internal + 1],
        };
        layout.fill(nodes, 0, 0, 0, depth);
        layout
    }

    fn fill(&mut self, nodes: &[TreeNode], node: usize, slot: usize, level: usize, depth: usize) {
        if level == depth {
            if let TreeNode::Leaf(v) = nodes[node] {
                self.leaves[slot - self.features.len()] = v;
            }
            return;
        }
        match nodes[node] {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                self.features[slot] = feature as u32;
                self.thresholds[slot] = threshold;
                self.fill(nodes, left, 2 * slot + 1, level + 1, depth);
                self.fill(nodes, right, 2 * slot + 2, level + 1, depth);
            }
            TreeNode::Leaf(_) => {
                self.fill(nodes, node, 2 * slot + 1, level + 1, depth);
                self.fill(nodes, node, 2 * slot + 2, level + 1, depth);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRepr {
    max_depth: usize,
    min_leaf_count: usize,
    nodes: Vec<TreeNode>,
}

impl From<RegressionTree> for TreeRepr {
    fn from(t: RegressionTree) -> Self {
        TreeRepr {
            max_depth: t.max_depth,
            min_leaf_count: t.min_leaf_count,
            nodes: t.nodes,
        }
    }
}

impl TryFrom<TreeRepr> for RegressionTree {
    type Error = NodeError;

    fn try_from(r: TreeRepr) -> Result<Self, NodeError> {
        let mut tree = RegressionTree {
            nodes: r.nodes,
            max_depth: r.max_depth,
            min_leaf_count: r.min_leaf_count,
            layout: Layout::default(),
        };
        tree.check()?;
        tree.relayout();
        Ok(tree)
    }
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        let mut tree = Self {
            nodes: vec![TreeNode::Leaf(value)],
            max_depth: 0,
            min_leaf_count: 1,
            layout: Layout::default(),
        };
        tree.relayout();
        tree
    }

    fn relayout(&mut self) {
        self.layout = Layout::build(&self.nodes, self.depth());
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf_count: self.min_leaf_count,
        }
    }

    /// Depth of the deepest leaf (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf(_)))
            .count()
    }

    /// Largest feature index used by a split, if any.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf(_) => None,
            })
            .max()
    }

    /// Multiplies every leaf value by `factor`.
    pub fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let TreeNode::Leaf(v) = n {
                *v *= factor;
            }
        }
        self.relayout();
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict_with(|f| row[f])
    }

    /// Prediction with features looked up by `feature(index)`.
    #[inline]
    pub fn predict_with(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let l = &self.layout;
        if l.leaves.is_empty() {
            return self.walk(feature);
        }
        let mut i = 0usize;
        for _ in 0..l.depth {
            let go_right = !(feature(l.features[i] as usize) < l.thresholds[i]);
            i = 2 * i + 1 + go_right as usize;
        }
        l.leaves[i - l.features.len()]
    }

    fn walk(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature: f,
                    threshold,
                    left,
                    right,
                } => i = if feature(f) < threshold { left } else { right },
            }
        }
    }

    /// Structural check: children in range and acyclic (child index greater
    /// than parent), finite leaves, every internal node with two children.
    fn check(&self) -> Result<(), NodeError> {
        if self.nodes.is_empty() {
            return Err(NodeError::InvalidTree("tree has no nodes".into()));
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                TreeNode::Leaf(v) if !v.is_finite() => {
                    return Err(NodeError::InvalidTree(format!("leaf {i} is not finite")));
                }
                TreeNode::Leaf(_) => {}
                TreeNode::Split {
                    left,
                    right,
                    threshold,
                    ..
                } => {
                    if threshold.is_nan() {
                        return Err(NodeError::InvalidTree(format!("split {i} has NaN threshold")));
                    }
                    for c in [left, right] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(NodeError::InvalidTree(format!(
                                "split {i} has invalid child {c}"
                            )));
                        }
                        parents[c] += 1;
                    }
                    if left == right {
                        return Err(NodeError::InvalidTree(format!("split {i} has equal children")));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(NodeError::InvalidTree(
                "every non-root node needs exactly one parent".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Fits a regression tree to `targets` with greedy sum-of-squares splits.
///
/// `features` holds one slice per feature, each as long as `targets`.
/// Candidate thresholds are midpoints between consecutive distinct sorted
/// values; a split must leave at least `min_leaf_count` rows on each side.
/// Ties go to the lowest feature index, then the lowest threshold.
pub fn fit_tree(
    features: &[&[f64]],
    targets: &[f64],
    params: TreeParams,
) -> Result<RegressionTree, NodeError> {
    let rows = targets.len();
    if rows == 0 {
        return Err(NodeError::EmptyDataset);
    }
    if let Some(bad) = features.iter().find(|c| c.len() != rows) {
        return Err(NodeError::RowMismatch {
            features: bad.len(),
            targets: rows,
        });
    }
    if features.iter().any(|c| c.iter().any(|v| v.is_nan())) || targets.iter().any(|v| v.is_nan()) {
        return Err(NodeError::NanInput);
    }
    let min_leaf = params.min_leaf_count.max(1);

    // One index list per feature, sorted by value (ties by row).
    let sorted: Vec<Vec<u32>> = par::map_slice(features, |col| {
        let mut idx: Vec<u32> = (0..rows as u32).collect();
        idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
        idx
    });

    let mut builder = Builder {
        features,
        targets,
        max_depth: params.max_depth,
        min_leaf,
        nodes: Vec::new(),
        goes_left: vec![false; rows],
    };
    builder.grow(sorted, 0);
    let mut tree = RegressionTree {
        nodes: builder.nodes,
        max_depth: params.max_depth,
        min_leaf_count: params.min_leaf_count,
        layout: Layout::default(),
    };
    tree.relayout();
    Ok(tree)
}

struct Builder<'a> {
    features: &'a [&'a [f64]],
    targets: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
    goes_left: Vec<bool>,
}

impl Builder<'_> {
    /// Grows the subtree for the rows listed (per feature, in sorted order)
    /// in `sorted`; returns its node index.
    fn grow(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let members: &[u32] = match sorted.first() {
            Some(m) => m,
            None => &[],
        };
        let count = if sorted.is_empty() {
            // Feature-less data: only a leaf is possible.
            self.targets.len()
        } else {
            members.len()
        };
        let mean = if sorted.is_empty() {
            self.targets.iter().sum::<f64>() / count as f64
        } else {
            members.iter().map(|&r| self.targets[r as usize]).sum::<f64>() / count as f64
        };

        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf(mean));
        if sorted.is_empty() || depth >= self.max_depth || count < 2 * self.min_leaf {
            return at;
        }
        let Some(best) = self.best_split(&sorted, mean) else {
            return at;
        };

        let col = self.features[best.feature];
        for &r in members {
            self.goes_left[r as usize] = col[r as usize] < best.threshold;
        }
        let (left_sorted, right_sorted): (Vec<Vec<u32>>, Vec<Vec<u32>>) = sorted
            .into_iter()
            .map(|list| list.into_iter().partition(|&r| self.goes_left[r as usize]))
            .unzip();

        let left = self.grow(left_sorted, depth + 1);
        let right = self.grow(right_sorted, depth + 1);
        self.nodes[at] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }

    fn best_split(&self, sorted: &[Vec<u32>], mean: f64) -> Option<Candidate> {
        let targets = self.targets;
        let min_leaf = self.min_leaf;
        let node_sse: f64 = sorted[0]
            .iter()
            .map(|&r| (targets[r as usize] - mean).powi(2))
            .sum();
        if !(node_sse > 0.0) {
            return None;
        }
        let per_feature = par::map_range(sorted.len(), |f| {
            best_for_feature(self.features[f], &sorted[f], targets, mean, min_leaf)
                .map(|(gain, threshold)| Candidate {
                    gain,
                    feature: f,
                    threshold,
                })
        });
        // Sequential reduction in feature order keeps the tie-break fixed.
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.map_or(true, |b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best.filter(|b| b.gain > 1e-12 * node_sse)
    }
}

/// Best `(gain, threshold)` along one feature, scanning thresholds upward.
fn best_for_feature(
    col: &[f64],
    order: &[u32],
    targets: &[f64],
    mean: f64,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let n = order.len();
    let total: f64 = order.iter().map(|&r| targets[r as usize] - mean).sum();
    let mut left_sum = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for j in 0..n - 1 {
        let r = order[j] as usize;
        left_sum += targets[r] - mean;
        let left_n = j + 1;
        if left_n < min_leaf {
            continue;
        }
        if n - left_n < min_leaf {
            break;
        }
        let lo = col[r];
        let hi = col[order[j + 1] as usize];
        if lo == hi {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / left_n as f64
            + right_sum * right_sum / (n - left_n) as f64
            - total * total / n as f64;
        if best.map_or(true, |(g, _)| gain > g) {
            let mid = lo + (hi - lo) / 2.0;
            // Between adjacent floats the midpoint may round down onto `lo`.
            let threshold = if mid > lo { mid } else { hi };
            best = Some((gain, threshold));
        }
    }
    best
}
