//! Numerical test of a necessary condition for `f = w(u(x_A), v(x_B))`.
//!
//! If `f` has that form with scalar `u` and `v`, then the gradient of `f`
//! restricted to block `A` equals `w_u * grad u(x_A)`, so its direction
//! depends on `x_A` only. The detector fixes a probe `x_A`, samples several
//! `x_B`, and measures how much the unit restricted gradient moves. The
//! same is done with the roles of the blocks swapped. A score near zero is
//! consistent with the structure; it does not prove it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{derive_seed, expr_grad, ExperimentError, ExprTree, UniformBox, STREAM_PROBES};
use crate::par;

/// Scores below this are reported as decomposable.
pub const DECOMPOSABLE_THRESHOLD: f64 = 1e-4;
/// Restricted gradients shorter than this carry no direction.
const MIN_GRADIENT_NORM: f64 = 1e-9;
/// Samples of the other block drawn per probe.
pub const DEFAULT_INNER_SAMPLES: usize = 16;

/// Two disjoint blocks of variable indices covering every variable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub blocks: [Vec<usize>; 2],
}

impl Partition {
    /// Parses `"x1,x2|y1,y2"` against the expression's variable names.
    pub fn parse(text: &str, expr: &ExprTree) -> Result<Self, ExperimentError> {
        let parts: Vec<&str> = text.split('|').collect();
        if parts.len() != 2 {
            return Err(ExperimentError::Partition(format!(
                "expected two blocks separated by '|', found {}",
                parts.len()
            )));
        }
        let mut blocks: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (block, part) in blocks.iter_mut().zip(&parts) {
            for name in part.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let idx = expr.variable_index(name).ok_or_else(|| {
                    ExperimentError::Partition(format!(
                        "unknown variable '{name}'; valid names: {}",
                        expr.variables().join(", ")
                    ))
                })?;
                block.push(idx);
            }
        }
        Self::new(blocks, expr.dim())
    }

    pub fn new(blocks: [Vec<usize>; 2], dim: usize) -> Result<Self, ExperimentError> {
        let mut seen = vec![false; dim];
        for block in &blocks {
            for &i in block {
                if i >= dim {
                    return Err(ExperimentError::Partition(format!("index {i} out of range for {dim} variables")));
                }
                if seen[i] {
                    return Err(ExperimentError::Partition("partition not disjoint".into()));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ExperimentError::Partition(format!(
                "partition does not cover variable index {missing}"
            )));
        }
        if blocks.iter().any(|b| b.len() < 2) {
            return Err(ExperimentError::Partition(
                "each block needs at least 2 variables for a meaningful test".into(),
            ));
        }
        Ok(Self { blocks })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockScore {
    pub variables: Vec<usize>,
    /// Mean over probes of the summed variance of the unit restricted
    /// gradient; 0 when the block is degenerate.
    pub term: f64,
    pub evaluations: usize,
    pub skipped: usize,
    /// More than half of the gradient evaluations had no direction.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionScore {
    pub score: f64,
    pub decomposable: bool,
    pub blocks: Vec<BlockScore>,
}

impl DecompositionScore {
    pub fn verdict(&self) -> &'static str {
        if self.decomposable {
            "decomposable"
        } else {
            "not decomposable"
        }
    }
}

/// Unit vector with the first nonzero component made positive.
fn direction(g: &[f64]) -> Option<Vec<f64>> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= MIN_GRADIENT_NORM) {
        return None;
    }
    let sign = match g.iter().find(|v| **v != 0.0) {
        Some(v) if *v < 0.0 => -1.0,
        _ => 1.0,
    };
    Some(g.iter().map(|v| sign * v / norm).collect())
}

fn block_term(
    expr: &ExprTree,
    own: &[usize],
    n_probes: usize,
    inner: usize,
    seed: u64,
    dist: &UniformBox,
) -> Result<BlockScore, ExperimentError> {
    let per_probe = par::map_range(n_probes, |probe| -> Result<(Option<f64>, usize), ExperimentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, probe as u64));
        let anchor = dist.sample(&mut rng, 1).row(0);
        let others = dist.sample(&mut rng, inner);
        let mut dirs = Vec::with_capacity(inner);
        let mut skipped = 0;
        let mut point = anchor.clone();
        for s in 0..inner {
            for c in 0..point.len() {
                if !own.contains(&c) {
                    point[c] = others.get(s, c);
                }
            }
            let g = expr_grad(expr, &point)?;
            let restricted: Vec<f64> = own.iter().map(|&i| g[i]).collect();
            match direction(&restricted) {
                Some(d) => dirs.push(d),
                None => skipped += 1,
            }
        }
        if dirs.len() < 2 {
            return Ok((None, skipped));
        }
        let k = dirs.len() as f64;
        let mut total = 0.0;
        for c in 0..own.len() {
            // Shifted by the first sample so identical directions give exactly 0.
            let shift = dirs[0][c];
            let mean = dirs.iter().map(|d| d[c] - shift).sum::<f64>() / k;
            total += dirs.iter().map(|d| (d[c] - shift - mean).powi(2)).sum::<f64>() / k;
        }
        Ok((Some(total), skipped))
    });

    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for r in per_probe {
        let (term, s) = r?;
        skipped += s;
        if let Some(t) = term {
            sum += t;
            used += 1;
        }
    }
    let evaluations = n_probes * inner;
    let degenerate = 2 * skipped > evaluations || used == 0;
    Ok(BlockScore {
        variables: own.to_vec(),
        term: if degenerate { 0.0 } else { sum / used as f64 },
        evaluations,
        skipped,
        degenerate,
    })
}

/// Gradient-direction score over `n_probes` anchors per block, with
/// [`DEFAULT_INNER_SAMPLES`] draws of the other block per anchor. Inputs
/// are drawn uniformly from `[-1, 1]` per variable.
pub fn decomposability_score(
    expr: &ExprTree,
    partition: &Partition,
    n_probes: usize,
    seed: u64,
) -> Result<DecompositionScore, ExperimentError> {
    Partition::new(partition.blocks.clone(), expr.dim())?;
    if n_probes == 0 {
        return Err(ExperimentError::Partition("need at least one probe".into()));
    }
    let dist = UniformBox::symmetric(expr.dim(), 1.0);
    let base = derive_seed(seed, STREAM_PROBES);
    let mut blocks = Vec::with_capacity(2);
    for (b, own) in partition.blocks.iter().enumerate() {
        let block_seed = derive_seed(base, b as u64);
        blocks.push(block_term(expr, own, n_probes, DEFAULT_INNER_SAMPLES, block_seed, &dist)?);
    }
    if blocks.iter().all(|b| b.degenerate) {
        return Err(ExperimentError::DegenerateGradient);
    }
    let score: f64 = blocks.iter().map(|b| b.term).sum();
    Ok(DecompositionScore {
        score,
        decomposable: score < DECOMPOSABLE_THRESHOLD,
        blocks,
    })
}
