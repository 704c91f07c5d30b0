//! Target expressions, dataset generation, the matched/mismatched structure
//! experiment and the decomposability detector.
//!
//! Randomness is derived from one user seed per task with [`derive_seed`],
//! a SplitMix64 step over `seed + stream * golden_gamma`. Fixed stream ids
//! separate the training set, the validation set and the detector probes,
//! so running tasks in parallel never changes their results.

mod decompose;
mod expr;
mod plot;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SampleMatrix;
use crate::par;
use crate::topology::{nested_pair_topology, NetworkTopology, TopologyError};
use crate::training::{train_boosted, Dataset, EngineConfig, Split, TrainError, TrainingTrace};

pub use decompose::{decomposability_score, BlockScore, DecompositionScore, Partition, DECOMPOSABLE_THRESHOLD};
pub use expr::{expr_grad, parse_expr, parse_expr_with, ExprError, ExprNode, ExprTree, DEFAULT_VARIABLES};
pub use plot::fig1_svg;

/// The target that matches the `w(u(x1, x2), v(y1, y2))` structure.
pub const Z_MATCHED: &str = "x1^2*x2 + y1*y2^2";
/// A target with the same variables that does not split into x and y parts.
pub const Z_MISMATCHED: &str = "x1*y1*y2 + x1*x2*y2";

pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_VALIDATION: u64 = 2;
pub const STREAM_PROBES: u64 = 3;

pub const DEFAULT_TRAIN_SAMPLES: usize = 10_000;
pub const DEFAULT_VAL_SAMPLES: usize = 2_000;
const MIN_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("experiment specs differ in {0}; only the target may differ")]
    SpecMismatch(&'static str),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("degenerate gradient field: every block skipped more than half of its probes")]
    DegenerateGradient,
}

/// One SplitMix64 output for `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent uniform coordinates, `bounds[i] = (low, high)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformBox {
    pub bounds: Vec<(f64, f64)>,
}

impl UniformBox {
    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self {
            bounds: vec![(-half_width, half_width); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(ExperimentError::Distribution(format!("coordinate {i} has non-finite bounds")));
            }
            if !(lo < hi) {
                return Err(ExperimentError::Distribution(format!(
                    "coordinate {i} has degenerate bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Row-major draws: each sample takes one value per coordinate in order.
    pub fn sample(&self, rng: &mut impl Rng, rows: usize) -> SampleMatrix {
        let mut m = SampleMatrix::zeros(rows, self.dim());
        for r in 0..rows {
            for (c, &(lo, hi)) in self.bounds.iter().enumerate() {
                m.set(r, c, rng.gen_range(lo..hi));
            }
        }
        m
    }
}

/// Samples `n_samples` inputs with a generator seeded by `seed` and labels
/// each row with `expr`.
pub fn gen_dataset(
    expr: &ExprTree,
    n_samples: usize,
    distribution: &UniformBox,
    seed: u64,
    split: Split,
) -> Result<Dataset, ExperimentError> {
    distribution.check()?;
    if distribution.dim() != expr.dim() {
        return Err(ExperimentError::Distribution(format!(
            "{} coordinates for an expression over {} variables",
            distribution.dim(),
            expr.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = distribution.sample(&mut rng, n_samples);
    let mut row = vec![0.0; expr.dim()];
    let targets = (0..n_samples)
        .map(|r| {
            for (c, v) in row.iter_mut().enumerate() {
                *v = inputs.get(r, c);
            }
            expr.eval_unchecked(&row)
        })
        .collect();
    Ok(Dataset::new(inputs, targets, split)?)
}

/// Everything that defines one training run of the structure experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub target: ExprTree,
    pub target_text: String,
    pub topology: NetworkTopology,
    pub config: EngineConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    pub distribution: UniformBox,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Default setup: nested pair topology, boosted engine defaults,
    /// uniform `[-1, 1]^4`, 10000 training and 2000 validation samples.
    pub fn fig1_default(target: &str, seed: u64) -> Result<Self, ExperimentError> {
        Ok(Self {
            target: parse_expr(target)?,
            target_text: target.to_string(),
            topology: nested_pair_topology(),
            config: EngineConfig {
                seed,
                ..EngineConfig::boosted()
            },
            train_samples: DEFAULT_TRAIN_SAMPLES,
            val_samples: DEFAULT_VAL_SAMPLES,
            distribution: UniformBox::symmetric(4, 1.0),
            seed,
        })
    }

    pub fn with_target(&self, target: &str) -> Result<Self, ExperimentError> {
        Ok(Self {
            target: parse_expr_with(target, &self.variable_names())?,
            target_text: target.to_string(),
            ..self.clone()
        })
    }

    fn variable_names(&self) -> Vec<&str> {
        self.target.variables().iter().map(String::as_str).collect()
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        for n in [self.train_samples, self.val_samples] {
            if n < MIN_SAMPLES {
                return Err(ExperimentError::TooFewSamples(n));
            }
        }
        self.distribution.check()
    }

    /// Training and validation sets from disjoint seed streams.
    pub fn datasets(&self) -> Result<(Dataset, Dataset), ExperimentError> {
        self.check()?;
        let train = gen_dataset(
            &self.target,
            self.train_samples,
            &self.distribution,
            derive_seed(self.seed, STREAM_TRAIN),
            Split::Train,
        )?;
        let val = gen_dataset(
            &self.target,
            self.val_samples,
            &self.distribution,
            derive_seed(self.seed, STREAM_VALIDATION),
            Split::Validation,
        )?;
        Ok((train, val))
    }

    pub fn run(&self) -> Result<TrainingTrace, ExperimentError> {
        let topology = self.topology.clone().into_valid()?;
        let (train, val) = self.datasets()?;
        let (_, trace) = train_boosted(&topology, &train, &val, &self.config)?;
        Ok(trace)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetSummary {
    pub expr: String,
    pub final_val_rmse_norm: f64,
    pub best_val_rmse_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig1Summary {
    pub seed: u64,
    pub rounds: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub matched: TargetSummary,
    pub mismatched: TargetSummary,
    /// Final validation score of the mismatched target over the matched one.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fig1Result {
    pub matched: TrainingTrace,
    pub mismatched: TrainingTrace,
    pub summary: Fig1Summary,
}

/// Trains the same topology and configuration on two targets.
pub fn run_fig1(matched: &ExperimentSpec, mismatched: &ExperimentSpec) -> Result<Fig1Result, ExperimentError> {
    if matched.topology != mismatched.topology {
        return Err(ExperimentError::SpecMismatch("topology"));
    }
    if matched.config != mismatched.config {
        return Err(ExperimentError::SpecMismatch("engine config"));
    }
    if matched.seed != mismatched.seed {
        return Err(ExperimentError::SpecMismatch("seed"));
    }
    if (matched.train_samples, matched.val_samples) != (mismatched.train_samples, mismatched.val_samples) {
        return Err(ExperimentError::SpecMismatch("sample counts"));
    }
    if matched.distribution != mismatched.distribution {
        return Err(ExperimentError::SpecMismatch("input distribution"));
    }
    let (a, b) = par::join(|| matched.run(), || mismatched.run());
    let (a, b) = (a?, b?);
    let summarize = |spec: &ExperimentSpec, t: &TrainingTrace| TargetSummary {
        expr: spec.target_text.clone(),
        final_val_rmse_norm: t.final_val().unwrap_or(f64::NAN),
        best_val_rmse_norm: t.best_val().unwrap_or(f64::NAN),
    };
    let m = summarize(matched, &a);
    let mm = summarize(mismatched, &b);
    let summary = Fig1Summary {
        seed: matched.seed,
        rounds: matched.config.rounds,
        train_samples: matched.train_samples,
        val_samples: matched.val_samples,
        ratio: mm.final_val_rmse_norm / m.final_val_rmse_norm,
        matched: m,
        mismatched: mm,
    };
    Ok(Fig1Result {
        matched: a,
        mismatched: b,
        summary,
    })
}
