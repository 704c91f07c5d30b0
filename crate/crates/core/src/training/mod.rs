//! Training engines over a validated topology.
//!
//! * Smooth engine ([`train_smooth`]): networks of spline and linear nodes,
//!   trained by mini-batch Adam on reverse-mode gradients.
//! * Boosted engine ([`train_boosted`]): networks of tree-ensemble nodes,
//!   trained by block-coordinate functional gradient boosting. Upstream
//!   nodes never see intermediate labels; their pseudo-residuals come from
//!   finite-difference sensitivities through the downstream ensembles.

mod boosted;
mod dataset;
mod metrics;
mod network;
mod smooth;
mod trace;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nodefuncs::NodeError;
use crate::topology::{NodeId, TopologyError};

pub use boosted::{fit_staged, predict, train_boosted, train_boosted_with, StagedFit, UpstreamUpdates};
pub use dataset::{Dataset, Split};
pub use metrics::{mean, normalized_rmse, population_std};
pub use network::{forward, init_smooth_params, ForwardCache, Parameters};
pub use smooth::{backward, mse_gradient, train_smooth, Gradients};
pub use trace::{RoundRecord, TrainingTrace};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("node {node}: {detail}")]
    NodeShape { node: NodeId, detail: String },
    #[error("node {node} produced NaN")]
    NanOutput { node: NodeId },
    #[error("node {node} is a black box and has no gradient")]
    BlackBoxInGradient { node: NodeId },
    #[error("engine mismatch: {0}")]
    EngineMismatch(String),
    #[error("degenerate target: standard deviation is zero")]
    DegenerateTarget,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at round {round}: loss {loss} exceeded 10x the initial {initial} for 5 consecutive rounds")]
    Diverged {
        round: usize,
        initial: f64,
        loss: f64,
        trace: Box<TrainingTrace>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Smooth,
    Boosted,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Smooth => "smooth",
            Engine::Boosted => "boosted",
        })
    }
}

/// Settings shared by both engines. `learning_rate` is the Adam step for
/// the smooth engine and the shrinkage for the boosted one. `fd_epsilon` is
/// the sensitivity probe size as a fraction of the probed node output's
/// standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub engine: Engine,
    pub rounds: usize,
    pub learning_rate: f64,
    pub tree_depth: usize,
    pub min_leaf_count: usize,
    pub fd_epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl EngineConfig {
    pub fn boosted() -> Self {
        Self {
            engine: Engine::Boosted,
            rounds: 300,
            learning_rate: 0.1,
            tree_depth: 4,
            min_leaf_count: 5,
            fd_epsilon: 1.0,
            batch_size: 64,
            seed: 0,
        }
    }

    pub fn smooth() -> Self {
        Self {
            engine: Engine::Smooth,
            rounds: 200,
            learning_rate: 1e-2,
            ..Self::boosted()
        }
    }

    pub fn for_engine(engine: Engine) -> Self {
        match engine {
            Engine::Smooth => Self::smooth(),
            Engine::Boosted => Self::boosted(),
        }
    }

    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning rate must lie in (0, 1]");
        }
        if !(self.fd_epsilon > 0.0) || !self.fd_epsilon.is_finite() {
            return bad("fd_epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.min_leaf_count == 0 {
            return bad("min_leaf_count must be at least 1");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::boosted()
    }
}
