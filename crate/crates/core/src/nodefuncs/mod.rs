//! Trainable node functions: cubic B-spline univariate nodes, linear
//! couplings, and CART regression-tree ensembles for black-box nodes.

mod ensemble;
mod linear;
mod spline;
mod tree;

use thiserror::Error;

pub use ensemble::{fit_ensemble, BoostParams, TreeEnsembleNode};
pub use linear::LinearCoupling;
pub use spline::{LocalBasis, SplineNode, DEFAULT_DOMAIN, DEFAULT_GRID};
pub use tree::{fit_tree, RegressionTree, TreeNode, TreeParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error("input is NaN")]
    NanInput,
    #[error("invalid spline: {0}")]
    InvalidSpline(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("cannot fit on an empty dataset")]
    EmptyDataset,
    #[error("feature arity mismatch: expected {expected}, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("row count mismatch: features have {features} rows, targets have {targets}")]
    RowMismatch { features: usize, targets: usize },
    #[error("shrinkage must lie in (0, 1], got {0}")]
    InvalidShrinkage(f64),
}
