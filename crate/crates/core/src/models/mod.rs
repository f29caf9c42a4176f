//! Surrogate and classifier primitives.

mod classifier;
mod forest;
mod tree;

pub use classifier::{ClassifierParams, LinearClassifier};
pub use forest::{mean_variance, ForestParams, RegressionForest};
pub use tree::{RegressionTree, TreeParams};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("cannot fit a model on empty data")]
    EmptyData,
    #[error("expected input dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}
