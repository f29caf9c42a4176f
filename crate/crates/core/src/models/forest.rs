use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeParams};
use super::ModelError;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_leaf_size: usize,
    pub feature_subsample_fraction: f64,
    /// Draw a bootstrap resample per tree. Off only for exact-fit checks.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            tree_count: 10,
            max_depth: 20,
            min_leaf_size: 2,
            feature_subsample_fraction: 0.8,
            bootstrap: true,
        }
    }
}

/// Random forest regressor whose per-point spread across trees serves as
/// the predictive variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    trees: Vec<RegressionTree>,
    params: ForestParams,
    dim: usize,
    seed: u64,
}

impl RegressionForest {
    pub fn fit(data: &[(Vec<f64>, f64)], params: ForestParams, seed: u64) -> Result<Self, ModelError> {
        let Some((first, _)) = data.first() else {
            return Err(ModelError::EmptyData);
        };
        let dim = first.len();
        validate_rows(data.iter().map(|(x, y)| (x.as_slice(), *y)), dim)?;
        if params.tree_count == 0 {
            return Err(ModelError::InvalidParams("tree_count must be at least 1".into()));
        }
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf_size: params.min_leaf_size,
            feature_subsample_fraction: params.feature_subsample_fraction,
        };
        let n = data.len();
        let trees = (0..params.tree_count)
            .map(|t| {
                let mut rng = rng_for(seed, t as u64);
                let sample: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(data, &sample, &tree_params, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            params,
            dim,
            seed,
        })
    }

    /// Mean and population variance of the per-tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        Ok(mean_variance(&preds))
    }

    pub fn tree_predictions(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }
}

pub fn mean_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0))
}

pub(crate) fn validate_rows<'a>(
    rows: impl Iterator<Item = (&'a [f64], f64)>,
    dim: usize,
) -> Result<(), ModelError> {
    for (x, y) in rows {
        if x.len() != dim {
            return Err(ModelError::Dimension {
                expected: dim,
                got: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
    }
    Ok(())
}
