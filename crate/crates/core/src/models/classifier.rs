use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::forest::validate_rows;
use super::ModelError;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub epochs: usize,
    /// Regularization strength of the soft-margin objective.
    pub lambda: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            epochs: 200,
            lambda: 1e-3,
        }
    }
}

/// Soft-margin linear classifier: label 1 iff `w . x + b > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    weights: Vec<f64>,
    bias: f64,
}

impl LinearClassifier {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self, ModelError> {
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(Self { weights, bias })
    }

    /// Always predicts `label`.
    pub fn constant(dim: usize, label: bool) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: if label { 1.0 } else { -1.0 },
        }
    }

    /// Pegasos subgradient descent on the hinge loss. Inputs are centered at
    /// 0.5 during training (they live in the unit cube) with an extra constant
    /// feature carrying the bias; the result is folded back to raw inputs.
    pub fn fit(data: &[(Vec<f64>, bool)], params: ClassifierParams, seed: u64) -> Result<Self, ModelError> {
        let Some((first, _)) = data.first() else {
            return Err(ModelError::EmptyData);
        };
        let dim = first.len();
        validate_rows(data.iter().map(|(x, _)| (x.as_slice(), 0.0)), dim)?;
        if !(params.lambda > 0.0) || params.epochs == 0 {
            return Err(ModelError::InvalidParams(
                "classifier needs lambda > 0 and epochs >= 1".into(),
            ));
        }
        let positives = data.iter().filter(|(_, y)| *y).count();
        if positives == 0 || positives == data.len() {
            return Ok(Self::constant(dim, positives > 0));
        }

        let lambda = params.lambda;
        let radius = 1.0 / lambda.sqrt();
        let rows: Vec<(Vec<f64>, f64)> = data
            .iter()
            .map(|(x, y)| {
                let mut z: Vec<f64> = x.iter().map(|v| v - 0.5).collect();
                z.push(1.0);
                (z, if *y { 1.0 } else { -1.0 })
            })
            .collect();
        let mut w = vec![0.0; dim + 1];
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = rng_for(seed, 0);
        let mut t = 0usize;
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let (x, y) = &rows[i];
                let margin = y * dot(&w, x);
                let shrink = 1.0 - eta * lambda;
                w.iter_mut().for_each(|wj| *wj *= shrink);
                if margin < 1.0 {
                    w.iter_mut().zip(x).for_each(|(wj, xj)| *wj += eta * y * xj);
                }
                let norm = dot(&w, &w).sqrt();
                if norm > radius {
                    let scale = radius / norm;
                    w.iter_mut().for_each(|wj| *wj *= scale);
                }
            }
        }
        let bias_centered = w.pop().expect("bias slot");
        let bias = bias_centered - 0.5 * w.iter().sum::<f64>();
        Self::new(w, bias)
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// Hard label and the raw affine score. A score of exactly 0 is label 0.
    pub fn predict(&self, x: &[f64]) -> (bool, f64) {
        let s = self.score(x);
        (s > 0.0, s)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
