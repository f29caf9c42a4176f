use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::EngineRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `usize::MAX` means unbounded.
    pub max_depth: usize,
    pub min_leaf_size: usize,
    pub feature_subsample_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        value: f64,
        count: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART regression tree with axis-aligned splits minimizing the summed
/// squared residual of the two children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Builder<'a> {
    data: &'a [(Vec<f64>, f64)],
    params: &'a TreeParams,
    features_per_split: usize,
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Fit on the rows of `data` selected by `sample` (repeats allowed).
    /// `sample` must be non-empty and every row must share one dimension.
    pub fn fit(
        data: &[(Vec<f64>, f64)],
        sample: &[usize],
        params: &TreeParams,
        rng: &mut EngineRng,
    ) -> Self {
        assert!(!sample.is_empty(), "tree needs at least one row");
        let dim = data[sample[0]].0.len();
        let features_per_split = ((params.feature_subsample_fraction * dim as f64).ceil() as usize)
            .clamp(1, dim.max(1));
        let mut builder = Builder {
            data,
            params,
            features_per_split,
            nodes: Vec::new(),
        };
        builder.grow(sample.to_vec(), 0, rng);
        RegressionTree {
            nodes: builder.nodes,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Training-row counts of every leaf.
    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { count, .. } => Some(*count),
                Node::Split { .. } => None,
            })
            .collect()
    }
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut EngineRng) -> usize {
        let n = rows.len();
        let mean = rows.iter().map(|&i| self.data[i].1).sum::<f64>() / n as f64;
        let pure = rows.iter().all(|&i| self.data[i].1 == self.data[rows[0]].1);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: mean,
            count: n,
        });
        if pure || depth >= self.params.max_depth || n < 2 * self.params.min_leaf_size.max(1) {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&rows, rng) else {
            return at;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.data[i].0[feature] <= threshold);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    fn best_split(&self, rows: &[usize], rng: &mut EngineRng) -> Option<(usize, f64)> {
        let dim = self.data[rows[0]].0.len();
        let mut features = index::sample(rng, dim, self.features_per_split).into_vec();
        features.sort_unstable();
        let min_leaf = self.params.min_leaf_size.max(1);
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.data[i].1).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for &f in &features {
            sorted.sort_by(|&a, &b| self.data[a].0[f].total_cmp(&self.data[b].0[f]));
            let mut left_sum = 0.0;
            for split in 1..n {
                left_sum += self.data[sorted[split - 1]].1;
                let lo = self.data[sorted[split - 1]].0[f];
                let hi = self.data[sorted[split]].0[f];
                if split < min_leaf || n - split < min_leaf || lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                // SSE = sum(y^2) - sum_l^2/n_l - sum_r^2/n_r; sum(y^2) is constant.
                let score = -(left_sum * left_sum / split as f64
                    + right_sum * right_sum / (n - split) as f64);
                let better = match best {
                    None => true,
                    Some((b, _, _)) => score < b - 1e-12 * b.abs().max(1.0),
                };
                if better {
                    best = Some((score, f, 0.5 * (lo + hi)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}
