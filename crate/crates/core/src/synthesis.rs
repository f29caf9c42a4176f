//! Workload synthesis: a sparse simplex mixture of basic workloads whose
//! composed metrics best match a target workload.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{KnowledgeError, MetricStats, WorkloadMetrics};

pub const STEP: f64 = 0.1;
pub const STEPS: usize = 500;
pub const DEFAULT_BUDGET: u64 = 10_000;
/// Lower bound on every supported weight, so the support has exactly m entries.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SynthesisError {
    #[error("need 1 <= m <= k (m={m}, k={k})")]
    Cardinality { m: usize, k: usize },
    #[error("mixture has {got} weights for {expected} basics")]
    Length { expected: usize, got: usize },
    #[error("weights must be in [0, 1] and sum to 1")]
    NotOnSimplex,
    #[error("no basic workloads given")]
    NoBasics,
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicWorkload {
    pub id: String,
    pub signature: WorkloadMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixtureWeights {
    weights: Vec<f64>,
}

impl TryFrom<Vec<f64>> for MixtureWeights {
    type Error = SynthesisError;

    fn try_from(weights: Vec<f64>) -> Result<Self, SynthesisError> {
        Self::new(weights)
    }
}

impl From<MixtureWeights> for Vec<f64> {
    fn from(m: MixtureWeights) -> Self {
        m.weights
    }
}

impl MixtureWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, SynthesisError> {
        let in_range = weights.iter().all(|w| (0.0..=1.0).contains(w));
        if weights.is_empty() || !in_range || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SynthesisError::NotOnSimplex);
        }
        Ok(Self { weights })
    }

    pub fn one_hot(k: usize, i: usize) -> Self {
        let mut weights = vec![0.0; k];
        weights[i] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub fn l1_distance(&self, other: &MixtureWeights) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum()
    }
}

pub fn compose_metrics(basics: &[BasicWorkload], lambda: &MixtureWeights) -> Result<WorkloadMetrics, SynthesisError> {
    if basics.len() != lambda.len() {
        return Err(SynthesisError::Length {
            expected: basics.len(),
            got: lambda.len(),
        });
    }
    let Some(first) = basics.first() else {
        return Err(SynthesisError::NoBasics);
    };
    let (di, de) = first.signature.shape();
    let mut internal = vec![0.0; di];
    let mut external = vec![0.0; de];
    for (b, &w) in basics.iter().zip(lambda.weights()) {
        if b.signature.shape() != (di, de) {
            return Err(KnowledgeError::Dimension {
                expected: di + de,
                got: b.signature.dim(),
            }
            .into());
        }
        if w == 0.0 {
            continue;
        }
        internal.iter_mut().zip(&b.signature.internal).for_each(|(o, v)| *o += w * v);
        external.iter_mut().zip(&b.signature.external).for_each(|(o, v)| *o += w * v);
    }
    Ok(WorkloadMetrics::new(internal, external)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub support: Vec<usize>,
    pub weights: MixtureWeights,
    pub similarity: f64,
}

/// Z-scored least squares restricted to the non-degenerate coordinates.
struct Problem {
    /// One z-scaled column per basic.
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
    stats: MetricStats,
    raw: Vec<Vec<f64>>,
    raw_target: Vec<f64>,
}

impl Problem {
    fn new(basics: &[BasicWorkload], target: &WorkloadMetrics, stats: &MetricStats) -> Result<Self, SynthesisError> {
        let raw: Vec<Vec<f64>> = basics.iter().map(|b| b.signature.vector()).collect();
        let raw_target = target.vector();
        for v in raw.iter().chain(std::iter::once(&raw_target)) {
            if v.len() != stats.dim() {
                return Err(KnowledgeError::Dimension {
                    expected: stats.dim(),
                    got: v.len(),
                }
                .into());
            }
        }
        let live: Vec<usize> = (0..stats.dim()).filter(|&j| !stats.is_degenerate(j)).collect();
        let scale = |v: &[f64]| live.iter().map(|&j| v[j] / stats.sd[j]).collect::<Vec<f64>>();
        Ok(Self {
            columns: raw.iter().map(|v| scale(v)).collect(),
            target: scale(&raw_target),
            stats: stats.clone(),
            raw,
            raw_target,
        })
    }

    fn similarity(&self, support: &[usize], w: &[f64]) -> f64 {
        let mut mix = vec![0.0; self.raw_target.len()];
        for (&i, &wi) in support.iter().zip(w) {
            mix.iter_mut().zip(&self.raw[i]).for_each(|(m, v)| *m += wi * v);
        }
        self.stats
            .similarity_vectors(&mix, &self.raw_target)
            .expect("dimensions checked")
    }

    /// Projected-gradient ascent on the negative squared z-residual, which is
    /// monotone in similarity. Columns are centred on their support mean (a
    /// no-op on the simplex) and the objective is divided by the largest
    /// eigenvalue of the centred Gram matrix, so the fixed step is stable at
    /// any metric scale. Returns the best iterate seen.
    fn solve(&self, support: &[usize]) -> (Vec<f64>, f64) {
        let m = support.len();
        let mut w = vec![1.0 / m as f64; m];
        let mut best = (w.clone(), self.similarity(support, &w));
        if m == 1 || self.target.is_empty() {
            return best;
        }
        let d = self.target.len();
        let centre: Vec<f64> = (0..d)
            .map(|j| support.iter().map(|&i| self.columns[i][j]).sum::<f64>() / m as f64)
            .collect();
        let cols: Vec<Vec<f64>> = support
            .iter()
            .map(|&i| self.columns[i].iter().zip(&centre).map(|(c, o)| c - o).collect())
            .collect();
        let target: Vec<f64> = self.target.iter().zip(&centre).map(|(t, o)| t - o).collect();
        let gram: Vec<Vec<f64>> = cols.iter().map(|a| cols.iter().map(|b| dot(a, b)).collect()).collect();
        let curvature = largest_eigenvalue(&gram);
        if curvature <= 0.0 {
            return best;
        }
        let mut residual = vec![0.0; d];
        for _ in 0..STEPS {
            residual.iter_mut().zip(&target).for_each(|(r, t)| *r = -t);
            for (col, &wi) in cols.iter().zip(&w) {
                residual.iter_mut().zip(col).for_each(|(r, c)| *r += wi * c);
            }
            let step: Vec<f64> = cols
                .iter()
                .zip(&w)
                .map(|(col, wi)| wi - STEP * 2.0 * dot(col, &residual) / curvature)
                .collect();
            w = project_floored_simplex(&step, WEIGHT_FLOOR);
            let s = self.similarity(support, &w);
            if s > best.1 {
                best = (w.clone(), s);
            }
        }
        best
    }
}

/// Power iteration on a symmetric positive semidefinite matrix.
fn largest_eigenvalue(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut v: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() + 0.5).collect();
    let mut value = 0.0;
    for _ in 0..200 {
        let next: Vec<f64> = a.iter().map(|row| dot(row, &v)).collect();
        let norm = dot(&next, &next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        value = norm / dot(&v, &v).sqrt();
        v = next.into_iter().map(|x| x / norm).collect();
    }
    value
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean projection onto `{ w : sum w = 1 }` (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    project_scaled(v, 1.0)
}

fn project_scaled(v: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - total) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projection onto the simplex with every weight at least `floor`.
pub fn project_floored_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let n = v.len() as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut w: Vec<f64> = project_scaled(&shifted, 1.0 - n * floor)
        .into_iter()
        .map(|x| x + floor)
        .collect();
    // Clean residual rounding so the sum is 1 to machine precision.
    let excess = w.iter().sum::<f64>() - 1.0;
    if let Some(max) = w.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max -= excess;
    }
    w
}

/// Number of size-`m` subsets of `k`, saturating.
pub fn binomial(k: usize, m: usize) -> u64 {
    if m > k {
        return 0;
    }
    let m = m.min(k - m);
    let mut acc: u128 = 1;
    for i in 0..m {
        acc = acc * (k - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// All size-`m` subsets of `0..k` in lexicographic order.
pub fn supports(k: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if m == 0 || m > k {
        return out;
    }
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..m).rev().find(|&i| idx[i] < k - m + i) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn best_of(problem: &Problem, candidates: Vec<Vec<usize>>) -> (Vec<usize>, Vec<f64>, f64) {
    let solved: Vec<(Vec<f64>, f64)> = candidates.par_iter().map(|s| problem.solve(s)).collect();
    let mut best = 0;
    for (i, (_, s)) in solved.iter().enumerate() {
        if *s > solved[best].1 {
            best = i;
        }
    }
    let (w, s) = solved[best].clone();
    (candidates[best].clone(), w, s)
}

/// Best mixture with exactly `m` nonzero weights. Supports are enumerated
/// when there are at most `budget` of them, otherwise grown greedily.
pub fn synthesize(
    basics: &[BasicWorkload],
    target: &WorkloadMetrics,
    m: usize,
    stats: &MetricStats,
    budget: u64,
) -> Result<Synthesis, SynthesisError> {
    let k = basics.len();
    if m < 1 || m > k {
        return Err(SynthesisError::Cardinality { m, k });
    }
    let problem = Problem::new(basics, target, stats)?;
    let (support, w, similarity) = if binomial(k, m) <= budget {
        best_of(&problem, supports(k, m))
    } else {
        let mut chosen: Vec<usize> = Vec::new();
        let mut result = (Vec::new(), Vec::new(), 0.0);
        for _ in 0..m {
            let options: Vec<Vec<usize>> = (0..k)
                .filter(|i| !chosen.contains(i))
                .map(|i| {
                    let mut s = chosen.clone();
                    s.push(i);
                    s.sort_unstable();
                    s
                })
                .collect();
            result = best_of(&problem, options);
            chosen.clone_from(&result.0);
        }
        result
    };
    let mut weights = vec![0.0; k];
    for (&i, &wi) in support.iter().zip(&w) {
        weights[i] = wi;
    }
    let weights = MixtureWeights::new(weights)?;
    assert_eq!(weights.support().len(), m, "cardinality constraint");
    Ok(Synthesis {
        support,
        weights,
        similarity,
    })
}
