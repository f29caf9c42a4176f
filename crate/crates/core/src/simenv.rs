//! Deterministic simulated DBMS.
//!
//! Each basic workload owns a response surface over the normalized knob
//! vector and a metric signature. A database runs a mixture of basics: its
//! performance is the mixture of surfaces under multiplicative noise, and
//! its metrics are the mixture of signatures under Gaussian noise.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{ExperienceRepository, ExperienceTrace, KnowledgeError, WorkloadMetrics};
use crate::rng::{derive_seed, stream_rng, Purpose};
use crate::space::{Configuration, ConfigurationSpace, KnobSpec, SpaceError};
use crate::synthesis::{compose_metrics, BasicWorkload, MixtureWeights, SynthesisError};
use crate::tuner::{run_smac, ObjectiveError, TuneError, TunerConfig};

pub const PRESET_LABELS: [&str; 4] = ["YCSB-A", "YCSB-B", "TPCC", "Twitter"];
pub const INTERNAL_METRICS: usize = 12;
pub const EXTERNAL_METRICS: usize = 4;
pub const GRID_STEP: f64 = 0.05;
pub const SURFACE_SCALE: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("a suite needs at least 2 basics and 2 knobs (got k={basics}, q={knobs})")]
    SuiteSize { basics: usize, knobs: usize },
    #[error("mixture has {got} weights but the suite has {expected} basics")]
    MixtureLength { expected: usize, got: usize },
    #[error("noise parameters must be finite and non-negative")]
    Noise,
    #[error("task_count must be at least 1")]
    NoTasks,
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Tune(#[from] TuneError),
}

/// `height * max(0, 1 - ((x[dim] - center) / width)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bowl {
    pub dim: usize,
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

/// `coef * x[dims.0] * x[dims.1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub dims: (usize, usize),
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMaximum {
    pub value: f64,
    /// Grid argmax; inactive coordinates are 0.
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSurface {
    pub seed: u64,
    pub bowls: Vec<Bowl>,
    pub interactions: Vec<Interaction>,
    pub floor: f64,
    pub scale: f64,
    pub oracle: OracleMaximum,
}

impl ResponseSurface {
    /// Random surface over `q` normalized coordinates with at most 4 active
    /// dimensions.
    pub fn generate(q: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0, Purpose::Structure);
        let active = rng.random_range(2..=4usize.min(q));
        let mut dims = index::sample(&mut rng, q, active).into_vec();
        dims.sort_unstable();
        let bowls: Vec<Bowl> = dims
            .iter()
            .map(|&dim| Bowl {
                dim,
                center: rng.random_range(0.15..=0.85),
                width: rng.random_range(0.15..=0.4),
                height: rng.random_range(0.5..=1.5),
            })
            .collect();
        let n_inter = rng.random_range(1..=2usize);
        let interactions: Vec<Interaction> = (0..n_inter)
            .map(|_| {
                let pair = index::sample(&mut rng, dims.len(), 2).into_vec();
                let (a, b) = (dims[pair[0]].min(dims[pair[1]]), dims[pair[0]].max(dims[pair[1]]));
                Interaction {
                    dims: (a, b),
                    coef: rng.random_range(-0.3..=0.3),
                }
            })
            .collect();
        let floor = 0.1 + interactions.iter().map(|i| i.coef.abs()).sum::<f64>();
        let mut surface = Self {
            seed,
            bowls,
            interactions,
            floor,
            scale: SURFACE_SCALE,
            oracle: OracleMaximum {
                value: 0.0,
                point: vec![0.0; q],
            },
        };
        surface.oracle = surface.grid_maximum(q);
        surface
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let bowls: f64 = self
            .bowls
            .iter()
            .map(|b| {
                let u = (x[b.dim] - b.center) / b.width;
                b.height * (1.0 - u * u).max(0.0)
            })
            .sum();
        let inter: f64 = self
            .interactions
            .iter()
            .map(|i| i.coef * x[i.dims.0] * x[i.dims.1])
            .sum();
        self.scale * (self.floor + bowls + inter)
    }

    /// Positive lower bound of the surface on the unit cube.
    pub fn floor_value(&self) -> f64 {
        self.scale * (self.floor - self.interactions.iter().map(|i| i.coef.abs()).sum::<f64>())
    }

    pub fn active_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.bowls.iter().map(|b| b.dim).collect();
        for i in &self.interactions {
            dims.extend([i.dims.0, i.dims.1]);
        }
        dims.sort_unstable();
        dims.dedup();
        dims
    }

    /// Exhaustive scan of the `GRID_STEP` lattice over the active dims.
    pub fn grid_maximum(&self, q: usize) -> OracleMaximum {
        let dims = self.active_dims();
        let steps = (1.0 / GRID_STEP).round() as usize + 1;
        let total = steps.pow(dims.len() as u32);
        let mut point = vec![0.0; q];
        let mut best = OracleMaximum {
            value: f64::NEG_INFINITY,
            point: point.clone(),
        };
        for flat in 0..total {
            let mut rest = flat;
            for &d in &dims {
                point[d] = (rest % steps) as f64 * GRID_STEP;
                rest /= steps;
            }
            let v = self.evaluate(&point);
            if v > best.value {
                best.value = v;
                best.point.clone_from(&point);
            }
        }
        best
    }
}

/// Knob space, basics and surfaces generated from one structure seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub seed: u64,
    pub space: ConfigurationSpace,
    pub basics: Vec<BasicWorkload>,
    pub surfaces: Vec<ResponseSurface>,
    /// Per-coordinate spread of the signatures; the unit for metric noise.
    pub metric_scale: Vec<f64>,
}

fn suite_space(q: usize, seed: u64) -> Result<ConfigurationSpace, SpaceError> {
    let mut rng = stream_rng(seed, 1, Purpose::Structure);
    let knobs = (0..q)
        .map(|i| {
            let name = format!("knob_{i:02}");
            match i % 4 {
                2 => {
                    let hi = 1i64 << rng.random_range(6..=12);
                    KnobSpec::integer(&name, 0, hi, hi / 2)
                }
                3 => {
                    let names = ["off", "low", "medium", "high"];
                    let levels = &names[..rng.random_range(2..=4)];
                    KnobSpec::enumerated(&name, levels, levels[0])
                }
                _ => KnobSpec::continuous(&name, 0.0, 1.0, 0.5),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    ConfigurationSpace::new(knobs)
}

pub fn make_benchmark_suite(k: usize, q: usize, seed: u64) -> Result<BenchmarkSuite, SimError> {
    if k < 2 || q < 2 {
        return Err(SimError::SuiteSize { basics: k, knobs: q });
    }
    let space = suite_space(q, seed)?;
    let mut sig_rng = stream_rng(seed, 2, Purpose::Structure);
    let basics = (0..k)
        .map(|i| {
            let id = PRESET_LABELS
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("synthetic-{i}"));
            let internal = (0..INTERNAL_METRICS).map(|_| sig_rng.random_range(0.0..100.0)).collect();
            let external = (0..EXTERNAL_METRICS).map(|_| sig_rng.random::<f64>()).collect();
            Ok(BasicWorkload {
                id,
                signature: WorkloadMetrics::new(internal, external)?,
            })
        })
        .collect::<Result<Vec<_>, KnowledgeError>>()?;
    let surfaces = (0..k)
        .map(|i| ResponseSurface::generate(q, derive_seed(seed, i as u64 + 16, Purpose::Structure)))
        .collect();
    let vectors: Vec<Vec<f64>> = basics.iter().map(|b| b.signature.vector()).collect();
    let metric_scale = crate::knowledge::MetricStats::from_vectors(&vectors)?.sd;
    Ok(BenchmarkSuite {
        seed,
        space,
        basics,
        surfaces,
        metric_scale,
    })
}

impl BenchmarkSuite {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::FileError> {
        Ok(Self::from_json(&std::fs::read_to_string(path)?)?)
    }

    pub fn k(&self) -> usize {
        self.basics.len()
    }

    pub fn internal_dim(&self) -> usize {
        self.basics[0].signature.internal.len()
    }
}

/// A database running `mixture` over a suite's basics.
#[derive(Debug, Clone)]
pub struct SimulatedDb<'a> {
    pub suite: &'a BenchmarkSuite,
    pub mixture: MixtureWeights,
    pub noise_cv: f64,
    pub metric_noise_sd: f64,
}

impl<'a> SimulatedDb<'a> {
    pub fn new(
        suite: &'a BenchmarkSuite,
        mixture: MixtureWeights,
        noise_cv: f64,
        metric_noise_sd: f64,
    ) -> Result<Self, SimError> {
        if mixture.len() != suite.k() {
            return Err(SimError::MixtureLength {
                expected: suite.k(),
                got: mixture.len(),
            });
        }
        if !(noise_cv >= 0.0 && noise_cv.is_finite() && metric_noise_sd >= 0.0 && metric_noise_sd.is_finite()) {
            return Err(SimError::Noise);
        }
        Ok(Self {
            suite,
            mixture,
            noise_cv,
            metric_noise_sd,
        })
    }

    /// Noiseless mixture performance of a normalized vector.
    pub fn true_value(&self, x: &[f64]) -> f64 {
        self.suite
            .surfaces
            .iter()
            .zip(self.mixture.weights())
            .filter(|(_, &w)| w > 0.0)
            .map(|(s, w)| w * s.evaluate(x))
            .sum()
    }

    pub fn true_performance(&self, config: &Configuration) -> Result<f64, SimError> {
        Ok(self.true_value(&self.suite.space.normalize(config)?))
    }

    fn floor(&self) -> f64 {
        self.suite
            .surfaces
            .iter()
            .zip(self.mixture.weights())
            .map(|(s, w)| w * s.scale * s.floor)
            .sum()
    }

    pub fn observe(&self, config: &Configuration, noise_seed: u64) -> Result<f64, SimError> {
        let value = self.true_performance(config)?;
        let g: f64 = StandardNormal.sample(&mut stream_rng(noise_seed, 0, Purpose::Noise));
        Ok((value * (1.0 + self.noise_cv * g)).max(0.01 * self.floor()))
    }

    pub fn emit_metrics(&self, duration_seed: u64) -> Result<WorkloadMetrics, SimError> {
        let clean = compose_metrics(&self.suite.basics, &self.mixture)?;
        let mut rng = stream_rng(duration_seed, 0, Purpose::Metrics);
        let noisy: Vec<f64> = clean
            .vector()
            .iter()
            .zip(&self.suite.metric_scale)
            .map(|(v, s)| {
                let g: f64 = StandardNormal.sample(&mut rng);
                (v + self.metric_noise_sd * s * g).max(0.0)
            })
            .collect();
        Ok(WorkloadMetrics::from_vector(&noisy, clean.internal.len())?)
    }

    /// Objective whose i-th evaluation draws noise from stream i of `noise_seed`.
    pub fn objective(&self, noise_seed: u64) -> DbObjective<'_, 'a> {
        DbObjective {
            db: self,
            noise_seed,
            evaluations: 0,
        }
    }
}

/// Observe `config` on a suite database running `mixture`.
pub fn observe_performance(
    db: &SimulatedDb<'_>,
    config: &Configuration,
    mixture: &MixtureWeights,
    noise_seed: u64,
) -> Result<f64, SimError> {
    SimulatedDb::new(db.suite, mixture.clone(), db.noise_cv, db.metric_noise_sd)?.observe(config, noise_seed)
}

pub fn emit_metrics(db: &SimulatedDb<'_>, duration_seed: u64) -> Result<WorkloadMetrics, SimError> {
    db.emit_metrics(duration_seed)
}

pub struct DbObjective<'d, 'a> {
    db: &'d SimulatedDb<'a>,
    noise_seed: u64,
    evaluations: u64,
}

impl DbObjective<'_, '_> {
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }
}

impl crate::tuner::Objective for DbObjective<'_, '_> {
    fn evaluate(&mut self, config: &Configuration) -> Result<f64, ObjectiveError> {
        let seed = derive_seed(self.noise_seed, self.evaluations, Purpose::Noise);
        self.evaluations += 1;
        self.db.observe(config, seed).map_err(|e| ObjectiveError(e.to_string()))
    }
}

/// Uniform draw from the simplex (flat Dirichlet).
pub fn random_mixture(k: usize, seed: u64) -> MixtureWeights {
    let mut rng = stream_rng(seed, 0, Purpose::Structure);
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = raw.iter().sum();
    MixtureWeights::new(raw.iter().map(|r| r / total).collect()).expect("normalized draw")
}

/// Settings for generating historical tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepoSettings {
    pub task_count: usize,
    pub iterations_per_task: usize,
    pub noise_cv: f64,
    pub metric_noise_sd: f64,
}

impl Default for RepoSettings {
    fn default() -> Self {
        Self {
            task_count: 10,
            iterations_per_task: 60,
            noise_cv: 0.03,
            metric_noise_sd: 0.01,
        }
    }
}

/// One historical task per random mixture, tuned with vanilla SMAC.
/// Mixtures and tuner decisions follow `seed`; observation and metric noise
/// follow `noise_seed`.
pub fn make_experience_repository(
    suite: &BenchmarkSuite,
    settings: &RepoSettings,
    seed: u64,
    noise_seed: u64,
) -> Result<ExperienceRepository, SimError> {
    if settings.task_count == 0 {
        return Err(SimError::NoTasks);
    }
    let traces = (0..settings.task_count)
        .map(|t| {
            let t = t as u64;
            let mixture = random_mixture(suite.k(), derive_seed(seed, t, Purpose::Structure));
            let db = SimulatedDb::new(suite, mixture, settings.noise_cv, settings.metric_noise_sd)?;
            let cfg = TunerConfig {
                max_iterations: settings.iterations_per_task,
                init_random_count: settings.iterations_per_task.min(10),
                ..TunerConfig::default()
            };
            let mut objective = db.objective(derive_seed(noise_seed, t, Purpose::Noise));
            let outcome = run_smac(&suite.space, &mut objective, &cfg, derive_seed(seed, t, Purpose::Candidates), None)?;
            let metrics = db.emit_metrics(derive_seed(noise_seed, t, Purpose::Metrics))?;
            let observations = outcome
                .observations
                .entries()
                .iter()
                .map(|o| (o.config.clone(), o.perf))
                .collect();
            Ok(ExperienceTrace::new(metrics, observations)?)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(ExperienceRepository::from_traces(traces)?)
}
