//! Optimization loops: generic BO, vanilla SMAC (forest surrogate + EI),
//! random search and experience-enhanced SMAC.
//!
//! Every loop maximizes performance and spends exactly `max_iterations`
//! objective evaluations. All randomness is drawn from per-iteration
//! streams of the run seed, so a run can be replayed step by step.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::knowledge::{
    extract_common_knowledge, fit_performance_predictors, ExperienceRepository, KnowledgeError,
    WorkloadMetrics,
};
use crate::models::{ClassifierParams, ForestParams, LinearClassifier, ModelError, RegressionForest};
use crate::rng::{derive_seed, stream_rng, Purpose};
use crate::space::{Configuration, ConfigurationSpace, SpaceError};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ObjectiveError(pub String);

/// The black box being tuned: configuration in, performance (higher is
/// better) out.
pub trait Objective {
    fn evaluate(&mut self, config: &Configuration) -> Result<f64, ObjectiveError>;
}

impl<F> Objective for F
where
    F: FnMut(&Configuration) -> Result<f64, ObjectiveError>,
{
    fn evaluate(&mut self, config: &Configuration) -> Result<f64, ObjectiveError> {
        self(config)
    }
}

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid tuner configuration: {0}")]
    InvalidConfig(String),
    #[error("negative predictive variance {0}")]
    NegativeVariance(f64),
    #[error("the surrogate must be trained when the history weight is below 1")]
    UntrainedSurrogate,
    #[error("history models disagree in length: {ckps} CKPs, {predictors} predictors, {weights} weights")]
    HistoryMismatch {
        ckps: usize,
        predictors: usize,
        weights: usize,
    },
    #[error("objective failed after {} observations: {source}", partial.len())]
    Objective {
        source: ObjectiveError,
        partial: ObservationSet,
    },
    #[error("observation could not be recorded: {0}")]
    Sink(#[from] std::io::Error),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub max_iterations: usize,
    pub init_random_count: usize,
    pub candidate_samples: usize,
    /// Fraction of the budget spent guided by history alone.
    pub init_ratio: f64,
    pub decay: f64,
    /// Probability of an epsilon-greedy random observation after the init phase.
    pub random_ratio: f64,
    pub transfer_quantity: usize,
    pub percentile: f64,
    pub forest: ForestParams,
    pub classifier: ClassifierParams,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            init_random_count: 10,
            candidate_samples: 500,
            init_ratio: 0.1,
            decay: 0.05,
            random_ratio: 0.05,
            transfer_quantity: 5,
            percentile: 90.0,
            forest: ForestParams::default(),
            classifier: ClassifierParams::default(),
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<(), TuneError> {
        let bad = |m: &str| Err(TuneError::InvalidConfig(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.candidate_samples == 0 {
            return bad("candidate_samples must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.init_ratio) {
            return bad("init_ratio must lie in [0, 1]");
        }
        if self.decay.is_nan() || self.decay < 0.0 {
            return bad("decay must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.random_ratio) {
            return bad("random_ratio must lie in [0, 1]");
        }
        if self.transfer_quantity == 0 {
            return bad("transfer_quantity must be at least 1");
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return bad("percentile must lie in [0, 100]");
        }
        Ok(())
    }

    fn validate_bo(&self) -> Result<(), TuneError> {
        self.validate()?;
        if self.init_random_count == 0 || self.init_random_count > self.max_iterations {
            return Err(TuneError::InvalidConfig(
                "need max_iterations >= init_random_count >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Random,
    Guided,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Random => "random",
            Phase::Guided => "guided",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub config: Configuration,
    pub perf: f64,
    /// History weight in force when the point was chosen; `None` for
    /// optimizers without history.
    pub zeta: Option<f64>,
    pub phase: Phase,
}

/// Observations in evaluation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    entries: Vec<Observation>,
    best: Option<usize>,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: Observation) {
        let better = match self.best {
            None => true,
            Some(b) => obs.perf > self.entries[b].perf,
        };
        self.entries.push(obs);
        if better {
            self.best = Some(self.entries.len() - 1);
        }
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest-performance entry; the earliest one on ties.
    pub fn incumbent(&self) -> Option<&Observation> {
        self.best.map(|b| &self.entries[b])
    }

    /// Best-so-far performance after each observation.
    pub fn incumbent_series(&self) -> Vec<f64> {
        self.entries
            .iter()
            .scan(f64::NEG_INFINITY, |best, o| {
                *best = best.max(o.perf);
                Some(*best)
            })
            .collect()
    }

    /// Top `k` entries by performance, best first; ties keep evaluation order.
    pub fn top_k(&self, k: usize) -> Vec<&Observation> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| self.entries[b].perf.total_cmp(&self.entries[a].perf));
        order.into_iter().take(k).map(|i| &self.entries[i]).collect()
    }

    fn training_data(&self, space: &ConfigurationSpace) -> Result<Vec<(Vec<f64>, f64)>, SpaceError> {
        self.entries
            .iter()
            .map(|o| Ok((space.normalize(&o.config)?, o.perf)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: Configuration,
    pub observations: ObservationSet,
}

/// One row of the per-iteration report, handed to observers as it happens.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord<'a> {
    pub iteration: usize,
    pub observation: &'a Observation,
    pub incumbent: f64,
}

pub type Observer<'a> = dyn FnMut(&IterationRecord<'_>) -> std::io::Result<()> + 'a;

/// Closed-form expected improvement over `incumbent` for a Gaussian
/// predictive distribution, oriented for maximization.
pub fn expected_improvement(mean: f64, variance: f64, incumbent: f64) -> Result<f64, TuneError> {
    if variance.is_nan() || variance < 0.0 {
        return Err(TuneError::NegativeVariance(variance));
    }
    let sigma = variance.sqrt();
    let gain = mean - incumbent;
    if sigma == 0.0 {
        return Ok(gain.max(0.0));
    }
    let z = gain / sigma;
    let std = Normal::standard();
    Ok((gain * std.cdf(z) + sigma * std.pdf(z)).max(0.0))
}

/// History weight: 1 through the init phase, then
/// `max(1 - decay * (observed - init_ratio * max_iterations), 0)`.
pub fn decay_weight(observed: usize, cfg: &TunerConfig) -> f64 {
    let progressed = observed as f64 - cfg.init_ratio * cfg.max_iterations as f64;
    if progressed <= 0.0 {
        return 1.0;
    }
    (1.0 - cfg.decay * progressed).max(0.0)
}

/// Average ranks rescaled to `[0, 1]` (lowest value 0, highest 1). A single
/// value maps to 1.
pub fn rank_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0;
        for &i in &order[start..=end] {
            ranks[i] = avg / (n - 1) as f64;
        }
        start = end + 1;
    }
    ranks
}

/// Transferred history for one tuning session: CKPs, per-task performance
/// predictors and similarity weights, all order-aligned.
#[derive(Debug, Clone)]
pub struct HistoryModels {
    pub ckps: Vec<LinearClassifier>,
    pub predictors: Vec<RegressionForest>,
    pub weights: Vec<f64>,
}

impl HistoryModels {
    pub fn new(
        ckps: Vec<LinearClassifier>,
        predictors: Vec<RegressionForest>,
        weights: Vec<f64>,
    ) -> Result<Self, TuneError> {
        if ckps.len() != predictors.len() || ckps.len() != weights.len() {
            return Err(TuneError::HistoryMismatch {
                ckps: ckps.len(),
                predictors: predictors.len(),
                weights: weights.len(),
            });
        }
        Ok(Self {
            ckps,
            predictors,
            weights,
        })
    }

    /// Match the target against the repository and build the models.
    pub fn transfer(
        space: &ConfigurationSpace,
        repo: &ExperienceRepository,
        target: &WorkloadMetrics,
        cfg: &TunerConfig,
        seed: u64,
    ) -> Result<Self, TuneError> {
        let matches = repo.top_n_matches(target, cfg.transfer_quantity)?;
        let traces: Vec<_> = matches.indices.iter().map(|&i| &repo.traces()[i]).collect();
        let ckps = extract_common_knowledge(
            space,
            &traces,
            cfg.percentile,
            cfg.classifier,
            derive_seed(seed, 0, Purpose::Classifiers),
        )?;
        let predictors = fit_performance_predictors(
            space,
            &traces,
            cfg.forest,
            derive_seed(seed, 0, Purpose::Predictors),
        )?;
        Self::new(ckps, predictors, matches.weights)
    }

    /// `votes . S + perfs . S` for every candidate, with each predictor's
    /// outputs rank-normalized across the batch.
    pub fn history_scores(&self, batch: &[Vec<f64>]) -> Result<Vec<f64>, TuneError> {
        let mut scores = vec![0.0; batch.len()];
        for ((ckp, predictor), &w) in self.ckps.iter().zip(&self.predictors).zip(&self.weights) {
            let preds = batch
                .par_iter()
                .map(|x| predictor.predict(x).map(|(mean, _)| mean))
                .collect::<Result<Vec<_>, _>>()?;
            let ranks = rank_normalize(&preds);
            for ((s, x), r) in scores.iter_mut().zip(batch).zip(ranks) {
                let vote = if ckp.predict(x).0 { 1.0 } else { 0.0 };
                *s += vote * w + r * w;
            }
        }
        Ok(scores)
    }
}

/// Score of one candidate from its raw parts: `votes . S + perfs . S`, then
/// blended with the normalized surrogate score unless `zeta == 1`.
pub fn blend_scores(
    votes: &[bool],
    normalized_perfs: &[f64],
    weights: &[f64],
    zeta: f64,
    normalized_surrogate: Option<f64>,
) -> Result<f64, TuneError> {
    let history: f64 = votes
        .iter()
        .zip(normalized_perfs)
        .zip(weights)
        .map(|((&v, &p), &w)| (if v { 1.0 } else { 0.0 }) * w + p * w)
        .sum();
    if zeta == 1.0 {
        return Ok(history);
    }
    let current = normalized_surrogate.ok_or(TuneError::UntrainedSurrogate)?;
    Ok(zeta * history + (1.0 - zeta) * current)
}

/// Experience-enhanced scores for a whole candidate batch.
pub fn ee_scores(
    batch: &[Vec<f64>],
    history: &HistoryModels,
    surrogate: Option<&RegressionForest>,
    zeta: f64,
) -> Result<Vec<f64>, TuneError> {
    let hist = history.history_scores(batch)?;
    if zeta == 1.0 {
        return Ok(hist);
    }
    let surrogate = surrogate.ok_or(TuneError::UntrainedSurrogate)?;
    let optimistic = batch
        .par_iter()
        .map(|x| surrogate.predict(x).map(|(m, v)| m + v.sqrt()))
        .collect::<Result<Vec<_>, _>>()?;
    let current = rank_normalize(&optimistic);
    Ok(hist
        .iter()
        .zip(current)
        .map(|(h, c)| zeta * h + (1.0 - zeta) * c)
        .collect())
}

/// Experience-enhanced acquisition value of `batch[index]` within its batch.
pub fn ee_acquisition(
    index: usize,
    batch: &[Vec<f64>],
    history: &HistoryModels,
    surrogate: Option<&RegressionForest>,
    zeta: f64,
) -> Result<f64, TuneError> {
    Ok(ee_scores(batch, history, surrogate, zeta)?[index])
}

/// Acquisition used to rank a candidate batch.
#[derive(Debug, Clone, Copy)]
pub enum Acquisition<'a, S: Surrogate = RegressionForest> {
    ExpectedImprovement { surrogate: &'a S, incumbent: f64 },
    /// Rank-normalized `mean + sd`.
    Optimistic { surrogate: &'a S },
    ExperienceEnhanced {
        history: &'a HistoryModels,
        surrogate: Option<&'a RegressionForest>,
        zeta: f64,
    },
}

impl<S: Surrogate> Acquisition<'_, S> {
    pub fn score_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<f64>, TuneError> {
        match *self {
            Acquisition::ExpectedImprovement {
                surrogate,
                incumbent,
            } => batch
                .par_iter()
                .map(|x| {
                    let (m, v) = surrogate.predict(x)?;
                    expected_improvement(m, v, incumbent)
                })
                .collect(),
            Acquisition::Optimistic { surrogate } => {
                let raw = batch
                    .par_iter()
                    .map(|x| surrogate.predict(x).map(|(m, v)| m + v.sqrt()))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(rank_normalize(&raw))
            }
            Acquisition::ExperienceEnhanced {
                history,
                surrogate,
                zeta,
            } => ee_scores(batch, history, surrogate, zeta),
        }
    }
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Candidate batch drawn for iteration `iteration` of a run seeded by `seed`.
pub fn candidate_batch(space: &ConfigurationSpace, m: usize, seed: u64, iteration: usize) -> Vec<Configuration> {
    space.random_sample(m, &mut stream_rng(seed, iteration as u64, Purpose::Candidates))
}

/// Sample `m` candidates and return the best-scoring one with its score.
pub fn propose_next<S: Surrogate>(
    space: &ConfigurationSpace,
    acquisition: &Acquisition<'_, S>,
    m: usize,
    seed: u64,
    iteration: usize,
) -> Result<(Configuration, f64), TuneError> {
    let mut candidates = candidate_batch(space, m, seed, iteration);
    let batch = candidates
        .iter()
        .map(|c| space.normalize(c))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = acquisition.score_batch(&batch)?;
    let best = argmax(&scores);
    Ok((candidates.swap_remove(best), scores[best]))
}

/// A predictive model with mean and variance.
pub trait Surrogate: Sync {
    fn predict(&self, x: &[f64]) -> Result<(f64, f64), ModelError>;
}

impl Surrogate for RegressionForest {
    fn predict(&self, x: &[f64]) -> Result<(f64, f64), ModelError> {
        RegressionForest::predict(self, x)
    }
}

pub trait SurrogateFactory {
    type Model: Surrogate;
    fn fit(&self, data: &[(Vec<f64>, f64)], seed: u64) -> Result<Self::Model, ModelError>;
}

/// Random-forest surrogate, as in SMAC.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForestFactory(pub ForestParams);

impl SurrogateFactory for ForestFactory {
    type Model = RegressionForest;

    fn fit(&self, data: &[(Vec<f64>, f64)], seed: u64) -> Result<RegressionForest, ModelError> {
        RegressionForest::fit(data, self.0, seed)
    }
}

/// Objective evaluation plus bookkeeping shared by every loop.
struct Session<'a, 'o> {
    objective: &'a mut dyn Objective,
    observer: Option<&'a mut Observer<'o>>,
    set: ObservationSet,
}

impl<'a, 'o> Session<'a, 'o> {
    fn new(objective: &'a mut dyn Objective, observer: Option<&'a mut Observer<'o>>) -> Self {
        Self {
            objective,
            observer,
            set: ObservationSet::new(),
        }
    }

    fn observe(&mut self, config: Configuration, zeta: Option<f64>, phase: Phase) -> Result<(), TuneError> {
        let perf = match self.objective.evaluate(&config) {
            Ok(p) if p.is_finite() => p,
            Ok(p) => Err(ObjectiveError(format!("objective returned non-finite value {p}")))
                .map_err(|source| self.failure(source))?,
            Err(source) => return Err(self.failure(source)),
        };
        log::debug!("observation {}: perf {perf:.4} ({})", self.set.len(), phase.as_str());
        self.set.push(Observation {
            config,
            perf,
            zeta,
            phase,
        });
        if let Some(observer) = self.observer.as_mut() {
            let iteration = self.set.len() - 1;
            let record = IterationRecord {
                iteration,
                observation: &self.set.entries()[iteration],
                incumbent: self.set.incumbent().expect("non-empty").perf,
            };
            observer(&record)?;
        }
        Ok(())
    }

    fn failure(&self, source: ObjectiveError) -> TuneError {
        TuneError::Objective {
            source,
            partial: self.set.clone(),
        }
    }

    fn finish(self) -> TuneOutcome {
        TuneOutcome {
            best: self.set.incumbent().expect("budget >= 1").config.clone(),
            observations: self.set,
        }
    }
}

fn random_config(space: &ConfigurationSpace, seed: u64, iteration: usize) -> Configuration {
    space
        .random_sample(1, &mut stream_rng(seed, iteration as u64, Purpose::RandomConfig))
        .remove(0)
}

/// Generic Bayesian optimization: `init_random_count` random observations,
/// then fit / propose by expected improvement / observe until the budget is
/// spent.
pub fn run_bo<F: SurrogateFactory>(
    space: &ConfigurationSpace,
    objective: &mut dyn Objective,
    factory: &F,
    cfg: &TunerConfig,
    seed: u64,
    observer: Option<&mut Observer<'_>>,
) -> Result<TuneOutcome, TuneError> {
    cfg.validate_bo()?;
    let mut session = Session::new(objective, observer);
    while session.set.len() < cfg.init_random_count {
        let i = session.set.len();
        session.observe(random_config(space, seed, i), None, Phase::Init)?;
    }
    while session.set.len() < cfg.max_iterations {
        let i = session.set.len();
        let data = session.set.training_data(space)?;
        let model = factory.fit(&data, derive_seed(seed, i as u64, Purpose::Surrogate))?;
        let incumbent = session.set.incumbent().expect("init observed").perf;
        let acquisition = Acquisition::ExpectedImprovement {
            surrogate: &model,
            incumbent,
        };
        let (next, _) = propose_next(space, &acquisition, cfg.candidate_samples, seed, i)?;
        session.observe(next, None, Phase::Guided)?;
    }
    Ok(session.finish())
}

/// SMAC: random-forest surrogate with expected improvement.
pub fn run_smac(
    space: &ConfigurationSpace,
    objective: &mut dyn Objective,
    cfg: &TunerConfig,
    seed: u64,
    observer: Option<&mut Observer<'_>>,
) -> Result<TuneOutcome, TuneError> {
    run_bo(space, objective, &ForestFactory(cfg.forest), cfg, seed, observer)
}

/// Uniform random search over the whole budget.
pub fn run_random(
    space: &ConfigurationSpace,
    objective: &mut dyn Objective,
    cfg: &TunerConfig,
    seed: u64,
    observer: Option<&mut Observer<'_>>,
) -> Result<TuneOutcome, TuneError> {
    cfg.validate()?;
    let mut session = Session::new(objective, observer);
    while session.set.len() < cfg.max_iterations {
        let i = session.set.len();
        session.observe(random_config(space, seed, i), None, Phase::Random)?;
    }
    Ok(session.finish())
}

/// Experience-enhanced SMAC: a history-only phase for the first
/// `init_ratio * max_iterations` observations, then epsilon-greedy random
/// draws or surrogate/history blends with a decaying history weight.
pub fn run_eesmac(
    space: &ConfigurationSpace,
    objective: &mut dyn Objective,
    repo: &ExperienceRepository,
    target: &WorkloadMetrics,
    cfg: &TunerConfig,
    seed: u64,
    observer: Option<&mut Observer<'_>>,
) -> Result<TuneOutcome, TuneError> {
    cfg.validate()?;
    let history = HistoryModels::transfer(space, repo, target, cfg, seed)?;
    run_eesmac_with(space, objective, &history, cfg, seed, observer)
}

/// EESMAC loop with prebuilt history models.
pub fn run_eesmac_with(
    space: &ConfigurationSpace,
    objective: &mut dyn Objective,
    history: &HistoryModels,
    cfg: &TunerConfig,
    seed: u64,
    observer: Option<&mut Observer<'_>>,
) -> Result<TuneOutcome, TuneError> {
    cfg.validate()?;
    let init_boundary = cfg.init_ratio * cfg.max_iterations as f64;
    let mut session = Session::new(objective, observer);
    while session.set.len() < cfg.max_iterations {
        let i = session.set.len();
        if (i as f64) < init_boundary {
            let acquisition = Acquisition::<RegressionForest>::ExperienceEnhanced {
                history,
                surrogate: None,
                zeta: 1.0,
            };
            let (next, _) = propose_next(space, &acquisition, cfg.candidate_samples, seed, i)?;
            session.observe(next, Some(1.0), Phase::Init)?;
            continue;
        }
        let zeta = decay_weight(i, cfg);
        let draw: f64 = stream_rng(seed, i as u64, Purpose::Greedy).random();
        if draw < cfg.random_ratio {
            session.observe(random_config(space, seed, i), Some(zeta), Phase::Random)?;
            continue;
        }
        let surrogate = if zeta < 1.0 {
            let data = session.set.training_data(space)?;
            Some(RegressionForest::fit(
                &data,
                cfg.forest,
                derive_seed(seed, i as u64, Purpose::Surrogate),
            )?)
        } else {
            None
        };
        let acquisition = Acquisition::<RegressionForest>::ExperienceEnhanced {
            history,
            surrogate: surrogate.as_ref(),
            zeta,
        };
        let (next, _) = propose_next(space, &acquisition, cfg.candidate_samples, seed, i)?;
        session.observe(next, Some(zeta), Phase::Guided)?;
    }
    Ok(session.finish())
}
