//! Production-side configuration replacement: deploy few candidates, never
//! keep a regression.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Purpose};
use crate::space::{euclidean, Configuration, ConfigurationSpace, SpaceError};
use crate::tuner::ObjectiveError;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("k-means needs at least {k} points, got {points}")]
    TooFewPoints { k: usize, points: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("selection needs clusters >= 2, threshold >= 0 and a positive baseline")]
    InvalidParams,
    #[error("production observation failed: {source}")]
    Observation {
        source: ObjectiveError,
        partial: SelectionReport,
    },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }

    pub fn inertia(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .zip(&self.assignment)
            .map(|(p, &c)| euclidean(p, &self.centroids[c]).powi(2))
            .sum()
    }
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = euclidean(p, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn mean_of(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; points[0].len()];
    for &i in members {
        m.iter_mut().zip(&points[i]).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= members.len() as f64);
    m
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<Clustering, SelectionError> {
    if k == 0 {
        return Err(SelectionError::ZeroClusters);
    }
    if points.len() < k {
        return Err(SelectionError::TooFewPoints { k, points: points.len() });
    }
    let mut rng = stream_rng(seed, 0, Purpose::Structure);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| euclidean(p, &centroids[nearest(p, &centroids)]).powi(2))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..max_iters.max(1) {
        repair_empty(points, &mut assignment, &mut centroids, k);
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..points.len()).filter(|&i| assignment[i] == c).collect();
            *centroid = mean_of(points, &members);
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    repair_empty(points, &mut assignment, &mut centroids, k);
    for (c, centroid) in centroids.iter_mut().enumerate() {
        let members: Vec<usize> = (0..points.len()).filter(|&i| assignment[i] == c).collect();
        *centroid = mean_of(points, &members);
    }
    Ok(Clustering { assignment, centroids })
}

/// Give every empty cluster the point farthest from its own centroid
/// (taken only from clusters that keep at least one member).
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>], k: usize) {
    for c in 0..k {
        if assignment.contains(&c) {
            continue;
        }
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&a| sizes[a] += 1);
        let donor = (0..points.len())
            .filter(|&i| sizes[assignment[i]] > 1)
            .max_by(|&a, &b| {
                let da = euclidean(&points[a], &centroids[assignment[a]]);
                let db = euclidean(&points[b], &centroids[assignment[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("more points than clusters");
        assignment[donor] = c;
        centroids[c] = points[donor].clone();
    }
}

/// Candidates sorted by synthetic performance, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    entries: Vec<(Configuration, f64)>,
}

impl CandidateSet {
    pub fn new(mut entries: Vec<(Configuration, f64)>) -> Result<Self, SelectionError> {
        if entries.is_empty() {
            return Err(SelectionError::NoCandidates);
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(Configuration, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    RegressDiscard,
    Accept,
    NeighborImprove,
    NeighborStop,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::RegressDiscard => "regress-discard",
            Decision::Accept => "accept",
            Decision::NeighborImprove => "neighbor-improve",
            Decision::NeighborStop => "neighbor-stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// Index into the candidate set.
    pub candidate: usize,
    pub config: Configuration,
    pub perf: f64,
    pub decision: Decision,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionReport {
    pub chosen: Option<(usize, Configuration, f64)>,
    pub trace: Vec<TraceEntry>,
}

impl SelectionReport {
    pub fn observations_used(&self) -> usize {
        self.trace.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub threshold: f64,
    pub clusters: usize,
    pub max_depth: usize,
    pub kmeans_iters: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            clusters: 3,
            max_depth: 4,
            kmeans_iters: 100,
        }
    }
}

/// `K * ceil(log_K n) + K`.
pub fn observation_bound(n: usize, k: usize) -> usize {
    let mut levels = 0;
    let mut reach = 1usize;
    while reach < n {
        reach = reach.saturating_mul(k);
        levels += 1;
    }
    k * levels + k
}

struct Walk<'a> {
    candidates: &'a CandidateSet,
    observe: &'a mut dyn FnMut(&Configuration) -> Result<f64, ObjectiveError>,
    seen: Vec<Option<f64>>,
    report: SelectionReport,
    budget: usize,
}

impl Walk<'_> {
    /// Production performance of a candidate, deploying it only once. `None`
    /// when the observation budget is spent.
    fn perf(&mut self, i: usize, decide: impl Fn(f64) -> Decision, depth: usize) -> Result<Option<f64>, SelectionError> {
        if let Some(p) = self.seen[i] {
            return Ok(Some(p));
        }
        if self.report.trace.len() >= self.budget {
            return Ok(None);
        }
        let config = &self.candidates.entries[i].0;
        let perf = (self.observe)(config).map_err(|source| SelectionError::Observation {
            source,
            partial: self.report.clone(),
        })?;
        self.seen[i] = Some(perf);
        self.report.trace.push(TraceEntry {
            candidate: i,
            config: config.clone(),
            perf,
            decision: decide(perf),
            depth,
        });
        Ok(Some(perf))
    }
}

/// Recursive cluster-based selection against the production baseline
/// `baseline`. The chosen configuration is the best observed one that clears
/// the threshold, or none.
pub fn recursive_select(
    space: &ConfigurationSpace,
    candidates: &CandidateSet,
    observe: &mut dyn FnMut(&Configuration) -> Result<f64, ObjectiveError>,
    baseline: f64,
    params: &SelectionParams,
    seed: u64,
) -> Result<SelectionReport, SelectionError> {
    if params.clusters < 2 || !(params.threshold >= 0.0) || !(baseline > 0.0) {
        return Err(SelectionError::InvalidParams);
    }
    let points = candidates
        .entries
        .iter()
        .map(|(c, _)| space.normalize(c))
        .collect::<Result<Vec<_>, _>>()?;
    let accepts = |perf: f64| (perf - baseline) / baseline >= params.threshold;
    let mut walk = Walk {
        candidates,
        observe,
        seen: vec![None; candidates.len()],
        report: SelectionReport::default(),
        budget: observation_bound(candidates.len(), params.clusters),
    };

    // Pool entries are candidate indices, so "best by synthetic perf" is the
    // smallest index.
    let mut pool: Vec<usize> = (0..candidates.len()).collect();
    let mut depth = 0;
    if pool.len() == 1 {
        walk.perf(0, |p| if accepts(p) { Decision::Accept } else { Decision::RegressDiscard }, 0)?;
    }
    'levels: while depth < params.max_depth && pool.len() > 1 {
        let k = params.clusters.min(pool.len());
        let local: Vec<Vec<f64>> = pool.iter().map(|&i| points[i].clone()).collect();
        let clustering = kmeans(&local, k, seed.wrapping_add(depth as u64), params.kmeans_iters)?;
        let cluster_of = |i: usize| clustering.assignment[pool.iter().position(|&p| p == i).unwrap()];
        let best_in = |c: usize| clustering.members(c).into_iter().map(|j| pool[j]).min().unwrap();
        let mut visited = vec![false; k];

        let (mut current_cluster, mut current_perf) = loop {
            let Some(p) = pool.iter().copied().find(|&i| !visited[cluster_of(i)]) else {
                break 'levels;
            };
            let decide = |perf| if accepts(perf) { Decision::Accept } else { Decision::RegressDiscard };
            let Some(perf) = walk.perf(p, decide, depth)? else {
                break 'levels;
            };
            visited[cluster_of(p)] = true;
            if accepts(perf) {
                break (cluster_of(p), perf);
            }
        };

        let mut best_cluster = current_cluster;
        loop {
            let next = (0..k).filter(|&c| !visited[c]).min_by(|&a, &b| {
                let da = euclidean(&clustering.centroids[a], &clustering.centroids[current_cluster]);
                let db = euclidean(&clustering.centroids[b], &clustering.centroids[current_cluster]);
                da.total_cmp(&db).then(a.cmp(&b))
            });
            let Some(next) = next else { break };
            visited[next] = true;
            let q = best_in(next);
            let incumbent = current_perf;
            let decide = move |perf| {
                if perf > incumbent {
                    Decision::NeighborImprove
                } else {
                    Decision::NeighborStop
                }
            };
            let Some(perf) = walk.perf(q, decide, depth)? else {
                break;
            };
            if perf > current_perf {
                current_perf = perf;
                current_cluster = next;
                best_cluster = next;
            } else {
                break;
            }
        }

        pool = clustering.members(best_cluster).into_iter().map(|j| pool[j]).collect();
        depth += 1;
    }

    let best = walk
        .report
        .trace
        .iter()
        .filter(|t| accepts(t.perf))
        .max_by(|a, b| a.perf.total_cmp(&b.perf).then(b.candidate.cmp(&a.candidate)));
    walk.report.chosen = best.map(|t| (t.candidate, t.config.clone(), t.perf));
    Ok(walk.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::space::{KnobSpec, KnobValue};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 2.0]];
        let c = kmeans(&pts, 1, 0, 10).unwrap();
        assert_eq!(c.assignment, vec![0, 0, 0]);
        assert_eq!(c.centroids[0], vec![2.0, 2.0]);
    }

    #[test]
    fn k_equal_to_n_gives_zero_cost() {
        let pts = vec![vec![0.1], vec![0.5], vec![0.9], vec![0.3]];
        let c = kmeans(&pts, 4, 3, 10).unwrap();
        let mut seen = c.assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert_eq!(c.inertia(&pts), 0.0);
        assert!(matches!(kmeans(&pts, 5, 0, 10), Err(SelectionError::TooFewPoints { .. })));
    }

    #[test]
    fn separated_blobs_are_recovered() {
        for seed in 0..10 {
            let mut rng = rng_for(seed, 0);
            let centers = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]];
            let sigma = 0.02;
            let mut pts = Vec::new();
            let mut labels = Vec::new();
            for (l, c) in centers.iter().enumerate() {
                for _ in 0..15 {
                    let g: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
                    pts.push(vec![c[0] + sigma * g[0], c[1] + sigma * g[1]]);
                    labels.push(l);
                }
            }
            let c = kmeans(&pts, 3, seed, 100).unwrap();
            // Same partition up to relabelling.
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    assert_eq!(labels[i] == labels[j], c.assignment[i] == c.assignment[j]);
                }
            }
        }
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![0.5]; 6];
        let c = kmeans(&pts, 3, 1, 10).unwrap();
        for k in 0..3 {
            assert!(!c.members(k).is_empty());
        }
    }

    #[test]
    fn bound_values() {
        assert_eq!(observation_bound(27, 3), 12);
        assert_eq!(observation_bound(1, 3), 3);
        assert_eq!(observation_bound(28, 3), 15);
    }

    fn line() -> ConfigurationSpace {
        ConfigurationSpace::new(vec![
            KnobSpec::continuous("a", 0.0, 1.0, 0.5).unwrap(),
            KnobSpec::continuous("b", 0.0, 1.0, 0.5).unwrap(),
        ])
        .unwrap()
    }

    fn coords(c: &Configuration) -> Vec<f64> {
        c.values()
            .iter()
            .map(|v| match v {
                KnobValue::Float(x) => *x,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn single_improving_candidate() {
        let space = line();
        let c = space.default_configuration();
        let set = CandidateSet::new(vec![(c.clone(), 5.0)]).unwrap();
        let mut obs = |_: &Configuration| Ok(11.0);
        let r = recursive_select(&space, &set, &mut obs, 10.0, &SelectionParams::default(), 0).unwrap();
        assert_eq!(r.observations_used(), 1);
        assert_eq!(r.chosen.unwrap().1, c);
    }

    #[test]
    fn all_regressions_choose_nothing() {
        let space = line();
        let set = CandidateSet::new(space.random_sample_seeded(27, 2).into_iter().map(|c| (c, 1.0)).collect()).unwrap();
        let mut obs = |_: &Configuration| Ok(1.0);
        let r = recursive_select(&space, &set, &mut obs, 10.0, &SelectionParams::default(), 0).unwrap();
        assert!(r.chosen.is_none());
        assert!(r.observations_used() <= 3);
        assert!(r.trace.iter().all(|t| t.decision == Decision::RegressDiscard));
    }

    #[test]
    fn trace_has_no_redeployments_and_respects_bound() {
        let space = line();
        for seed in 0..30 {
            let configs = space.random_sample_seeded(27, seed);
            let perf = |c: &Configuration| {
                let x = coords(c);
                10.0 + 5.0 * (1.0 - (x[0] - 0.3).powi(2) - (x[1] - 0.7).powi(2))
            };
            let set = CandidateSet::new(configs.iter().map(|c| (c.clone(), perf(c))).collect()).unwrap();
            let mut obs = |c: &Configuration| Ok(perf(c) * 1.01);
            let params = SelectionParams::default();
            let r = recursive_select(&space, &set, &mut obs, 12.0, &params, seed).unwrap();
            assert!(r.observations_used() <= 12);
            let mut ids: Vec<usize> = r.trace.iter().map(|t| t.candidate).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), r.trace.len());
            if let Some((_, _, p)) = r.chosen {
                assert!(p >= 12.0);
                assert!(r.trace.iter().all(|t| t.perf <= p));
            }
        }
    }

    #[test]
    fn observer_failure_keeps_partial_trace() {
        let space = line();
        let set = CandidateSet::new(space.random_sample_seeded(9, 1).into_iter().map(|c| (c, 1.0)).collect()).unwrap();
        let mut n = 0;
        let mut obs = |_: &Configuration| {
            n += 1;
            if n == 2 {
                Err(ObjectiveError("rollback".into()))
            } else {
                Ok(0.5)
            }
        };
        match recursive_select(&space, &set, &mut obs, 1.0, &SelectionParams::default(), 0) {
            Err(SelectionError::Observation { partial, .. }) => assert_eq!(partial.observations_used(), 1),
            other => panic!("{other:?}"),
        }
    }
}
