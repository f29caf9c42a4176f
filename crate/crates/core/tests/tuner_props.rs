use knobforge::models::{ForestParams, LinearClassifier, RegressionForest};
use knobforge::rng::{derive_seed, Purpose};
use knobforge::simenv::{make_benchmark_suite, make_experience_repository, RepoSettings, SimulatedDb};
use knobforge::space::{Configuration, ConfigurationSpace, KnobSpec, KnobValue};
use knobforge::tuner::*;

fn unit_space(q: usize) -> ConfigurationSpace {
    ConfigurationSpace::new(
        (0..q)
            .map(|i| KnobSpec::continuous(&format!("x{i}"), 0.0, 1.0, 0.5).unwrap())
            .collect(),
    )
    .unwrap()
}

fn x0(c: &Configuration) -> f64 {
    match c.values()[0] {
        KnobValue::Float(v) => v,
        _ => unreachable!(),
    }
}

#[test]
fn equal_scores_return_the_first_candidate() {
    let space = unit_space(3);
    let flat = RegressionForest::fit(&[(vec![0.2, 0.2, 0.2], 4.0)], ForestParams::default(), 0).unwrap();
    let acquisition = Acquisition::ExpectedImprovement {
        surrogate: &flat,
        incumbent: 4.0,
    };
    let (chosen, score) = propose_next(&space, &acquisition, 50, 9, 3).unwrap();
    assert_eq!(score, 0.0);
    assert_eq!(chosen, candidate_batch(&space, 50, 9, 3)[0]);
    assert_eq!(propose_next(&space, &acquisition, 50, 9, 3).unwrap().0, chosen);
}

#[test]
fn history_only_proposal_prefers_the_ckp_halfspace() {
    let space = unit_space(4);
    let ckp = LinearClassifier::new(vec![1.0, 0.0, 0.0, 0.0], -0.5).unwrap();
    let flat = RegressionForest::fit(&[(vec![0.5; 4], 1.0)], ForestParams::default(), 0).unwrap();
    let history = HistoryModels::new(vec![ckp], vec![flat], vec![1.0]).unwrap();
    let acquisition = Acquisition::<RegressionForest>::ExperienceEnhanced {
        history: &history,
        surrogate: None,
        zeta: 1.0,
    };
    for iteration in 0..50 {
        let batch = candidate_batch(&space, 8, 21, iteration);
        let any_positive = batch.iter().any(|c| x0(c) > 0.5);
        let (chosen, _) = propose_next(&space, &acquisition, 8, 21, iteration).unwrap();
        if any_positive {
            assert!(x0(&chosen) > 0.5, "iteration {iteration}");
        }
        // Exhaustive rescoring: the proposal is the first maximum of the batch.
        let normalized: Vec<Vec<f64>> = batch.iter().map(|c| space.normalize(c).unwrap()).collect();
        let scores = acquisition.score_batch(&normalized).unwrap();
        assert_eq!(batch[argmax(&scores)], chosen);
    }
}

#[test]
fn smac_finds_a_one_dimensional_maximum() {
    let space = unit_space(1);
    let cfg = TunerConfig {
        max_iterations: 50,
        init_random_count: 10,
        ..TunerConfig::default()
    };
    // Dense-grid oracle for the argmax.
    let f = |x: f64| 5.0 - (x - 0.7).powi(2) * 8.0;
    let argmax = (0..=10_000).map(|i| i as f64 / 10_000.0).max_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
    let hits = (0..10)
        .filter(|&seed| {
            let mut objective = |c: &Configuration| Ok(f(x0(c)));
            let out = run_smac(&space, &mut objective, &cfg, seed, None).unwrap();
            (x0(&out.best) - argmax).abs() <= 0.05
        })
        .count();
    assert!(hits >= 9, "{hits}/10");
}

#[test]
fn degenerate_eesmac_replays_as_optimistic_smac() {
    let suite = make_benchmark_suite(4, 6, 2).unwrap();
    let repo = make_experience_repository(
        &suite,
        &RepoSettings {
            task_count: 5,
            iterations_per_task: 20,
            ..RepoSettings::default()
        },
        3,
        4,
    )
    .unwrap();
    let db = SimulatedDb::new(&suite, knobforge::cli::task_mixture(&suite, 0), 0.02, 0.01).unwrap();
    let target = db.emit_metrics(1).unwrap();
    let cfg = TunerConfig {
        max_iterations: 25,
        init_ratio: 0.0,
        random_ratio: 0.0,
        decay: f64::INFINITY,
        candidate_samples: 64,
        ..TunerConfig::default()
    };
    let seed = 17;
    let mut objective = db.objective(5);
    let out = run_eesmac(&suite.space, &mut objective, &repo, &target, &cfg, seed, None).unwrap();
    let entries = out.observations.entries();
    assert_eq!(entries.len(), 25);
    assert_eq!(entries[0].zeta, Some(1.0));
    // From the second observation on the history weight is 0, so each step is
    // a forest refit plus rank-normalized mean + sd over the same batch.
    for i in 1..entries.len() {
        assert_eq!(entries[i].zeta, Some(0.0));
        let data: Vec<(Vec<f64>, f64)> = entries[..i]
            .iter()
            .map(|o| (suite.space.normalize(&o.config).unwrap(), o.perf))
            .collect();
        let forest = RegressionForest::fit(&data, cfg.forest, derive_seed(seed, i as u64, Purpose::Surrogate)).unwrap();
        let acquisition = Acquisition::Optimistic { surrogate: &forest };
        let (expected, _) = propose_next(&suite.space, &acquisition, cfg.candidate_samples, seed, i).unwrap();
        assert_eq!(entries[i].config, expected, "step {i}");
    }
}

#[test]
fn zeta_schedule_and_determinism() {
    let suite = make_benchmark_suite(4, 6, 8).unwrap();
    let repo = make_experience_repository(
        &suite,
        &RepoSettings {
            task_count: 5,
            iterations_per_task: 15,
            ..RepoSettings::default()
        },
        1,
        1,
    )
    .unwrap();
    let db = SimulatedDb::new(&suite, knobforge::cli::task_mixture(&suite, 2), 0.03, 0.01).unwrap();
    let target = db.emit_metrics(0).unwrap();
    let cfg = TunerConfig {
        max_iterations: 40,
        init_ratio: 0.25,
        decay: 0.08,
        random_ratio: 0.2,
        candidate_samples: 64,
        ..TunerConfig::default()
    };
    let run = || {
        let mut objective = db.objective(3);
        run_eesmac(&suite.space, &mut objective, &repo, &target, &cfg, 6, None).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let zetas: Vec<f64> = a.observations.entries().iter().map(|o| o.zeta.unwrap()).collect();
    assert!(zetas[..10].iter().all(|z| *z == 1.0));
    assert!(zetas.windows(2).all(|w| w[1] <= w[0]));
    assert!(a.observations.entries()[..10].iter().all(|o| o.phase == Phase::Init));
    assert!(a.observations.entries()[10..].iter().any(|o| o.phase == Phase::Random));
}

#[test]
fn early_eesmac_incumbent_beats_smac_on_related_tasks() {
    let suite = make_benchmark_suite(4, 10, 21).unwrap();
    let repo = make_experience_repository(&suite, &RepoSettings::default(), 5, 6).unwrap();
    let db = SimulatedDb::new(&suite, knobforge::cli::task_mixture(&suite, 1), 0.03, 0.01).unwrap();
    let target = db.emit_metrics(9).unwrap();
    let cfg = TunerConfig {
        max_iterations: 5,
        init_random_count: 5,
        ..TunerConfig::default()
    };
    let wins = (0..10)
        .filter(|&seed| {
            let mut o = db.objective(seed);
            let ee = run_eesmac(&suite.space, &mut o, &repo, &target, &cfg, seed, None).unwrap();
            let mut o = db.objective(seed);
            let smac = run_smac(&suite.space, &mut o, &cfg, seed, None).unwrap();
            ee.observations.incumbent().unwrap().perf >= smac.observations.incumbent().unwrap().perf
        })
        .count();
    assert!(wins >= 8, "{wins}/10");
}

#[test]
fn eesmac_needs_enough_traces() {
    let suite = make_benchmark_suite(3, 4, 1).unwrap();
    let repo = make_experience_repository(
        &suite,
        &RepoSettings {
            task_count: 2,
            iterations_per_task: 5,
            ..RepoSettings::default()
        },
        0,
        0,
    )
    .unwrap();
    let db = SimulatedDb::new(&suite, knobforge::cli::task_mixture(&suite, 0), 0.0, 0.0).unwrap();
    let target = db.emit_metrics(0).unwrap();
    let mut o = db.objective(0);
    let err = run_eesmac(&suite.space, &mut o, &repo, &target, &TunerConfig::default(), 0, None).unwrap_err();
    assert!(matches!(err, TuneError::Knowledge(_)));
}
