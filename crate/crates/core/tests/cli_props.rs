use std::path::Path;

use knobforge::cli::{read_tuning_csv, run, CsvReport};
use knobforge::knowledge::ExperienceRepository;
use knobforge::simenv::{make_benchmark_suite, BenchmarkSuite, SimulatedDb};
use knobforge::space::Configuration;
use knobforge::tuner::{run_smac, IterationRecord, Objective, ObjectiveError, TuneError, TunerConfig};

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn setup(dir: &Path) {
    assert_eq!(run(["knobforge", "gen-suite", "--out", &path(dir, "suite.json"), "--seed", "2"]), 0);
    let code = run([
        "knobforge", "gen-repo", "--suite", &path(dir, "suite.json"), "--out", &path(dir, "repo.jsonl"), "--tasks",
        "6", "--iterations", "25",
    ]);
    assert_eq!(code, 0);
}

#[test]
fn ten_seeds_give_ten_deterministic_csvs() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = path(dir.path(), "runs");
    let args = [
        "knobforge", "tune", "--suite", &path(dir.path(), "suite.json"), "--optimizer", "smac", "--seed", "1..10",
        "--iterations", "15", "--init-random", "5", "--candidates", "50", "--out", &out,
    ];
    assert_eq!(run(args), 0);
    let read = || -> Vec<Vec<u8>> {
        (1..=10).map(|s| std::fs::read(format!("{out}/smac-seed{s}.csv")).unwrap()).collect()
    };
    let first = read();
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 10);
    assert_eq!(run(args), 0);
    assert_eq!(first, read());
    let text = String::from_utf8(first[0].clone()).unwrap();
    assert!(text.starts_with("# manifest: {"));
    assert_eq!(text.lines().count(), 2 + 15);
}

#[test]
fn crashed_run_leaves_a_parseable_prefix() {
    let suite = make_benchmark_suite(3, 5, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("partial.csv");
    let mut report = CsvReport::create(&file, &serde_json::json!({"subcommand": "test"}), &suite.space).unwrap();
    let db = SimulatedDb::new(&suite, knobforge::cli::task_mixture(&suite, 0), 0.0, 0.0).unwrap();
    let mut inner = db.objective(0);
    let mut calls = 0;
    let mut objective = |c: &Configuration| {
        calls += 1;
        if calls == 8 {
            return Err(ObjectiveError("lost connection".into()));
        }
        inner.evaluate(c)
    };
    let mut observer = |r: &IterationRecord<'_>| report.record(r);
    let cfg = TunerConfig {
        max_iterations: 20,
        init_random_count: 4,
        candidate_samples: 30,
        ..TunerConfig::default()
    };
    let err = run_smac(&suite.space, &mut objective, &cfg, 0, Some(&mut observer)).unwrap_err();
    let TuneError::Objective { partial, .. } = err else { panic!() };
    let rows = read_tuning_csv(&file, &suite.space).unwrap();
    assert_eq!(rows.len(), 7);
    let expected: Vec<(Configuration, f64)> = partial.entries().iter().map(|o| (o.config.clone(), o.perf)).collect();
    assert_eq!(rows, expected);
}

#[test]
fn repository_file_round_trips_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let suite = BenchmarkSuite::load(&dir.path().join("suite.json")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("repo.jsonl")).unwrap();
    assert!(text.starts_with("{\"manifest\":"));
    let repo = ExperienceRepository::load(&suite.space, text.as_bytes()).unwrap();
    assert_eq!(repo.len(), 6);
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert_eq!(repo.to_jsonl(&suite.space), body);
}

#[test]
fn one_hot_target_synthesizes_a_one_hot_mixture() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = path(dir.path(), "mix.json");
    let code = run([
        "knobforge", "synth", "--suite", &path(dir.path(), "suite.json"), "--mixture", "0,0,1,0", "--metric-noise",
        "0", "--mix-size", "1", "--out", &out,
    ]);
    assert_eq!(code, 0);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["weights"], serde_json::json!([0.0, 0.0, 1.0, 0.0]));
    assert_eq!(doc["support"], serde_json::json!(["TPCC"]));
    assert_eq!(doc["similarity"], 1.0);
    assert_eq!(doc["manifest"]["subcommand"], "synth");
}

#[test]
fn zero_gap_e2e_accepts_the_clone_incumbent_first() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = path(dir.path(), "e2e.json");
    let code = run([
        "knobforge", "e2e", "--suite", &path(dir.path(), "suite.json"), "--repo", &path(dir.path(), "repo.jsonl"),
        "--mixture", "0.1,0.2,0.3,0.4", "--mix-size", "4", "--noise-cv", "0", "--metric-noise", "0", "--iterations",
        "40", "--out", &out,
    ]);
    assert_eq!(code, 0);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let trace = doc["selection"]["trace"].as_array().unwrap();
    let first_accept = trace.iter().find(|t| t["decision"] == "accept").unwrap();
    assert_eq!(first_accept["config"], doc["clone_incumbent"]["config"]);
    assert!(doc["configuration_updates"].as_u64().unwrap() <= 12);
    assert_eq!(doc["candidate_count"], 27);
}

#[test]
fn select_reads_tune_output() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let runs = path(dir.path(), "runs");
    let code = run([
        "knobforge", "tune", "--suite", &path(dir.path(), "suite.json"), "--repo", &path(dir.path(), "repo.jsonl"),
        "--seed", "4", "--iterations", "30", "--out", &runs,
    ]);
    assert_eq!(code, 0);
    let out = path(dir.path(), "select.json");
    let code = run([
        "knobforge", "select", "--suite", &path(dir.path(), "suite.json"), "--candidates",
        &format!("{runs}/eesmac-seed4.csv"), "--clusters", "3", "--out", &out,
    ]);
    assert_eq!(code, 0);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["observations_used"].as_u64().unwrap() as usize, doc["trace"].as_array().unwrap().len());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let suite = path(dir.path(), "suite.json");
    let out = path(dir.path(), "x.json");
    // usage: unknown flag, bad seed list, m > k, eesmac without a repository
    assert_eq!(run(["knobforge", "synth", "--suite", &suite, "--out", &out, "--unknown"]), 1);
    assert_eq!(run(["knobforge", "tune", "--suite", &suite, "--out", &out, "--seed", "9..1"]), 1);
    assert_eq!(run(["knobforge", "synth", "--suite", &suite, "--out", &out, "--mix-size", "9"]), 1);
    assert_eq!(run(["knobforge", "tune", "--suite", &suite, "--out", &out]), 1);
    // input format
    let bad = path(dir.path(), "bad.csv");
    std::fs::write(&bad, "iteration,perf\n0,1\n").unwrap();
    assert_eq!(run(["knobforge", "select", "--suite", &suite, "--candidates", &bad, "--out", &out]), 2);
    std::fs::write(path(dir.path(), "broken.json"), "{").unwrap();
    assert_eq!(run(["knobforge", "gen-repo", "--suite", &path(dir.path(), "broken.json"), "--out", &out]), 2);
}
