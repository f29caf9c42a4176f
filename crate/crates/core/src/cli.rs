//! Command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 unreadable or malformed input,
//! 3 runtime failure. Every output file embeds the manifest of the
//! invocation that produced it.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::knowledge::{ExperienceRepository, MetricStats, WorkloadMetrics};
use crate::rng::{derive_seed, Purpose};
use crate::selection::{recursive_select, CandidateSet, SelectionParams, SelectionReport};
use crate::simenv::{make_benchmark_suite, make_experience_repository, random_mixture, BenchmarkSuite, RepoSettings, SimulatedDb};
use crate::space::{Configuration, ConfigurationSpace, KnobKind, KnobValue};
use crate::synthesis::{synthesize, MixtureWeights, Synthesis, DEFAULT_BUDGET};
use crate::tuner::{
    run_eesmac, run_random, run_smac, IterationRecord, Objective, ObjectiveError, TuneOutcome, TunerConfig,
};
use crate::FileError;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "knobforge", version, about = "Micro-invasive knob tuning on a simulated DBMS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark suite (knob space, basic workloads, surfaces).
    GenSuite(GenSuiteArgs),
    /// Build an experience repository by tuning random historical tasks.
    GenRepo(GenRepoArgs),
    /// Synthesize a mixture of basic workloads matching a target workload.
    Synth(SynthArgs),
    /// Run an optimizer on a simulated task, one CSV per seed.
    Tune(TuneArgs),
    /// Roll tuned candidates onto production with recursive selection.
    Select(SelectArgs),
    /// Full pipeline: metrics, synthesis, clone tuning, selection.
    E2e(E2eArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenSuiteArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub basics: usize,
    #[arg(long, default_value_t = 10)]
    pub knobs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GenRepoArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub tasks: usize,
    /// Observations per historical task.
    #[arg(long, default_value_t = 60)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long, default_value_t = 0.03)]
    pub noise_cv: f64,
    #[arg(long, default_value_t = 0.01)]
    pub metric_noise: f64,
}

/// Which workload runs on production.
#[derive(Debug, Args, Serialize)]
pub struct WorkloadArgs {
    /// Task index; the mixture is drawn from the suite seed.
    #[arg(long, default_value_t = 0)]
    pub task: u64,
    /// Explicit mixture, comma-separated, one weight per basic.
    #[arg(long)]
    pub mixture: Option<String>,
    #[arg(long, default_value_t = 0.03)]
    pub noise_cv: f64,
    /// Metric noise in units of the per-coordinate signature spread.
    #[arg(long, default_value_t = 0.01)]
    pub metric_noise: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Repository whose metric statistics define similarity.
    #[arg(long)]
    pub repo: Option<PathBuf>,
    /// Target metrics file (JSON `{"internal": [...], "external": [...]}`);
    /// emitted from the task workload when absent.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub mix_size: usize,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TunerArgs {
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10)]
    pub init_random: usize,
    #[arg(long, default_value_t = 0.1)]
    pub kappa: f64,
    /// Decay rate; `inf` is accepted.
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 5)]
    pub transfer_n: usize,
    #[arg(long, default_value_t = 90.0)]
    pub eta: f64,
    /// Candidate configurations sampled per proposal.
    #[arg(long, default_value_t = 500)]
    pub candidates: usize,
}

impl TunerArgs {
    fn config(&self) -> TunerConfig {
        TunerConfig {
            max_iterations: self.iterations,
            init_random_count: self.init_random,
            candidate_samples: self.candidates,
            init_ratio: self.kappa,
            decay: self.gamma,
            random_ratio: self.epsilon,
            transfer_quantity: self.transfer_n,
            percentile: self.eta,
            ..TunerConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Smac,
    Eesmac,
    Random,
}

/// `N`, an inclusive range `A..B`, or a comma list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct SeedList(pub Vec<u64>);

pub fn parse_seeds(text: &str) -> Result<SeedList, String> {
    let bad = |_| format!("invalid seed list '{text}'");
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a > b {
            return Err(format!("empty seed range '{text}'"));
        }
        return Ok(SeedList((a..=b).collect()));
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(bad))
        .collect::<Result<Vec<_>, _>>()
        .map(SeedList)
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub repo: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Optimizer::Eesmac)]
    pub optimizer: Optimizer,
    #[arg(long, default_value = "0", value_parser = parse_seeds)]
    pub seed: SeedList,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Output directory; one `<optimizer>-seed<N>.csv` per seed.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub tuner: TunerArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectionArgs {
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.0)]
    pub select_epsilon: f64,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    /// Number of best distinct tuned configurations used as candidates.
    #[arg(long, default_value_t = 27)]
    pub top: usize,
}

impl SelectionArgs {
    fn params(&self) -> SelectionParams {
        SelectionParams {
            threshold: self.select_epsilon,
            clusters: self.clusters,
            max_depth: self.max_depth,
            ..SelectionParams::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// A tuning CSV written by `tune`.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct E2eArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Without a repository the clone is tuned with vanilla SMAC.
    #[arg(long)]
    pub repo: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub mix_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub tuner: TunerArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::GenSuite(a) => cmd_gen_suite(a),
        Command::GenRepo(a) => cmd_gen_repo(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Select(a) => cmd_select(a),
        Command::E2e(a) => cmd_e2e(a),
    }
}

fn manifest(subcommand: &str, args: &impl Serialize) -> Value {
    json!({
        "subcommand": subcommand,
        "engine_version": ENGINE_VERSION,
        "args": args,
    })
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(runtime)
}

fn load_suite(path: &Path) -> Result<BenchmarkSuite, CliError> {
    Ok(BenchmarkSuite::load(path)?)
}

fn load_repo(path: &Path, space: &ConfigurationSpace) -> Result<ExperienceRepository, CliError> {
    let file = File::open(path).map_err(FileError::from)?;
    Ok(ExperienceRepository::load(space, BufReader::new(file))?)
}

fn production_mixture(suite: &BenchmarkSuite, w: &WorkloadArgs) -> Result<MixtureWeights, CliError> {
    match &w.mixture {
        Some(text) => {
            let weights = text
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Usage(format!("invalid --mixture '{text}'")))?;
            if weights.len() != suite.k() {
                return Err(CliError::Usage(format!(
                    "--mixture needs {} weights, got {}",
                    suite.k(),
                    weights.len()
                )));
            }
            MixtureWeights::new(weights).map_err(|e| CliError::Usage(e.to_string()))
        }
        None => Ok(task_mixture(suite, w.task)),
    }
}

/// Mixture of task `task`, drawn from the suite seed.
pub fn task_mixture(suite: &BenchmarkSuite, task: u64) -> MixtureWeights {
    random_mixture(suite.k(), derive_seed(suite.seed, (1 << 20) + task, Purpose::Structure))
}

fn production_db<'a>(suite: &'a BenchmarkSuite, w: &WorkloadArgs) -> Result<SimulatedDb<'a>, CliError> {
    let mixture = production_mixture(suite, w)?;
    SimulatedDb::new(suite, mixture, w.noise_cv, w.metric_noise).map_err(|e| CliError::Usage(e.to_string()))
}

fn similarity_stats(suite: &BenchmarkSuite, repo: Option<&ExperienceRepository>) -> Result<MetricStats, CliError> {
    match repo.and_then(|r| r.metric_stats()) {
        Some(stats) => Ok(stats.clone()),
        None => MetricStats::from_metrics(suite.basics.iter().map(|b| &b.signature)).map_err(runtime),
    }
}

fn synthesis_json(suite: &BenchmarkSuite, s: &Synthesis) -> Value {
    json!({
        "support": s.support.iter().map(|&i| suite.basics[i].id.clone()).collect::<Vec<_>>(),
        "weights": s.weights.weights(),
        "similarity": s.similarity,
    })
}

fn config_json(space: &ConfigurationSpace, c: &Configuration) -> Value {
    serde_json::to_value(space.to_map(c)).expect("knob values serialize")
}

pub fn cmd_gen_suite(a: &GenSuiteArgs) -> Result<(), CliError> {
    let suite = make_benchmark_suite(a.basics, a.knobs, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut doc = serde_json::Map::new();
    doc.insert("manifest".into(), manifest("gen-suite", a));
    if let Value::Object(fields) = serde_json::to_value(&suite).map_err(runtime)? {
        doc.extend(fields);
    }
    write_json(&a.out, &Value::Object(doc))
}

pub fn cmd_gen_repo(a: &GenRepoArgs) -> Result<(), CliError> {
    let suite = load_suite(&a.suite)?;
    let settings = RepoSettings {
        task_count: a.tasks,
        iterations_per_task: a.iterations,
        noise_cv: a.noise_cv,
        metric_noise_sd: a.metric_noise,
    };
    let repo = make_experience_repository(&suite, &settings, a.seed, a.noise_seed).map_err(runtime)?;
    let mut out = BufWriter::new(File::create(&a.out).map_err(runtime)?);
    serde_json::to_writer(&mut out, &json!({ "manifest": manifest("gen-repo", a) })).map_err(runtime)?;
    out.write_all(b"\n").map_err(runtime)?;
    repo.save(&suite.space, &mut out).map_err(runtime)?;
    out.flush().map_err(runtime)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let suite = load_suite(&a.suite)?;
    let repo = a.repo.as_deref().map(|p| load_repo(p, &suite.space)).transpose()?;
    let target = match &a.target {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(FileError::from)?;
            let m: WorkloadMetrics = serde_json::from_str(&text).map_err(FileError::from)?;
            WorkloadMetrics::new(m.internal, m.external).map_err(|e| CliError::Input(e.to_string()))?
        }
        None => production_db(&suite, &a.workload)?
            .emit_metrics(derive_seed(a.noise_seed, 0, Purpose::Metrics))
            .map_err(runtime)?,
    };
    let stats = similarity_stats(&suite, repo.as_ref())?;
    let s = synthesize(&suite.basics, &target, a.mix_size, &stats, DEFAULT_BUDGET).map_err(|e| match e {
        crate::synthesis::SynthesisError::Cardinality { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Input(e.to_string()),
    })?;
    let mut doc = serde_json::Map::new();
    doc.insert("manifest".into(), manifest("synth", a));
    if let Value::Object(fields) = synthesis_json(&suite, &s) {
        doc.extend(fields);
    }
    write_json(&a.out, &Value::Object(doc))
}

/// Per-iteration CSV: a `# manifest:` comment line, a header, then one
/// flushed row per observation, so a crashed run leaves a parseable prefix.
pub struct CsvReport {
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvReport {
    pub fn create(path: &Path, manifest: &Value, space: &ConfigurationSpace) -> std::io::Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "# manifest: {manifest}")?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header = vec!["iteration".to_string()];
        header.extend(space.knobs().iter().map(|k| k.name().to_string()));
        header.extend(["perf", "incumbent", "zeta", "phase"].map(String::from));
        writer.write_record(&header)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn record(&mut self, r: &IterationRecord<'_>) -> std::io::Result<()> {
        let o = r.observation;
        let mut row = vec![r.iteration.to_string()];
        row.extend(o.config.values().iter().map(KnobValue::to_string));
        row.push(o.perf.to_string());
        row.push(r.incumbent.to_string());
        row.push(o.zeta.map(|z| z.to_string()).unwrap_or_default());
        row.push(o.phase.as_str().to_string());
        self.writer.write_record(&row)?;
        self.writer.flush()
    }
}

/// Rows of a tuning CSV as `(configuration, perf)`.
pub fn read_tuning_csv(path: &Path, space: &ConfigurationSpace) -> Result<Vec<(Configuration, f64)>, FileError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| FileError::Format {
            line: 1,
            reason: format!("missing column '{name}'"),
        })
    };
    let perf_col = col("perf")?;
    let knob_cols = space
        .knobs()
        .iter()
        .map(|k| col(k.name()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let format = |reason: String| FileError::Format { line: i + 2, reason };
        let values: IndexMap<String, KnobValue> = space
            .knobs()
            .iter()
            .zip(&knob_cols)
            .map(|(k, &c)| {
                let text = &record[c];
                let value = match k.kind() {
                    KnobKind::Enumerated => KnobValue::Level(text.to_string()),
                    KnobKind::Integer => KnobValue::Int(text.parse().map_err(|_| format(format!("bad integer '{text}'")))?),
                    KnobKind::Continuous => {
                        KnobValue::Float(text.parse().map_err(|_| format(format!("bad number '{text}'")))?)
                    }
                };
                Ok((k.name().to_string(), value))
            })
            .collect::<Result<_, FileError>>()?;
        let config = space.from_map(&values).map_err(|e| format(e.to_string()))?;
        let perf: f64 = record[perf_col]
            .parse()
            .map_err(|_| format(format!("bad perf '{}'", &record[perf_col])))?;
        rows.push((config, perf));
    }
    Ok(rows)
}

fn run_optimizer(
    optimizer: Optimizer,
    space: &ConfigurationSpace,
    objective: &mut dyn Objective,
    repo: Option<&ExperienceRepository>,
    target: &WorkloadMetrics,
    cfg: &TunerConfig,
    seed: u64,
    report: &mut CsvReport,
) -> Result<TuneOutcome, CliError> {
    let mut observer = |r: &IterationRecord<'_>| report.record(r);
    let result = match optimizer {
        Optimizer::Smac => run_smac(space, objective, cfg, seed, Some(&mut observer)),
        Optimizer::Random => run_random(space, objective, cfg, seed, Some(&mut observer)),
        Optimizer::Eesmac => {
            let repo = repo.ok_or_else(|| CliError::Usage("--optimizer eesmac needs --repo".into()))?;
            run_eesmac(space, objective, repo, target, cfg, seed, Some(&mut observer))
        }
    };
    result.map_err(|e| match e {
        crate::tuner::TuneError::InvalidConfig(m) => CliError::Usage(m),
        other => runtime(other),
    })
}

pub fn cmd_tune(a: &TuneArgs) -> Result<(), CliError> {
    let suite = load_suite(&a.suite)?;
    let repo = a.repo.as_deref().map(|p| load_repo(p, &suite.space)).transpose()?;
    if a.optimizer == Optimizer::Eesmac && repo.is_none() {
        return Err(CliError::Usage("--optimizer eesmac needs --repo".into()));
    }
    let cfg = a.tuner.config();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let db = production_db(&suite, &a.workload)?;
    let target = db
        .emit_metrics(derive_seed(a.noise_seed, 0, Purpose::Metrics))
        .map_err(runtime)?;
    fs::create_dir_all(&a.out).map_err(runtime)?;
    let base = manifest("tune", a);
    let results: Vec<Result<(), CliError>> = a
        .seed
        .0
        .par_iter()
        .map(|&seed| {
            let optimizer = serde_json::to_value(a.optimizer).expect("enum serializes");
            let path = a.out.join(format!("{}-seed{seed}.csv", optimizer.as_str().unwrap_or("run")));
            let mut m = base.clone();
            m["run_seed"] = json!(seed);
            let mut report = CsvReport::create(&path, &m, &suite.space).map_err(runtime)?;
            let mut objective = db.objective(derive_seed(a.noise_seed, seed, Purpose::Noise));
            let outcome = run_optimizer(
                a.optimizer,
                &suite.space,
                &mut objective,
                repo.as_ref(),
                &target,
                &cfg,
                seed,
                &mut report,
            )?;
            log::info!(
                "seed {seed}: best {:.3} after {} observations",
                outcome.observations.incumbent().map_or(f64::NAN, |o| o.perf),
                outcome.observations.len()
            );
            Ok(())
        })
        .collect();
    results.into_iter().collect()
}

/// Best `top` distinct configurations, best first.
fn top_distinct(rows: &[(Configuration, f64)], top: usize) -> Vec<(Configuration, f64)> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].1.total_cmp(&rows[a].1));
    let mut out: Vec<(Configuration, f64)> = Vec::new();
    for i in order {
        if out.len() == top {
            break;
        }
        if !out.iter().any(|(c, _)| *c == rows[i].0) {
            out.push(rows[i].clone());
        }
    }
    out
}

fn selection_json(space: &ConfigurationSpace, r: &SelectionReport) -> Value {
    json!({
        "chosen": r.chosen.as_ref().map(|(i, c, p)| json!({
            "candidate": i,
            "config": config_json(space, c),
            "perf": p,
        })),
        "observations_used": r.observations_used(),
        "trace": r.trace.iter().map(|t| json!({
            "candidate": t.candidate,
            "config": config_json(space, &t.config),
            "perf": t.perf,
            "decision": t.decision.as_str(),
            "depth": t.depth,
        })).collect::<Vec<_>>(),
    })
}

/// Baseline from the default configuration, then recursive selection; each
/// production deployment draws its own noise stream.
fn select_on_production(
    db: &SimulatedDb<'_>,
    candidates: Vec<(Configuration, f64)>,
    params: &SelectionParams,
    seed: u64,
    noise_seed: u64,
) -> Result<(f64, SelectionReport), CliError> {
    let space = &db.suite.space;
    let baseline = db
        .observe(&space.default_configuration(), derive_seed(noise_seed, 0, Purpose::Noise))
        .map_err(runtime)?;
    let set = CandidateSet::new(candidates).map_err(|e| CliError::Input(e.to_string()))?;
    let mut production = db.objective(derive_seed(noise_seed, 1, Purpose::Noise));
    let mut observe = |c: &Configuration| -> Result<f64, ObjectiveError> { production.evaluate(c) };
    let report = recursive_select(space, &set, &mut observe, baseline, params, seed).map_err(|e| match e {
        crate::selection::SelectionError::InvalidParams => CliError::Usage(e.to_string()),
        other => runtime(other),
    })?;
    for (n, t) in report.trace.iter().enumerate() {
        println!(
            "observation {}: candidate {} depth {} perf {} {}",
            n + 1,
            t.candidate,
            t.depth,
            t.perf,
            t.decision.as_str()
        );
    }
    Ok((baseline, report))
}

pub fn cmd_select(a: &SelectArgs) -> Result<(), CliError> {
    let suite = load_suite(&a.suite)?;
    let rows = read_tuning_csv(&a.candidates, &suite.space)?;
    let candidates = top_distinct(&rows, a.selection.top);
    let db = production_db(&suite, &a.workload)?;
    let (baseline, report) = select_on_production(&db, candidates, &a.selection.params(), a.seed, a.noise_seed)?;
    let mut doc = serde_json::Map::new();
    doc.insert("manifest".into(), manifest("select", a));
    doc.insert("baseline".into(), json!(baseline));
    if let Value::Object(fields) = selection_json(&suite.space, &report) {
        doc.extend(fields);
    }
    write_json(&a.out, &Value::Object(doc))
}

pub fn cmd_e2e(a: &E2eArgs) -> Result<(), CliError> {
    let suite = load_suite(&a.suite)?;
    let repo = a.repo.as_deref().map(|p| load_repo(p, &suite.space)).transpose()?;
    let production = production_db(&suite, &a.workload)?;
    let cfg = a.tuner.config();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let metrics = production
        .emit_metrics(derive_seed(a.noise_seed, 0, Purpose::Metrics))
        .map_err(runtime)?;
    let stats = similarity_stats(&suite, repo.as_ref())?;
    let synthesis = synthesize(&suite.basics, &metrics, a.mix_size, &stats, DEFAULT_BUDGET)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let clone = SimulatedDb::new(&suite, synthesis.weights.clone(), a.workload.noise_cv, 0.0).map_err(runtime)?;

    let mut objective = clone.objective(derive_seed(a.noise_seed, 1, Purpose::Noise));
    let outcome = match &repo {
        Some(repo) => run_eesmac(&suite.space, &mut objective, repo, &metrics, &cfg, a.seed, None),
        None => run_smac(&suite.space, &mut objective, &cfg, a.seed, None),
    }
    .map_err(runtime)?;
    let incumbent = outcome.observations.incumbent().expect("budget >= 1").clone();

    let rows: Vec<(Configuration, f64)> = outcome
        .observations
        .entries()
        .iter()
        .map(|o| (o.config.clone(), o.perf))
        .collect();
    let candidates = top_distinct(&rows, a.selection.top);
    let updates = candidates.len();
    let (baseline, report) = select_on_production(
        &production,
        candidates,
        &a.selection.params(),
        a.seed,
        derive_seed(a.noise_seed, 2, Purpose::Noise),
    )?;
    let improvement = report.chosen.as_ref().map_or(1.0, |(_, _, p)| p / baseline);

    let doc = json!({
        "manifest": manifest("e2e", a),
        "production_mixture": production.mixture.weights(),
        "synthesis": synthesis_json(&suite, &synthesis),
        "clone_optimizer": if repo.is_some() { "eesmac" } else { "smac" },
        "clone_incumbent": {
            "config": config_json(&suite.space, &incumbent.config),
            "perf": incumbent.perf,
        },
        "candidate_count": updates,
        "baseline": baseline,
        "selection": selection_json(&suite.space, &report),
        "production_improvement": improvement,
        "configuration_updates": report.observations_used(),
    });
    write_json(&a.out, &doc)
}
