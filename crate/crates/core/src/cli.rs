//! The `metaloc` command line: `gen`, `importance`, `train`, `eval` and
//! `bench`.
//!
//! Every command writes a `run.json` manifest holding the fully resolved
//! configuration. Passing that manifest back through `--config` (and, for
//! `gen`, `--channel`) reproduces the run. Exit codes: 0 success, 2 usage or
//! configuration error, 3 data error, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    self, benchmark, cross_scenario_matrix, prepare_tasks, summarize, task_count_sweep,
    write_matrix, write_report, write_sweep, BenchmarkConfig, Summary,
};
use crate::meta::{
    adapt_and_eval, compute_importance, meta_train, train_conventional, train_transfer,
    Algorithm, ImportanceVector, MetaConfig, OuterOptimizer, PreparedTask,
};
use crate::model::ParamSet;
use crate::tasks::{generate_suite, load_dir, save_scenario, ChannelConfig, Scenario};

#[derive(Debug, Parser)]
#[command(name = "metaloc", version, about = "Few-shot CSI localization with meta-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenario files.
    Gen(GenArgs),
    /// Compute the TB-MAML task-importance vector of a scenario directory.
    Importance(ImportanceArgs),
    /// Train one algorithm and save its parameters.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every scenario of a directory.
    Eval(EvalArgs),
    /// Run the benchmark, the task-count sweep and the cross-scenario matrix.
    Bench(BenchArgs),
}

/// Settings shared by every training command. Flags override `--config`.
#[derive(Debug, Args)]
struct Tuning {
    /// A `MetaConfig` JSON file or a previous `run.json`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    meta_batch: Option<usize>,
    #[arg(long, value_parser = ["adam", "sgd"])]
    outer_optimizer: Option<String>,
    /// Iterations per convergence window (0 runs the full budget).
    #[arg(long)]
    convergence_window: Option<usize>,
    /// Cap on the meta-gradient norm per outer update (0 disables).
    #[arg(long)]
    max_grad_norm: Option<f64>,
    /// Epochs of the per-task base fits (importance, transfer source, matrix).
    #[arg(long)]
    base_epochs: Option<usize>,
    /// Epochs of the k-shot fits of the conventional and transfer baselines.
    #[arg(long)]
    finetune_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_count)]
    scenarios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    spacing_cm: Option<f64>,
    #[arg(long)]
    samples_per_rp: Option<usize>,
    /// A `ChannelConfig` JSON file or a previous `gen` run.json.
    #[arg(long)]
    channel: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImportanceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_algorithm)]
    algo: Algorithm,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Importance JSON for tb-maml; computed and saved when absent.
    #[arg(long)]
    importance: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Scenario index the conventional and transfer baselines fit.
    #[arg(long, default_value_t = 0)]
    target: usize,
    /// Scenario index the transfer baseline pre-trains on.
    #[arg(long, default_value_t = 1)]
    source: usize,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Shots per point for inner-loop adaptation; 0 evaluates zero-shot.
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
    algos: Option<Vec<Algorithm>>,
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 5)]
    test_scenarios: usize,
    #[arg(long)]
    out: PathBuf,
    /// Training-task counts of the sweep; defaults to quarters of the
    /// training set.
    #[arg(long, value_delimiter = ',')]
    sweep_counts: Option<Vec<usize>>,
    #[arg(long)]
    no_sweep: bool,
    /// Leading scenarios used for the cross-scenario matrix.
    #[arg(long, default_value_t = 10)]
    matrix_scenarios: usize,
    #[arg(long)]
    no_matrix: bool,
    #[command(flatten)]
    tuning: Tuning,
}

fn parse_count(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Written as `run.json` next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub config: MetaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchmarkConfig>,
    pub outputs: Vec<String>,
    pub started_unix_s: u64,
    pub elapsed_s: f64,
}

/// Exit code for an error: 2 configuration, 4 numeric, 3 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite { .. } | Error::NonScalarOutput { .. } => 4,
        _ => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    let ctx = Context {
        args: args
            .iter()
            .skip(1)
            .map(|a| a.to_string_lossy().into_owned())
            .collect(),
        started: Instant::now(),
        started_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a, &ctx),
        Command::Importance(a) => cmd_importance(a, &ctx),
        Command::Train(a) => cmd_train(a, &ctx),
        Command::Eval(a) => cmd_eval(a, &ctx),
        Command::Bench(a) => cmd_bench(a, &ctx),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("METALOC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("METALOC_THREADS must be a positive integer, got {v:?}")))?;
    // A second call in the same process (tests) finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

struct Context {
    args: Vec<String>,
    started: Instant,
    started_unix_s: u64,
}

impl Context {
    fn manifest(&self, command: &str, config: MetaConfig, outputs: &[&Path]) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            args: self.args.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config,
            channel: None,
            bench: None,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix_s: self.started_unix_s,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        }
    }
}

/// Reads `T` from a file that holds either `T` itself or a manifest whose
/// `key` field holds it.
fn read_section<T: DeserializeOwned>(path: &Path, key: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |e: serde_json::Error| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    if value.get("command").is_some() {
        value = value
            .get_mut(key)
            .map(serde_json::Value::take)
            .ok_or_else(|| Error::Data(format!("{} has no {key:?} section", path.display())))?;
    }
    serde_json::from_value(value).map_err(parse_err)
}

fn resolve(tuning: &Tuning, shots: Option<usize>) -> Result<MetaConfig> {
    let mut cfg = match &tuning.config {
        Some(p) => read_section(p, "config")?,
        None => MetaConfig::default(),
    };
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut cfg.alpha, tuning.alpha);
    set(&mut cfg.beta, tuning.beta);
    set(&mut cfg.gamma, tuning.gamma);
    if let Some(v) = tuning.seed {
        cfg.seed = v;
    }
    if let Some(v) = tuning.inner_steps {
        cfg.inner_steps = v;
    }
    if let Some(v) = tuning.iterations {
        cfg.meta_iterations = v;
    }
    if let Some(v) = tuning.meta_batch {
        cfg.meta_batch = v;
    }
    if let Some(v) = tuning.convergence_window {
        cfg.convergence_window = v;
    }
    if let Some(v) = tuning.max_grad_norm {
        cfg.max_grad_norm = v;
    }
    if let Some(v) = &tuning.outer_optimizer {
        cfg.outer_optimizer = if v == "sgd" {
            OuterOptimizer::Sgd
        } else {
            OuterOptimizer::Adam
        };
    }
    if let Some(v) = tuning.base_epochs {
        cfg.base.epochs = v;
    }
    if let Some(v) = tuning.finetune_epochs {
        cfg.finetune.epochs = v;
    }
    if let Some(k) = shots {
        cfg.shots = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_tasks(data: &Path, cfg: &MetaConfig) -> Result<(Vec<Scenario>, Vec<PreparedTask>)> {
    let scenarios = load_dir(data)?;
    let tasks = prepare_tasks(&scenarios, cfg.holdout_per_rp, cfg.seed)?;
    Ok((scenarios, tasks))
}

fn cmd_gen(a: GenArgs, ctx: &Context) -> Result<()> {
    let mut ch: ChannelConfig = match &a.channel {
        Some(p) => read_section(p, "channel")?,
        None => ChannelConfig::default(),
    };
    if let Some(v) = a.rows {
        ch.grid.rows = v;
    }
    if let Some(v) = a.cols {
        ch.grid.cols = v;
    }
    if let Some(v) = a.spacing_cm {
        ch.grid.spacing_cm = v;
    }
    if let Some(v) = a.samples_per_rp {
        ch.samples_per_rp = v;
    }
    let suite = generate_suite(a.scenarios, a.seed, &ch)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    for s in &suite {
        let path = a.out.join(format!("{}.json", s.id));
        save_scenario(s, &path)?;
        outputs.push(path);
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let cfg = MetaConfig {
        seed: a.seed,
        ..MetaConfig::default()
    };
    let mut manifest = ctx.manifest("gen", cfg, &refs);
    manifest.channel = Some(ch);
    eval::write_json(&a.out.join("run.json"), &manifest)?;
    eprintln!("wrote {} scenarios to {}", a.scenarios, a.out.display());
    Ok(())
}

fn cmd_importance(a: ImportanceArgs, ctx: &Context) -> Result<()> {
    let cfg = resolve(&a.tuning, a.k)?;
    let (_, tasks) = load_tasks(&a.data, &cfg)?;
    let iv = compute_importance(&tasks, &cfg)?;
    let dir = a.out.parent().unwrap_or(Path::new("."));
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    create_dir(dir)?;
    eval::write_json(&a.out, &iv)?;
    eval::write_json(&dir.join("run.json"), &ctx.manifest("importance", cfg, &[&a.out]))?;
    for (id, u) in iv.task_ids.iter().zip(&iv.u) {
        println!("{id}\t{u:+.4}");
    }
    Ok(())
}

fn load_importance(path: &Path, tasks: &[PreparedTask]) -> Result<ImportanceVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let iv: ImportanceVector = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let ids: Vec<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
    if iv.task_ids.iter().map(String::as_str).ne(ids.iter().copied()) {
        return Err(Error::Data(format!(
            "{} covers tasks {:?}, the data directory holds {:?}",
            path.display(),
            iv.task_ids,
            ids
        )));
    }
    Ok(iv)
}

fn pick<'a>(tasks: &'a [PreparedTask], i: usize, what: &str) -> Result<&'a PreparedTask> {
    tasks.get(i).ok_or_else(|| {
        Error::Config(format!(
            "--{what} {i} out of range for {} scenarios",
            tasks.len()
        ))
    })
}

#[derive(Serialize)]
struct TraceCsvRow<'a> {
    iteration: usize,
    task: &'a str,
    query_loss: f64,
}

fn cmd_train(a: TrainArgs, ctx: &Context) -> Result<()> {
    let cfg = resolve(&a.tuning, a.k)?;
    let (_, tasks) = load_tasks(&a.data, &cfg)?;
    create_dir(&a.out)?;
    let checkpoint = a.out.join("checkpoint.json");
    let mut outputs = vec![checkpoint.clone()];
    let params = match a.algo {
        Algorithm::Conventional => train_conventional(pick(&tasks, a.target, "target")?, &cfg)?,
        Algorithm::Transfer => {
            if a.source == a.target {
                return Err(Error::Config("--source and --target must differ".into()));
            }
            train_transfer(
                pick(&tasks, a.source, "source")?,
                pick(&tasks, a.target, "target")?,
                &cfg,
            )?
        }
        algo => {
            let importance = match (algo, &a.importance) {
                (Algorithm::TbMaml, Some(p)) => Some(load_importance(p, &tasks)?),
                (Algorithm::TbMaml, None) => {
                    let iv = compute_importance(&tasks, &cfg)?;
                    let path = a.out.join("importance.json");
                    eval::write_json(&path, &iv)?;
                    outputs.push(path);
                    Some(iv)
                }
                _ => None,
            };
            let run = meta_train(algo, &tasks, importance.as_ref().map(|iv| iv.u.as_slice()), &cfg)?;
            let trace = a.out.join("trace.csv");
            eval::write_csv(
                &trace,
                run.trace.iter().map(|r| TraceCsvRow {
                    iteration: r.iteration,
                    task: &r.task,
                    query_loss: r.query_loss,
                }),
            )?;
            outputs.push(trace);
            eprintln!(
                "{algo}: {} iterations, converged {}, clamped steps {}",
                run.iterations, run.converged, run.clamped_steps
            );
            run.params
        }
    };
    params.save(&checkpoint)?;
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    eval::write_json(&a.out.join("run.json"), &ctx.manifest(&format!("train {}", a.algo), cfg, &refs))?;
    Ok(())
}

#[derive(Serialize)]
struct EvalErrorRow<'a> {
    scenario: &'a str,
    error_cm: f64,
}

#[derive(Serialize)]
struct ScenarioSummary {
    scenario: String,
    summary: Summary,
}

#[derive(Serialize)]
struct EvalSummary {
    shots: usize,
    overall: Summary,
    per_scenario: Vec<ScenarioSummary>,
}

fn cmd_eval(a: EvalArgs, ctx: &Context) -> Result<()> {
    let cfg = resolve(&a.tuning, None)?;
    let params = ParamSet::load(&a.checkpoint)?;
    let (_, tasks) = load_tasks(&a.data, &cfg)?;
    let mut per_scenario = Vec::new();
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for t in &tasks {
        let errs = adapt_and_eval(&params, t, a.k, &cfg)?;
        per_scenario.push(ScenarioSummary {
            scenario: t.id.clone(),
            summary: summarize(&errs)?,
        });
        rows.extend(errs.iter().map(|&e| (t.id.as_str(), e)));
        all.extend(errs);
    }
    let overall = summarize(&all)?;
    create_dir(&a.out)?;
    let errors = a.out.join("errors.csv");
    eval::write_csv(
        &errors,
        rows.iter().map(|&(scenario, error_cm)| EvalErrorRow { scenario, error_cm }),
    )?;
    let summary = a.out.join("summary.json");
    eval::write_json(
        &summary,
        &EvalSummary {
            shots: a.k,
            overall,
            per_scenario,
        },
    )?;
    eval::write_json(&a.out.join("run.json"), &ctx.manifest("eval", cfg, &[&errors, &summary]))?;
    println!(
        "k={} mean {:.2} cm, median {:.2} cm over {} samples",
        a.k, overall.mean, overall.median, overall.count
    );
    Ok(())
}

/// Quarters of `n`, deduplicated, always ending at `n`.
fn default_sweep_counts(n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = (1..=4).map(|q| (n * q / 4).max(1)).collect();
    counts.dedup();
    counts
}

fn cmd_bench(a: BenchArgs, ctx: &Context) -> Result<()> {
    let cfg = resolve(&a.tuning, None)?;
    let bench = BenchmarkConfig {
        algorithms: a.algos.unwrap_or_else(|| Algorithm::ALL.to_vec()),
        shots: a.shots.unwrap_or_else(|| vec![cfg.shots]),
        repeats: a.repeats,
        test_scenarios: a.test_scenarios,
    };
    let scenarios = load_dir(&a.data)?;
    create_dir(&a.out)?;
    eprintln!(
        "benchmark: {} scenarios, {} repeats, algorithms {:?}, shots {:?}",
        scenarios.len(),
        bench.repeats,
        bench.algorithms.iter().map(|a| a.name()).collect::<Vec<_>>(),
        bench.shots
    );
    let report = benchmark(&scenarios, &bench, &cfg)?;
    write_report(&report, &a.out)?;
    let mut outputs: Vec<PathBuf> = ["report.json", "cdf.csv", "errors.csv"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    for p in &report.populations {
        println!(
            "{:<12} k={:<2} mean {:7.2} cm  median {:7.2} cm",
            p.algorithm.name(),
            p.shots,
            p.summary.mean,
            p.summary.median
        );
    }

    let meta: Vec<Algorithm> = bench.algorithms.iter().copied().filter(|a| a.is_meta()).collect();
    if !a.no_sweep && !meta.is_empty() {
        let n_train = scenarios.len().saturating_sub(bench.test_scenarios);
        let counts = a.sweep_counts.clone().unwrap_or_else(|| default_sweep_counts(n_train));
        let sweep_cfg = MetaConfig {
            shots: bench.shots[0],
            ..cfg.clone()
        };
        eprintln!("task-count sweep over {counts:?}");
        let points = task_count_sweep(&scenarios, &meta, &counts, &bench, &sweep_cfg)?;
        let path = a.out.join("sweep.csv");
        write_sweep(&points, &path)?;
        outputs.push(path);
    }
    if !a.no_matrix {
        let n = a.matrix_scenarios.min(scenarios.len());
        eprintln!("cross-scenario matrix over {n} scenarios");
        for (k, name) in [(0, "matrix.csv"), (bench.shots[0], "matrix_finetuned.csv")] {
            let m = cross_scenario_matrix(&scenarios[..n], k, &cfg)?;
            println!(
                "matrix k={k}: diagonal {:.2} cm, off-diagonal {:.2} cm",
                m.diagonal_mean(),
                m.off_diagonal_mean()
            );
            let path = a.out.join(name);
            write_matrix(&m, &path)?;
            outputs.push(path);
        }
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let mut manifest = ctx.manifest("bench", cfg, &refs);
    manifest.bench = Some(bench);
    eval::write_json(&a.out.join("run.json"), &manifest)
}
