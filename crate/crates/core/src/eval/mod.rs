//! Distance metrics and the three experiments: the cross-scenario error
//! matrix, the few-shot benchmark and the task-count sweep.
//!
//! Every experiment derives its randomness from `MetaConfig::seed`. Repeat
//! `r` re-partitions the scenarios with its own seed, and every algorithm in
//! that repeat sees the same partition, test splits and k-shot support sets.

mod metrics;
mod output;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{cdf, default_thresholds, distance_error, summarize, Summary};
pub(crate) use output::{write_csv, write_json};
pub use output::{config_hash, write_matrix, write_report, write_sweep};

use crate::error::{Error, Result};
use crate::meta::{
    adapt_and_eval, compute_importance, evaluate, finetune, fit, meta_train, pretrain_source,
    train_conventional, Algorithm, ImportanceVector, MetaConfig, PreparedTask,
};
use crate::model::ParamSet;
use crate::rng::{self, Stream};
use crate::tasks::{Scenario, TaskSet};

/// `n × n` mean distance errors: row = training scenario, column = tested one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    pub ids: Vec<String>,
    pub finetune_shots: usize,
    pub mean_error_cm: Vec<Vec<f64>>,
}

impl ScenarioMatrix {
    pub fn diagonal_mean(&self) -> f64 {
        let n = self.ids.len();
        (0..n).map(|i| self.mean_error_cm[i][i]).sum::<f64>() / n as f64
    }

    pub fn off_diagonal_mean(&self) -> f64 {
        let n = self.ids.len();
        let total: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.mean_error_cm[i][j])
            .sum();
        total / (n * (n - 1)) as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

const MATRIX_SEED: u64 = 0x6F;

/// Trains one model per scenario on its training portion and tests it on
/// every scenario's held-out samples, optionally after fitting the first
/// `finetune_shots` training samples per point of the tested scenario.
pub fn cross_scenario_matrix(
    scenarios: &[Scenario],
    finetune_shots: usize,
    cfg: &MetaConfig,
) -> Result<ScenarioMatrix> {
    cfg.validate()?;
    let n = scenarios.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "the cross-scenario matrix needs at least 2 scenarios, got {n}"
        )));
    }
    let root = rng::derive(cfg.seed, MATRIX_SEED);
    let tasks = prepare_tasks(scenarios, cfg.holdout_per_rp, root)?;
    let bases = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = rng::derive(root, i as u64);
            let mut p = ParamSet::init(seed);
            fit(&mut p, &tasks[i].train_batch()?, &cfg.base, seed)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let tuned = MetaConfig {
        shots: finetune_shots.max(1),
        ..cfg.clone()
    };
    let cells = (0..n * n)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / n, c % n);
            let p = if finetune_shots == 0 {
                bases[i].clone()
            } else {
                finetune(bases[i].clone(), &tasks[j], &tuned)?
            };
            Ok(mean(&evaluate(&p, &tasks[j])?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioMatrix {
        ids: tasks.iter().map(|t| t.id.clone()).collect(),
        finetune_shots,
        mean_error_cm: cells.chunks(n).map(<[f64]>::to_vec).collect(),
    })
}

/// Splits every scenario, scenario `i` with split seed `derive(seed, i)`.
pub fn prepare_tasks(
    scenarios: &[Scenario],
    holdout: usize,
    seed: u64,
) -> Result<Vec<PreparedTask>> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| PreparedTask::new(s, holdout, rng::derive(seed, i as u64)))
        .collect()
}

/// What the benchmark and the sweep run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub algorithms: Vec<Algorithm>,
    pub shots: Vec<usize>,
    pub repeats: usize,
    /// Scenarios held out for meta-testing in each repeat.
    pub test_scenarios: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.to_vec(),
            shots: vec![5],
            repeats: 5,
            test_scenarios: 5,
        }
    }
}

/// One repeat's partition with every scenario already split.
#[derive(Debug, Clone)]
pub struct Repeat {
    pub index: usize,
    pub seed: u64,
    pub train: Vec<PreparedTask>,
    pub test: Vec<PreparedTask>,
}

const REPEAT_SEED: u64 = 0x7A;

/// The partition and splits of repeat `r`.
pub fn prepare_repeat(
    scenarios: &[Scenario],
    test_scenarios: usize,
    cfg: &MetaConfig,
    r: usize,
) -> Result<Repeat> {
    let seed = rng::derive(rng::derive(cfg.seed, REPEAT_SEED), r as u64);
    let set = TaskSet::partition(scenarios.to_vec(), test_scenarios, seed)?;
    let tasks = prepare_tasks(&set.scenarios, cfg.holdout_per_rp, seed)?;
    Ok(Repeat {
        index: r,
        seed,
        train: set.train.iter().map(|&i| tasks[i].clone()).collect(),
        test: set.test.iter().map(|&i| tasks[i].clone()).collect(),
    })
}

const TRANSFER_SEED: u64 = 0x8B;

/// Per-scenario errors of one algorithm trained on `train` and tested on
/// `test`. `cfg.seed` and `cfg.shots` select the run.
pub fn run_algorithm(
    algo: Algorithm,
    train: &[PreparedTask],
    test: &[PreparedTask],
    importance: Option<&ImportanceVector>,
    cfg: &MetaConfig,
) -> Result<Vec<(String, Vec<f64>)>> {
    let per_test = |f: &(dyn Fn(&PreparedTask) -> Result<Vec<f64>> + Sync)| {
        test.iter()
            .map(|t| Ok((t.id.clone(), f(t)?)))
            .collect::<Result<Vec<_>>>()
    };
    match algo {
        Algorithm::Conventional => per_test(&|t| evaluate(&train_conventional(t, cfg)?, t)),
        Algorithm::Transfer => {
            if train.is_empty() {
                return Err(Error::Config("transfer needs a training scenario".into()));
            }
            let mut rng = rng::stream(rng::derive(cfg.seed, TRANSFER_SEED), Stream::Sampling, 0);
            let source = index::sample(&mut rng, train.len(), 1).index(0);
            let base = pretrain_source(&train[source], cfg)?;
            per_test(&|t| evaluate(&finetune(base.clone(), t, cfg)?, t))
        }
        _ => {
            let u = importance.map(|iv| iv.u.as_slice());
            let run = meta_train(algo, train, u, cfg)?;
            per_test(&|t| adapt_and_eval(&run.params, t, cfg.shots, cfg))
        }
    }
}

/// One algorithm × shot-count population of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub algorithm: Algorithm,
    pub shots: usize,
    pub summary: Summary,
    /// Fraction below each of the report's thresholds.
    pub cdf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub algorithm: Algorithm,
    pub shots: usize,
    pub repeat: usize,
    pub scenario: String,
    pub error_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRecord {
    pub repeat: usize,
    pub shots: usize,
    pub importance: ImportanceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub repeat_seeds: Vec<u64>,
    pub bench: BenchmarkConfig,
    pub config: MetaConfig,
    pub config_hash: String,
    pub importance: Vec<ImportanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub populations: Vec<Population>,
    pub errors: Vec<ErrorRecord>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    /// Pooled errors of one population, in repeat then scenario order.
    pub fn errors_of(&self, algorithm: Algorithm, shots: usize) -> Vec<f64> {
        self.errors
            .iter()
            .filter(|e| e.algorithm == algorithm && e.shots == shots)
            .map(|e| e.error_cm)
            .collect()
    }

    pub fn population(&self, algorithm: Algorithm, shots: usize) -> Option<&Population> {
        self.populations
            .iter()
            .find(|p| p.algorithm == algorithm && p.shots == shots)
    }
}

fn validate_bench(bench: &BenchmarkConfig) -> Result<()> {
    if bench.algorithms.is_empty() || bench.shots.is_empty() || bench.repeats == 0 {
        return Err(Error::Config(
            "benchmark needs at least one algorithm, shot count and repeat".into(),
        ));
    }
    if bench.shots.contains(&0) {
        return Err(Error::Config("shot counts must be at least 1".into()));
    }
    Ok(())
}

/// Per test scenario: its id and the distance errors, cm.
type CellErrors = Vec<(String, Vec<f64>)>;

/// Errors of every algorithm in one repeat at one shot count, in
/// `algorithms` order, plus the importance vector when TB-MAML ran.
fn run_cell(
    algorithms: &[Algorithm],
    train: &[PreparedTask],
    test: &[PreparedTask],
    cfg: &MetaConfig,
) -> Result<(Vec<CellErrors>, Option<ImportanceVector>)> {
    let importance = if algorithms.contains(&Algorithm::TbMaml) {
        Some(compute_importance(train, cfg)?)
    } else {
        None
    };
    let results = algorithms
        .par_iter()
        .map(|&a| run_algorithm(a, train, test, importance.as_ref(), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((results, importance))
}

/// Trains every algorithm at every shot count in each repeat and pools the
/// held-out errors across repeats.
pub fn benchmark(
    scenarios: &[Scenario],
    bench: &BenchmarkConfig,
    cfg: &MetaConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    validate_bench(bench)?;
    let mut errors = Vec::new();
    let mut importance = Vec::new();
    let mut repeat_seeds = Vec::new();
    for r in 0..bench.repeats {
        let rep = prepare_repeat(scenarios, bench.test_scenarios, cfg, r)?;
        repeat_seeds.push(rep.seed);
        for &k in &bench.shots {
            let run_cfg = MetaConfig {
                seed: rep.seed,
                shots: k,
                ..cfg.clone()
            };
            let (results, iv) = run_cell(&bench.algorithms, &rep.train, &rep.test, &run_cfg)?;
            for (&algorithm, per_scenario) in bench.algorithms.iter().zip(results) {
                for (scenario, errs) in per_scenario {
                    errors.extend(errs.into_iter().map(|error_cm| ErrorRecord {
                        algorithm,
                        shots: k,
                        repeat: r,
                        scenario: scenario.clone(),
                        error_cm,
                    }));
                }
            }
            if let Some(importance_vector) = iv {
                importance.push(ImportanceRecord {
                    repeat: r,
                    shots: k,
                    importance: importance_vector,
                });
            }
        }
    }
    let thresholds = default_thresholds();
    let mut report = EvalReport {
        thresholds,
        populations: Vec::new(),
        errors,
        metadata: ReportMetadata {
            repeat_seeds,
            bench: bench.clone(),
            config: cfg.clone(),
            config_hash: config_hash(cfg),
            importance,
        },
    };
    for &algorithm in &bench.algorithms {
        for &shots in &bench.shots {
            let e = report.errors_of(algorithm, shots);
            report.populations.push(Population {
                algorithm,
                shots,
                summary: summarize(&e)?,
                cdf: cdf(&e, &report.thresholds)?,
            });
        }
    }
    Ok(report)
}

/// Mean held-out error of one meta-learner trained on `task_count` tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub algorithm: Algorithm,
    pub task_count: usize,
    /// Pooled over every repeat and held-out sample.
    pub mean_error_cm: f64,
    pub per_repeat_mean_cm: Vec<f64>,
}

const SUBSET_SEED: u64 = 0x9C;

/// The training-task subset of size `count` used in `rep`, shared by every
/// algorithm. The full count keeps every task.
pub fn task_subset(rep: &Repeat, count: usize) -> Result<Vec<usize>> {
    let n = rep.train.len();
    if count == 0 || count > n {
        return Err(Error::Config(format!(
            "task count {count} outside 1..={n} training scenarios"
        )));
    }
    let mut rng = rng::stream(rng::derive(rep.seed, SUBSET_SEED), Stream::Sampling, count as u64);
    let mut idx = index::sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Meta-trains on seeded subsets of each repeat's training tasks and
/// evaluates on the repeat's full test set at `cfg.shots`.
pub fn task_count_sweep(
    scenarios: &[Scenario],
    algorithms: &[Algorithm],
    counts: &[usize],
    bench: &BenchmarkConfig,
    cfg: &MetaConfig,
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if let Some(a) = algorithms.iter().find(|a| !a.is_meta()) {
        return Err(Error::Config(format!("the sweep runs meta-learners only, got {a}")));
    }
    if algorithms.is_empty() || counts.is_empty() || bench.repeats == 0 {
        return Err(Error::Config(
            "sweep needs at least one algorithm, count and repeat".into(),
        ));
    }
    let mut pooled = vec![vec![Vec::new(); counts.len()]; algorithms.len()];
    let mut per_repeat = vec![vec![Vec::new(); counts.len()]; algorithms.len()];
    for r in 0..bench.repeats {
        let rep = prepare_repeat(scenarios, bench.test_scenarios, cfg, r)?;
        let run_cfg = MetaConfig {
            seed: rep.seed,
            ..cfg.clone()
        };
        for (ci, &count) in counts.iter().enumerate() {
            let subset: Vec<PreparedTask> = task_subset(&rep, count)?
                .into_iter()
                .map(|i| rep.train[i].clone())
                .collect();
            let (results, _) = run_cell(algorithms, &subset, &rep.test, &run_cfg)?;
            for (ai, per_scenario) in results.into_iter().enumerate() {
                let errs: Vec<f64> = per_scenario.into_iter().flat_map(|(_, e)| e).collect();
                per_repeat[ai][ci].push(mean(&errs));
                pooled[ai][ci].extend(errs);
            }
        }
    }
    let mut points = Vec::new();
    for (ai, &algorithm) in algorithms.iter().enumerate() {
        for (ci, &task_count) in counts.iter().enumerate() {
            points.push(SweepPoint {
                algorithm,
                task_count,
                mean_error_cm: mean(&pooled[ai][ci]),
                per_repeat_mean_cm: per_repeat[ai][ci].clone(),
            });
        }
    }
    Ok(points)
}
