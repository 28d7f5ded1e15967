use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::adapt::{
    descend, first_order_gradient, inner_adapt, second_order_gradient, Episode, LocalizationLoss,
    TaskGradient, TaskLoss,
};
use super::config::{Algorithm, MetaConfig, OuterOptimizer};
use super::data::PreparedTask;
use super::fit::{fit, Adam};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::distance_error;
use crate::model::{self, ParamSet};
use crate::rng::{self, Stream};

/// What one outer update applied.
#[derive(Debug, Clone)]
pub struct StepReport {
    /// Query loss of each task before the update.
    pub query_losses: Vec<f64>,
    /// Gradient that was scaled by the step size and subtracted.
    pub gradient: Vec<Tensor>,
    pub step: f64,
    /// Set when `β + γ·u` fell below the floor.
    pub clamped: bool,
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`
/// (no-op for `max_norm == 0`).
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
}

fn summed<L: TaskLoss>(
    params: &[Tensor],
    batch: &[Episode<L::Data>],
    mut per_task: impl FnMut(&Episode<L::Data>) -> Result<TaskGradient>,
) -> Result<(Vec<f64>, Vec<Tensor>)> {
    let mut total: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut losses = Vec::with_capacity(batch.len());
    for ep in batch {
        let tg = per_task(ep)?;
        for (t, g) in total.iter_mut().zip(&tg.grads) {
            t.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
        losses.push(tg.query_loss);
    }
    Ok((losses, total))
}

/// `θ ← θ − β ∇_θ Σ_i L_query,i(adapt(θ, support_i))`.
pub fn maml_step<L: TaskLoss>(
    task: &L,
    params: &mut [Tensor],
    batch: &[Episode<L::Data>],
    cfg: &MetaConfig,
) -> Result<StepReport> {
    let (query_losses, mut gradient) = summed::<L>(params, batch, |ep| {
        second_order_gradient(task, params, ep, cfg.alpha, cfg.inner_steps)
    })?;
    clip_grad_norm(&mut gradient, cfg.max_grad_norm);
    descend(params, &gradient, cfg.beta)?;
    Ok(StepReport {
        query_losses,
        gradient,
        step: cfg.beta,
        clamped: false,
    })
}

/// As [`maml_step`] with each query gradient taken at the adapted
/// parameters and applied to `θ` directly.
pub fn fomaml_step<L: TaskLoss>(
    task: &L,
    params: &mut [Tensor],
    batch: &[Episode<L::Data>],
    cfg: &MetaConfig,
) -> Result<StepReport> {
    let (query_losses, mut gradient) = summed::<L>(params, batch, |ep| {
        first_order_gradient(task, params, ep, cfg.alpha, cfg.inner_steps)
    })?;
    clip_grad_norm(&mut gradient, cfg.max_grad_norm);
    descend(params, &gradient, cfg.beta)?;
    Ok(StepReport {
        query_losses,
        gradient,
        step: cfg.beta,
        clamped: false,
    })
}

/// One task's second-order update with step `max(ε, β + γ·u)`.
pub fn tb_maml_step<L: TaskLoss>(
    task: &L,
    params: &mut [Tensor],
    episode: &Episode<L::Data>,
    u: f64,
    cfg: &MetaConfig,
) -> Result<StepReport> {
    let mut tg = second_order_gradient(task, params, episode, cfg.alpha, cfg.inner_steps)?;
    clip_grad_norm(&mut tg.grads, cfg.max_grad_norm);
    let (step, clamped) = cfg.effective_step(u);
    descend(params, &tg.grads, step)?;
    Ok(StepReport {
        query_losses: vec![tg.query_loss],
        gradient: tg.grads,
        step,
        clamped,
    })
}

/// One row of the meta-training loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub task: String,
    /// Query objective (m²) before the task's update.
    pub query_loss: f64,
}

#[derive(Debug, Clone)]
pub struct MetaRun {
    pub params: ParamSet,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub converged: bool,
    /// TB-MAML updates whose step was raised to the floor.
    pub clamped_steps: usize,
}

const META_SEED: u64 = 0x2B;
const INIT_SEED: u64 = 0x3C;

/// The shared starting point of every meta-learner for `cfg.seed`.
pub fn meta_init(cfg: &MetaConfig) -> ParamSet {
    ParamSet::init(rng::derive(cfg.seed, INIT_SEED))
}

/// Meta-trains from [`meta_init`].
///
/// Each iteration samples `meta_batch` distinct tasks and a fresh episode of
/// each, then updates `θ` once per task in ascending task order. MAML and FOMAML step by `β`; TB-MAML by `max(ε, β + γ·u_task)`.
/// With [`OuterOptimizer::Sgd`] every update is exactly the matching step op
/// ([`tb_maml_step`] or [`fomaml_step`]); with [`OuterOptimizer::Adam`] the
/// step size becomes that update's Adam learning rate.
/// Training stops early when the mean query loss of the last
/// `convergence_window` iterations improves on the window before by less
/// than `convergence_tol`.
pub fn meta_train(
    algo: Algorithm,
    tasks: &[PreparedTask],
    importance: Option<&[f64]>,
    cfg: &MetaConfig,
) -> Result<MetaRun> {
    cfg.validate()?;
    if !algo.is_meta() {
        return Err(Error::Config(format!("{algo} is not a meta-learner")));
    }
    if tasks.is_empty() {
        return Err(Error::Config("meta-training needs at least one task".into()));
    }
    let u = match (algo, importance) {
        (Algorithm::TbMaml, None) => {
            return Err(Error::Config("tb-maml needs an importance vector".into()))
        }
        (Algorithm::TbMaml, Some(u)) => {
            if u.len() != tasks.len() {
                return Err(Error::Config(format!(
                    "importance vector has {} entries for {} tasks",
                    u.len(),
                    tasks.len()
                )));
            }
            if let Some(x) = u.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
                return Err(Error::Config(format!("importance {x} outside [-1, 1]")));
            }
            u.to_vec()
        }
        _ => vec![0.0; tasks.len()],
    };
    let root = rng::derive(cfg.seed, META_SEED);
    let mut theta = meta_init(cfg).tensors().to_vec();
    let mut adam = Adam::new(&theta, cfg.beta);
    let mut trace = Vec::new();
    let mut per_iteration = Vec::new();
    let mut clamped_steps = 0;
    let mut converged = false;
    let batch = cfg.meta_batch.min(tasks.len());
    for it in 0..cfg.meta_iterations {
        let mut rng = rng::stream(root, Stream::Sampling, it as u64);
        let mut chosen = index::sample(&mut rng, tasks.len(), batch).into_vec();
        chosen.sort_unstable();
        let mut total = 0.0;
        for &t in &chosen {
            let ep = tasks[t].episode(cfg.shots, cfg.query_per_rp, &mut rng)?;
            let query_loss = match (cfg.outer_optimizer, algo) {
                (OuterOptimizer::Sgd, Algorithm::Fomaml) => {
                    fomaml_step(&LocalizationLoss, &mut theta, &[ep], cfg)?.query_losses[0]
                }
                (OuterOptimizer::Sgd, _) => {
                    let r = tb_maml_step(&LocalizationLoss, &mut theta, &ep, u[t], cfg)?;
                    clamped_steps += r.clamped as usize;
                    r.query_losses[0]
                }
                (OuterOptimizer::Adam, _) => {
                    let mut tg = if algo == Algorithm::Fomaml {
                        first_order_gradient(&LocalizationLoss, &theta, &ep, cfg.alpha, cfg.inner_steps)?
                    } else {
                        second_order_gradient(&LocalizationLoss, &theta, &ep, cfg.alpha, cfg.inner_steps)?
                    };
                    clip_grad_norm(&mut tg.grads, cfg.max_grad_norm);
                    let (step, clamped) = cfg.effective_step(u[t]);
                    clamped_steps += clamped as usize;
                    adam.step_with_lr(&mut theta, &tg.grads, step)?;
                    tg.query_loss
                }
            };
            total += query_loss;
            trace.push(TraceRow {
                iteration: it,
                task: tasks[t].id.clone(),
                query_loss,
            });
        }
        per_iteration.push(total / chosen.len() as f64);
        if window_converged(&per_iteration, cfg.convergence_window, cfg.convergence_tol) {
            converged = true;
            break;
        }
    }
    Ok(MetaRun {
        params: ParamSet::from_tensors(theta)?,
        iterations: per_iteration.len(),
        trace,
        converged,
        clamped_steps,
    })
}

/// Checked at window boundaries only, comparing the last two full windows.
fn window_converged(losses: &[f64], window: usize, tol: f64) -> bool {
    let n = losses.len();
    if window == 0 || n < 2 * window || !n.is_multiple_of(window) {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let prev = mean(&losses[n - 2 * window..n - window]);
    let last = mean(&losses[n - window..]);
    prev - last < tol
}

const BASELINE_SEED: u64 = 0x4D;

/// Fresh initialization fitted on the target's k-shot support only.
pub fn train_conventional(target: &PreparedTask, cfg: &MetaConfig) -> Result<ParamSet> {
    cfg.validate()?;
    let seed = rng::derive(rng::derive(cfg.seed, BASELINE_SEED), 0);
    let mut p = ParamSet::init(seed);
    fit(&mut p, &target.shots(cfg.shots)?, &cfg.finetune, seed)?;
    Ok(p)
}

/// Fresh initialization fitted on the source's training portion, then
/// fine-tuned on the target's k-shot support.
pub fn train_transfer(
    source: &PreparedTask,
    target: &PreparedTask,
    cfg: &MetaConfig,
) -> Result<ParamSet> {
    finetune(pretrain_source(source, cfg)?, target, cfg)
}

/// Fits `params` on the target's k-shot support with the fine-tune budget.
pub fn finetune(mut params: ParamSet, target: &PreparedTask, cfg: &MetaConfig) -> Result<ParamSet> {
    let seed = rng::derive(rng::derive(cfg.seed, BASELINE_SEED), 2);
    fit(&mut params, &target.shots(cfg.shots)?, &cfg.finetune, seed)?;
    Ok(params)
}

/// The source half of [`train_transfer`], reusable across targets.
pub fn pretrain_source(source: &PreparedTask, cfg: &MetaConfig) -> Result<ParamSet> {
    cfg.validate()?;
    let seed = rng::derive(rng::derive(cfg.seed, BASELINE_SEED), 1);
    let mut p = ParamSet::init(seed);
    fit(&mut p, &source.train_batch()?, &cfg.base, seed)?;
    Ok(p)
}

/// Distance errors (cm) of `params` on the task's held-out samples.
pub fn evaluate(params: &ParamSet, task: &PreparedTask) -> Result<Vec<f64>> {
    let test = task.test_batch()?;
    let pred = model::predict(params, &test.x)?;
    Ok(pred
        .iter()
        .zip(test.labels())
        .map(|(p, l)| distance_error(*p, l))
        .collect())
}

/// Inner-loop adaptation on the first `shots` training samples per point,
/// then [`evaluate`]. `shots = 0` evaluates `params` unchanged.
pub fn adapt_and_eval(
    params: &ParamSet,
    task: &PreparedTask,
    shots: usize,
    cfg: &MetaConfig,
) -> Result<Vec<f64>> {
    if shots == 0 || cfg.inner_steps == 0 {
        return evaluate(params, task);
    }
    let adapted = inner_adapt(
        &LocalizationLoss,
        params.tensors(),
        &task.shots(shots)?,
        cfg.alpha,
        cfg.inner_steps,
    )?;
    evaluate(&ParamSet::from_tensors(adapted)?, task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Var};
    use crate::meta::config::FitConfig;
    use crate::tasks::{generate_scenario, ChannelConfig};

    /// `L(θ) = (θ − c)²` on a scalar.
    struct Quadratic;

    impl TaskLoss for Quadratic {
        type Data = f64;

        fn loss(&self, g: &mut Graph, params: &[Var], c: &f64) -> Result<Var> {
            let t = g.constant(Tensor::scalar(*c));
            let d = g.sub(params[0], t)?;
            let sq = g.mul(d, d)?;
            Ok(sq)
        }
    }

    fn scalar_cfg(alpha: f64) -> MetaConfig {
        MetaConfig {
            alpha,
            beta: 0.1,
            gamma: 0.0,
            inner_steps: 1,
            max_grad_norm: 0.0,
            ..MetaConfig::default()
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Tensor::scalar(3.0), Tensor::scalar(4.0)];
        clip_grad_norm(&mut g, 10.0);
        assert_eq!((g[0].data()[0], g[1].data()[0]), (3.0, 4.0));
        clip_grad_norm(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
        clip_grad_norm(&mut g, 0.0);
        assert!((g[1].data()[0] - 0.8).abs() < 1e-15);

        let cfg = MetaConfig { max_grad_norm: 0.25, ..scalar_cfg(0.1) };
        let mut p = theta(0.7);
        let r = maml_step(&Quadratic, &mut p, &tasks(&[2.0]), &cfg).unwrap();
        assert!((r.gradient[0].data()[0].abs() - 0.25).abs() < 1e-12);
        assert!((p[0].data()[0] - (0.7 + 0.1 * 0.25)).abs() < 1e-12);
    }

    fn tasks(cs: &[f64]) -> Vec<Episode<f64>> {
        cs.iter().map(|&c| Episode { support: c, query: c }).collect()
    }

    fn theta(v: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn maml_closed_forms() {
        let cfg = scalar_cfg(0.25);
        let mut p = theta(0.0);
        let r = maml_step(&Quadratic, &mut p, &tasks(&[1.0, 0.0]), &cfg).unwrap();
        // 2(θ' − c)(1 − 2α) with θ' = 0.5 for c = 1, and 0 for c = 0.
        assert!((r.gradient[0].data()[0] + 0.5).abs() < 1e-10);
        assert!((p[0].data()[0] - 0.05).abs() < 1e-12);
        let mut p = theta(0.0);
        let r = maml_step(&Quadratic, &mut p, &tasks(&[1.0, -1.0]), &cfg).unwrap();
        assert_eq!(r.gradient[0].data()[0], 0.0);
        assert_eq!(p[0].data()[0], 0.0);
    }

    #[test]
    fn fomaml_closed_forms() {
        let cfg = scalar_cfg(0.25);
        let mut p = theta(0.0);
        let r = fomaml_step(&Quadratic, &mut p, &tasks(&[1.0, 0.0]), &cfg).unwrap();
        assert!((r.gradient[0].data()[0] + 1.0).abs() < 1e-10);
        let mut p = theta(0.0);
        let r = fomaml_step(&Quadratic, &mut p, &tasks(&[1.0, -1.0]), &cfg).unwrap();
        assert_eq!(r.gradient[0].data()[0], 0.0);
    }

    #[test]
    fn zero_alpha_makes_first_and_second_order_agree() {
        let cfg = scalar_cfg(0.0);
        let (mut a, mut b) = (theta(0.3), theta(0.3));
        let ra = maml_step(&Quadratic, &mut a, &tasks(&[1.0, 0.0, 2.5]), &cfg).unwrap();
        let rb = fomaml_step(&Quadratic, &mut b, &tasks(&[1.0, 0.0, 2.5]), &cfg).unwrap();
        assert_eq!(ra.gradient, rb.gradient);
        assert_eq!(a, b);
    }

    #[test]
    fn two_inner_steps_match_the_unrolled_derivative() {
        // θ'' = (1−2α)²θ + c(1 − (1−2α)²); d/dθ (θ''−c)² = 2(θ''−c)(1−2α)².
        let cfg = MetaConfig {
            inner_steps: 2,
            ..scalar_cfg(0.1)
        };
        let mut p = theta(0.7);
        let r = maml_step(&Quadratic, &mut p, &tasks(&[2.0]), &cfg).unwrap();
        let a: f64 = 0.8 * 0.8;
        let t2 = a * 0.7 + 2.0 * (1.0 - a);
        assert!((r.gradient[0].data()[0] - 2.0 * (t2 - 2.0) * a).abs() < 1e-12);
    }

    #[test]
    fn tb_step_sizes() {
        let cfg = MetaConfig {
            inner_steps: 1,
            beta: 0.001,
            gamma: 0.0005,
            ..MetaConfig::default()
        };
        let ep = &tasks(&[1.0])[0];
        for (u, want) in [(1.0, 0.0015), (-1.0, 0.0005), (0.0, 0.001)] {
            let mut p = theta(0.0);
            let r = tb_maml_step(&Quadratic, &mut p, ep, u, &cfg).unwrap();
            assert!((r.step - want).abs() < 1e-18);
            assert!(!r.clamped);
        }
        let zero_gamma = MetaConfig { gamma: 0.0, ..cfg.clone() };
        let (mut a, mut b) = (theta(0.2), theta(0.2));
        tb_maml_step(&Quadratic, &mut a, ep, 0.7, &zero_gamma).unwrap();
        maml_step(&Quadratic, &mut b, std::slice::from_ref(ep), &zero_gamma).unwrap();
        assert_eq!(a, b);
        let invalid = MetaConfig { gamma: 0.002, ..cfg };
        let r = tb_maml_step(&Quadratic, &mut theta(0.0), ep, -1.0, &invalid).unwrap();
        assert!(r.clamped);
        assert_eq!(r.step, 1e-6);
    }

    #[test]
    fn zero_beta_leaves_theta() {
        let cfg = MetaConfig {
            beta: 0.0,
            ..scalar_cfg(0.25)
        };
        let mut p = theta(0.4);
        maml_step(&Quadratic, &mut p, &tasks(&[1.0, 0.0]), &cfg).unwrap();
        assert_eq!(p, theta(0.4));
    }

    #[test]
    fn convergence_window() {
        let flat = vec![1.0; 100];
        assert!(window_converged(&flat, 50, 1e-4));
        assert!(!window_converged(&flat[..99], 50, 1e-4));
        assert!(!window_converged(&flat, 0, 1e-4));
        let falling: Vec<f64> = (0..100).map(|i| 1.0 - 0.001 * i as f64).collect();
        assert!(!window_converged(&falling, 50, 1e-4));
    }

    fn small_tasks(n: u64) -> Vec<PreparedTask> {
        let ch = ChannelConfig {
            samples_per_rp: 14,
            ..ChannelConfig::default()
        };
        (0..n)
            .map(|s| PreparedTask::new(&generate_scenario(s, &ch).unwrap(), 4, s).unwrap())
            .collect()
    }

    fn small_cfg() -> MetaConfig {
        MetaConfig {
            shots: 2,
            inner_steps: 1,
            meta_iterations: 6,
            meta_batch: 2,
            query_per_rp: 2,
            convergence_window: 0,
            ..MetaConfig::default()
        }
    }

    #[test]
    fn meta_train_zero_iterations_returns_init() {
        let cfg = MetaConfig {
            meta_iterations: 0,
            ..small_cfg()
        };
        let run = meta_train(Algorithm::Maml, &small_tasks(2), None, &cfg).unwrap();
        assert_eq!(run.params, meta_init(&cfg));
        assert!(run.trace.is_empty());
    }

    #[test]
    fn meta_train_is_deterministic_and_reduces_to_maml() {
        let tasks = small_tasks(3);
        let cfg = small_cfg();
        let a = meta_train(Algorithm::Maml, &tasks, None, &cfg).unwrap();
        let b = meta_train(Algorithm::Maml, &tasks, None, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 12);
        let zero = MetaConfig { gamma: 0.0, ..cfg.clone() };
        let tb = meta_train(Algorithm::TbMaml, &tasks, Some(&[1.0, -0.5, 0.0]), &zero).unwrap();
        assert_eq!(tb.params, meta_train(Algorithm::Maml, &tasks, None, &zero).unwrap().params);
        let biased = meta_train(Algorithm::TbMaml, &tasks, Some(&[1.0, -0.5, 0.0]), &cfg).unwrap();
        assert_ne!(biased.params, a.params);
        assert!(meta_train(Algorithm::TbMaml, &tasks, None, &cfg).is_err());
        assert!(meta_train(Algorithm::TbMaml, &tasks, Some(&[2.0, 0.0, 0.0]), &cfg).is_err());
        assert!(meta_train(Algorithm::Conventional, &tasks, None, &cfg).is_err());
    }

    #[test]
    fn baselines_train_and_evaluate() {
        let tasks = small_tasks(2);
        let cfg = MetaConfig {
            finetune: FitConfig {
                epochs: 0,
                ..FitConfig::default()
            },
            base: FitConfig {
                epochs: 1,
                ..FitConfig::default()
            },
            ..small_cfg()
        };
        let conv = train_conventional(&tasks[1], &cfg).unwrap();
        assert_eq!(conv, ParamSet::init(rng::derive(rng::derive(cfg.seed, BASELINE_SEED), 0)));
        let errs = evaluate(&conv, &tasks[1]).unwrap();
        assert_eq!(errs.len(), tasks[1].test_batch().unwrap().len());
        let tr = train_transfer(&tasks[0], &tasks[1], &cfg).unwrap();
        assert!(tr.is_finite());
        let adapted = adapt_and_eval(&conv, &tasks[1], 2, &cfg).unwrap();
        assert_eq!(adapted.len(), errs.len());
        assert_eq!(adapt_and_eval(&conv, &tasks[1], 0, &cfg).unwrap(), errs);
    }
}
