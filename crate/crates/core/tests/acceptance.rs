//! Acceptance suite. Each test checks one criterion and prints a single
//! `criterion N: PASS|FAIL ...` line before asserting.
//!
//! Criteria 5 to 7 train real models on synthetic suites and take most of the
//! suite's runtime; run with `--release` and `--nocapture` to see the lines:
//!
//! ```text
//! cargo test --release --test acceptance -- --nocapture
//! ```

use std::sync::OnceLock;
use std::time::Instant;

use metaloc::autodiff::{Graph, Tensor, Var};
use metaloc::eval::{
    benchmark, cdf, cross_scenario_matrix, default_thresholds, prepare_tasks, task_count_sweep,
    BenchmarkConfig, EvalReport,
};
use metaloc::meta::{
    fomaml_step, importance_from_losses, maml_step, meta_train, tb_maml_step, Algorithm, Episode,
    LocalizationLoss, MetaConfig, OuterOptimizer, TaskLoss,
};
use metaloc::model::{self, Batch, ParamSet, SAMPLE_LEN};
use metaloc::tasks::{
    generate_scenario, generate_suite, load_scenario, save_scenario, split_task, ChannelConfig,
    Grid, Scenario,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: String, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n}: {verdict} {detail} ({:.1} s)",
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_1_gradient_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..5 {
        let params = ParamSet::init(rng.random());
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..SAMPLE_LEN).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys: Vec<[f64; 2]> = (0..4)
            .map(|_| [rng.random_range(0.0..120.0), rng.random_range(0.0..180.0)])
            .collect();
        let batch = Batch::new(&refs, &ys).unwrap();
        let (_, grads) = model::loss_and_grad(&params, &batch).unwrap();
        for _ in 0..20 {
            let layer = rng.random_range(0..params.tensors().len());
            let i = rng.random_range(0..params.tensors()[layer].len());
            let at = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[layer].data_mut()[i] += delta;
                model::loss(&p, &batch).unwrap()
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let analytic = grads[layer].data()[i];
            let scale = numeric.abs().max(analytic.abs());
            let rel = if scale < 1e-8 { 0.0 } else { (numeric - analytic).abs() / scale };
            worst = worst.max(rel);
            checked += 1;
        }
    }
    report(
        1,
        worst <= 1e-4,
        format!("{checked} coordinates over 5 inputs, worst relative error {worst:.2e}"),
        t0,
    );
}

struct Quadratic;

impl TaskLoss for Quadratic {
    type Data = f64;

    fn loss(&self, g: &mut Graph, p: &[Var], c: &f64) -> metaloc::Result<Var> {
        let c = g.constant(Tensor::scalar(*c));
        let d = g.sub(p[0], c)?;
        g.mul(d, d)
    }
}

#[test]
fn criterion_2_meta_gradient_closed_forms() {
    let t0 = Instant::now();
    let cfg = MetaConfig {
        alpha: 0.25,
        inner_steps: 1,
        outer_optimizer: OuterOptimizer::Sgd,
        max_grad_norm: 0.0,
        ..MetaConfig::default()
    };
    let tasks = [
        Episode { support: 1.0, query: 1.0 },
        Episode { support: 0.0, query: 0.0 },
    ];
    let mut maml = vec![Tensor::scalar(0.0)];
    let m = maml_step(&Quadratic, &mut maml, &tasks, &cfg).unwrap();
    let mut fomaml = vec![Tensor::scalar(0.0)];
    let f = fomaml_step(&Quadratic, &mut fomaml, &tasks, &cfg).unwrap();
    let gm = m.gradient[0].data()[0];
    let gf = f.gradient[0].data()[0];
    let applied_m = -maml[0].data()[0] / cfg.beta;
    let applied_f = -fomaml[0].data()[0] / cfg.beta;
    let pass = (gm + 0.5).abs() <= 1e-10
        && (gf + 1.0).abs() <= 1e-10
        && (applied_m + 0.5).abs() <= 1e-10
        && (applied_f + 1.0).abs() <= 1e-10;
    report(
        2,
        pass,
        format!("maml gradient {gm:+.12}, fomaml gradient {gf:+.12}"),
        t0,
    );
}

fn toy_tasks() -> Vec<metaloc::meta::PreparedTask> {
    let ch = ChannelConfig {
        grid: Grid {
            rows: 2,
            cols: 2,
            spacing_cm: 60.0,
        },
        samples_per_rp: 6,
        ..ChannelConfig::default()
    };
    let scenarios = generate_suite(4, 3, &ch).unwrap();
    prepare_tasks(&scenarios, 2, 3).unwrap()
}

fn toy_cfg() -> MetaConfig {
    MetaConfig {
        inner_steps: 1,
        shots: 2,
        query_per_rp: 2,
        holdout_per_rp: 2,
        meta_batch: 2,
        meta_iterations: 200,
        convergence_window: 0,
        gamma: 0.0,
        ..MetaConfig::default()
    }
}

#[test]
fn criterion_3_reduction_identities() {
    let t0 = Instant::now();
    let tasks = toy_tasks();
    let cfg = toy_cfg();
    let u = [1.0, -1.0, 0.3, -0.6];
    let mut pass = true;
    let mut notes = Vec::new();
    for outer in [OuterOptimizer::Adam, OuterOptimizer::Sgd] {
        let c = MetaConfig {
            outer_optimizer: outer,
            ..cfg.clone()
        };
        let maml = meta_train(Algorithm::Maml, &tasks, None, &c).unwrap();
        let tb = meta_train(Algorithm::TbMaml, &tasks, Some(&u), &c).unwrap();
        let same = maml.params == tb.params && maml.iterations == 200;
        pass &= same;
        notes.push(format!("tb(γ=0) ≡ maml [{outer:?}] {same}"));
    }

    // α = 0: the inner loop is the identity, so both meta-gradients are the
    // plain query gradient.
    let zero = MetaConfig {
        alpha: 0.0,
        outer_optimizer: OuterOptimizer::Sgd,
        ..cfg.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut a = ParamSet::init(23).tensors().to_vec();
    let mut b = a.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let batch: Vec<Episode<Batch>> = (0..2)
            .map(|_| {
                let t = &tasks[rng.random_range(0..tasks.len())];
                t.episode(2, 2, &mut rng).unwrap()
            })
            .collect();
        maml_step(&LocalizationLoss, &mut a, &batch, &zero).unwrap();
        fomaml_step(&LocalizationLoss, &mut b, &batch, &zero).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.data().iter().zip(y.data()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    pass &= worst <= 1e-12;
    notes.push(format!("fomaml ≡ maml at α=0, max |Δθ| {worst:.1e}"));

    // The same identity one level down, with importance weights at γ = 0.
    let mut m = vec![Tensor::scalar(3.0)];
    let mut t = m.clone();
    let q = MetaConfig {
        alpha: 0.1,
        beta: 0.05,
        outer_optimizer: OuterOptimizer::Sgd,
        ..cfg
    };
    for i in 0..200 {
        let c = (i % 3) as f64 - 1.0;
        let e = Episode { support: c, query: c };
        maml_step(&Quadratic, &mut m, std::slice::from_ref(&e), &q).unwrap();
        tb_maml_step(&Quadratic, &mut t, &e, u[i % 4], &q).unwrap();
    }
    let steps_same = m == t;
    pass &= steps_same;
    notes.push(format!("tb-maml-step(γ=0) ≡ maml-step {steps_same}"));
    report(3, pass, format!("200 iterations: {}", notes.join("; ")), t0);
}

#[test]
fn criterion_4_importance_algebra() {
    let t0 = Instant::now();
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        prop::collection::vec(-1e3f64..1e3, 1..40),
        0.01f64..100.0,
        -1e3f64..1e3,
    );
    let result = runner.run(&strategy, |(losses, scale, shift)| {
        let u = importance_from_losses(&losses).unwrap();
        prop_assert_eq!(u.len(), losses.len());
        prop_assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..losses.len() {
            for j in 0..losses.len() {
                if losses[i] < losses[j] {
                    prop_assert!(u[i] >= u[j], "order reversed at {} {}", i, j);
                }
            }
        }
        let moved: Vec<f64> = losses.iter().map(|l| scale * l + shift).collect();
        let v = importance_from_losses(&moved).unwrap();
        for (a, b) in u.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
        let flat = vec![losses[0]; losses.len()];
        prop_assert!(importance_from_losses(&flat).unwrap().iter().all(|&x| x == 0.0));
        Ok(())
    });
    let detail = match &result {
        Ok(()) => "1000 random loss vectors: bounded, order-reversing, affine-invariant, zero when equal".to_string(),
        Err(e) => format!("{e}"),
    };
    report(4, result.is_ok(), detail, t0);
}

/// The generator settings every experiment criterion uses.
fn suite(n: usize) -> Vec<Scenario> {
    generate_suite(n, 1, &ChannelConfig::default()).unwrap()
}

#[test]
fn criterion_5_generalization_gap() {
    let t0 = Instant::now();
    let scenarios = suite(10);
    let cfg = MetaConfig::default();
    let zero = cross_scenario_matrix(&scenarios, 0, &cfg).unwrap();
    let tuned = cross_scenario_matrix(&scenarios, 5, &cfg).unwrap();
    let (diag, off, off5) = (zero.diagonal_mean(), zero.off_diagonal_mean(), tuned.off_diagonal_mean());
    let pass = off >= 1.5 * diag && off5 < off;
    report(
        5,
        pass,
        format!("diagonal {diag:.2} cm, off-diagonal {off:.2} cm (ratio {:.2}), 5-shot off-diagonal {off5:.2} cm", off / diag),
        t0,
    );
}

/// Fixed budget: the moving-average stop reacts to episode noise long before
/// the meta-learners have converged.
fn experiment_cfg() -> MetaConfig {
    MetaConfig {
        meta_iterations: 2000,
        convergence_window: 0,
        ..MetaConfig::default()
    }
}

fn experiment_bench() -> BenchmarkConfig {
    BenchmarkConfig {
        algorithms: vec![Algorithm::Conventional, Algorithm::Maml, Algorithm::TbMaml],
        shots: vec![5],
        repeats: 5,
        test_scenarios: 5,
    }
}

/// The 33-scenario benchmark shared by criteria 6 and 7.
fn shared_benchmark() -> &'static (EvalReport, f64) {
    static REPORT: OnceLock<(EvalReport, f64)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let t0 = Instant::now();
        let r = benchmark(&suite(33), &experiment_bench(), &experiment_cfg()).unwrap();
        (r, t0.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_6_ordering() {
    let t0 = Instant::now();
    let (r, _) = shared_benchmark();
    let mean = |a| r.population(a, 5).unwrap().summary.mean;
    let (conv, maml, tb) = (mean(Algorithm::Conventional), mean(Algorithm::Maml), mean(Algorithm::TbMaml));
    let pass = tb <= maml && maml <= conv && maml <= 0.8 * conv && tb <= 0.8 * conv;
    report(
        6,
        pass,
        format!(
            "5-shot mean over 5 repeats: tb-maml {tb:.2} cm, maml {maml:.2} cm, conventional {conv:.2} cm (maml {:.0}%, tb-maml {:.0}% below conventional)",
            100.0 * (1.0 - maml / conv),
            100.0 * (1.0 - tb / conv)
        ),
        t0,
    );
}

#[test]
fn criterion_7_task_scarcity() {
    let t0 = Instant::now();
    let (r, _) = shared_benchmark();
    let algorithms = [Algorithm::Maml, Algorithm::TbMaml];
    let scarce = task_count_sweep(&suite(33), &algorithms, &[5], &experiment_bench(), &experiment_cfg()).unwrap();
    let at5 = |a| scarce.iter().find(|p| p.algorithm == a).unwrap().mean_error_cm;
    // The sweep at the full count is the benchmark itself.
    let full = |a| r.population(a, 5).unwrap().summary.mean;
    let (m5, t5) = (at5(Algorithm::Maml), at5(Algorithm::TbMaml));
    let (m28, t28) = (full(Algorithm::Maml), full(Algorithm::TbMaml));
    let pass = t5 <= m5 && m5 >= 0.9 * m28 && t5 >= 0.9 * t28;
    report(
        7,
        pass,
        format!("5 tasks: tb-maml {t5:.2} cm, maml {m5:.2} cm; 28 tasks: tb-maml {t28:.2} cm, maml {m28:.2} cm"),
        t0,
    );
}

#[test]
fn criterion_8_data_contracts() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut round_trips = 0;
    for seed in 0..5 {
        let s = generate_scenario(seed, &ChannelConfig::default()).unwrap();
        let path = dir.path().join(format!("scenario_{seed}.json"));
        save_scenario(&s, &path).unwrap();
        let back = load_scenario(&path).unwrap();
        let exact = back == s
            && s.samples.iter().zip(&back.samples).all(|(a, b)| {
                a.amp.iter().zip(&b.amp).all(|(x, y)| x.to_bits() == y.to_bits())
            });
        assert!(exact, "scenario {seed} did not round-trip exactly");
        round_trips += 1;
    }

    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let configs = (1usize..4, 2usize..5, 2usize..10, any::<u64>(), any::<u64>())
        .prop_flat_map(|(r, c, n, gs, ss)| (Just((r, c, n, gs, ss)), 1..n));
    let splits = runner.run(&configs, |((rows, cols, per_rp, gen_seed, split_seed), k)| {
        let ch = ChannelConfig {
            grid: Grid { rows, cols, spacing_cm: 60.0 },
            samples_per_rp: per_rp,
            ..ChannelConfig::default()
        };
        let s = generate_scenario(gen_seed, &ch).unwrap();
        let split = split_task(&s, k, split_seed).unwrap();
        let points = rows * cols;
        prop_assert_eq!(split.support.len(), k * points);
        prop_assert_eq!(split.query.len(), (per_rp - k) * points);
        let mut all: Vec<usize> = split.support.iter().chain(&split.query).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..s.samples.len()).collect::<Vec<_>>());
        for rp in 0..points {
            let n = split.support.iter().filter(|&&i| s.samples[i].rp == rp).count();
            prop_assert_eq!(n, k);
        }
        prop_assert_eq!(split_task(&s, k, split_seed).unwrap(), split);
        Ok(())
    });
    assert!(splits.is_ok(), "{splits:?}");

    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let cdfs = runner.run(&prop::collection::vec(0.0f64..400.0, 1..200), |errors| {
        let t = default_thresholds();
        let c = cdf(&errors, &t).unwrap();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(c[0], 0.0);
        let max = errors.iter().copied().fold(0.0, f64::max);
        let above = cdf(&errors, &[max + 1.0]).unwrap();
        prop_assert_eq!(above[0], 1.0);
        Ok(())
    });
    assert!(cdfs.is_ok(), "{cdfs:?}");
    report(
        8,
        true,
        format!("{round_trips} exact round trips, 1000 split configurations, 1000 CDFs"),
        t0,
    );
}
