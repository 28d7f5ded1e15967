//! MAML, FOMAML and TB-MAML on scalar quadratic tasks `L_c(θ) = (θ − c)²`,
//! where every quantity has a closed form.
//!
//! With one inner step of size α the adapted parameter is
//! `θ − 2α(θ − c)` and the MAML meta-gradient of a task is
//! `2(1 − 2α)²(θ − c)`, so the meta-optimum is the mean of the task centers.
//! TB-MAML moves θ further for tasks with positive importance, which pulls
//! the fixed point toward them.

use metaloc::autodiff::{Graph, Tensor, Var};
use metaloc::meta::{fomaml_step, maml_step, tb_maml_step, Episode, MetaConfig, OuterOptimizer, TaskLoss};

struct Quadratic;

impl TaskLoss for Quadratic {
    type Data = f64;

    fn loss(&self, g: &mut Graph, p: &[Var], c: &f64) -> metaloc::Result<Var> {
        let c = g.constant(Tensor::scalar(*c));
        let d = g.sub(p[0], c)?;
        g.mul(d, d)
    }
}

fn main() -> metaloc::Result<()> {
    let centers = [-1.0, 0.5, 2.0];
    let importance = [1.0, 0.0, -1.0];
    let tasks: Vec<Episode<f64>> = centers.iter().map(|&c| Episode { support: c, query: c }).collect();
    let cfg = MetaConfig {
        alpha: 0.1,
        beta: 0.05,
        gamma: 0.04,
        inner_steps: 1,
        outer_optimizer: OuterOptimizer::Sgd,
        max_grad_norm: 0.0,
        ..MetaConfig::default()
    };

    let theta0 = vec![Tensor::scalar(5.0)];
    let report = maml_step(&Quadratic, &mut theta0.clone(), &tasks, &cfg)?;
    let closed: f64 = centers.iter().map(|c| 2.0 * (1.0 - 2.0 * cfg.alpha).powi(2) * (5.0 - c)).sum();
    println!("meta-gradient at θ=5: tape {:.12}, closed form {closed:.12}", report.gradient[0].data()[0]);

    let mut maml = theta0.clone();
    let mut fomaml = theta0.clone();
    let mut tb = theta0.clone();
    for it in 0..300 {
        maml_step(&Quadratic, &mut maml, &tasks, &cfg)?;
        fomaml_step(&Quadratic, &mut fomaml, &tasks, &cfg)?;
        for (episode, &u) in tasks.iter().zip(&importance) {
            tb_maml_step(&Quadratic, &mut tb, episode, u, &cfg)?;
        }
        if it % 60 == 0 || it == 299 {
            println!(
                "iter {it:>3}: maml {:+.6}  fomaml {:+.6}  tb-maml {:+.6}",
                maml[0].data()[0],
                fomaml[0].data()[0],
                tb[0].data()[0]
            );
        }
    }
    let mean = centers.iter().sum::<f64>() / centers.len() as f64;
    println!("mean of task centers {mean:+.6}; TB-MAML leans toward the task with u = +1 ({})", centers[0]);
    Ok(())
}
