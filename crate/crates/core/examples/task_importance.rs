//! Computes the task-importance vector of a small suite: one model per task,
//! each adapted to every other task's k-shot support, scored on that task's
//! held-out samples and min-max mapped to `[-1, 1]`.

use metaloc::eval::prepare_tasks;
use metaloc::meta::{compute_importance, FitConfig, MetaConfig};
use metaloc::tasks::{generate_suite, ChannelConfig};

fn main() -> metaloc::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(6);
    let scenarios = generate_suite(n, 1, &ChannelConfig::default())?;
    let cfg = MetaConfig {
        base: FitConfig {
            epochs: 40,
            ..FitConfig::default()
        },
        ..MetaConfig::default()
    };
    let tasks = prepare_tasks(&scenarios, cfg.holdout_per_rp, cfg.seed)?;
    let iv = compute_importance(&tasks, &cfg)?;

    println!("pairwise held-out loss (m²) of task i's model adapted to task j");
    for (i, row) in iv.pairwise.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .map(|c| c.map_or("   -  ".to_string(), |v| format!("{v:6.3}")))
            .collect();
        println!("  {i}: {}", cells.join(" "));
    }
    for (i, id) in iv.task_ids.iter().enumerate() {
        let (step, _) = cfg.effective_step(iv.u[i]);
        println!("{id:<24} L = {:.4}  u = {:+.3}  outer step {step:.2e}", iv.average_losses[i], iv.u[i]);
    }
    Ok(())
}
