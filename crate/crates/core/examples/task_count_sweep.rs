//! Mean error of the meta-learners as the number of training scenarios
//! grows, with the subsets shared across algorithms.
//!
//! ```text
//! cargo run --release --example task_count_sweep -- [meta_iterations] [counts...]
//! ```

use metaloc::eval::{task_count_sweep, BenchmarkConfig};
use metaloc::meta::{Algorithm, MetaConfig};
use metaloc::tasks::{generate_suite, ChannelConfig};

fn main() -> metaloc::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let mut counts: Vec<usize> = args.filter_map(|a| a.parse().ok()).collect();
    if counts.is_empty() {
        counts = vec![4, 10, 18, 28];
    }
    let scenarios = generate_suite(33, 1, &ChannelConfig::default())?;
    let cfg = MetaConfig {
        meta_iterations: iterations,
        convergence_window: 0,
        ..MetaConfig::default()
    };
    let bench = BenchmarkConfig {
        repeats: 1,
        ..BenchmarkConfig::default()
    };
    let algorithms = [Algorithm::Maml, Algorithm::TbMaml];
    let points = task_count_sweep(&scenarios, &algorithms, &counts, &bench, &cfg)?;
    println!("{:<10} {:>6} {:>10}", "algorithm", "tasks", "mean cm");
    for p in &points {
        println!("{:<10} {:>6} {:>10.2}", p.algorithm.name(), p.task_count, p.mean_error_cm);
    }
    Ok(())
}
