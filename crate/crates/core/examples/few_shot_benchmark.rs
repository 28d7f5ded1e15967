//! The few-shot benchmark: every algorithm trained on the training scenarios
//! of each repeat and tested on the held-out ones, pooled into error CDFs.
//!
//! ```text
//! cargo run --release --example few_shot_benchmark -- [repeats] [meta_iterations] [out_dir]
//! ```
//!
//! The defaults run one repeat with 300 meta-iterations in a few minutes.

use std::path::PathBuf;

use metaloc::eval::{benchmark, write_report, BenchmarkConfig};
use metaloc::meta::{Algorithm, MetaConfig};
use metaloc::tasks::{generate_suite, ChannelConfig};

fn main() -> metaloc::Result<()> {
    let mut args = std::env::args().skip(1);
    let repeats = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let iterations = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("metaloc-benchmark"));

    let scenarios = generate_suite(33, 1, &ChannelConfig::default())?;
    let cfg = MetaConfig {
        meta_iterations: iterations,
        convergence_window: 0,
        ..MetaConfig::default()
    };
    let bench = BenchmarkConfig {
        repeats,
        ..BenchmarkConfig::default()
    };
    let report = benchmark(&scenarios, &bench, &cfg)?;
    write_report(&report, &out)?;

    println!("{:<12} {:>9} {:>9} {:>9}", "algorithm", "mean cm", "median", "<100 cm");
    for p in &report.populations {
        let below_100 = report
            .thresholds
            .iter()
            .position(|&t| t == 100.0)
            .map_or(f64::NAN, |i| p.cdf[i]);
        println!(
            "{:<12} {:>9.2} {:>9.2} {:>9.3}",
            p.algorithm.name(),
            p.summary.mean,
            p.summary.median,
            below_100
        );
    }
    let conventional = report.population(Algorithm::Conventional, cfg.shots).map(|p| p.summary.mean);
    if let Some(c) = conventional {
        for a in [Algorithm::Maml, Algorithm::Fomaml, Algorithm::TbMaml] {
            if let Some(p) = report.population(a, cfg.shots) {
                println!("{a}: {:.0}% below conventional", 100.0 * (1.0 - p.summary.mean / c));
            }
        }
    }
    println!("report written to {}", out.display());
    Ok(())
}
