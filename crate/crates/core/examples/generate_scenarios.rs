//! Generates a small scenario suite, writes it to disk, reloads it and
//! prints what distinguishes the scenarios.
//!
//! ```text
//! cargo run --release --example generate_scenarios -- /tmp/scenarios 8
//! ```

use std::path::PathBuf;

use metaloc::tasks::{generate_suite, load_dir, save_scenario, split_task, ChannelConfig};

fn main() -> metaloc::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("metaloc-scenarios"));
    let count: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    std::fs::create_dir_all(&dir).map_err(|e| metaloc::Error::Data(e.to_string()))?;

    let cfg = ChannelConfig::default();
    for s in generate_suite(count, 1, &cfg)? {
        save_scenario(&s, &dir.join(format!("{}.json", s.id)))?;
    }
    let suite = load_dir(&dir)?;
    println!("{} scenarios in {}", suite.len(), dir.display());
    println!("grid {}x{} at {} cm, centroid {:?}", cfg.grid.rows, cfg.grid.cols, cfg.grid.spacing_cm, cfg.grid.centroid());

    for s in &suite {
        let per_rp = s.mean_amplitude_per_rp();
        let lo = per_rp.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = per_rp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{:<12} {} samples, mean amplitude per point {lo:6.2} .. {hi:6.2}", s.id, s.samples.len());
    }

    let split = split_task(&suite[0], 5, 3)?;
    println!(
        "5-shot split of {}: {} support, {} query samples",
        suite[0].id,
        split.support.len(),
        split.query.len()
    );
    Ok(())
}
