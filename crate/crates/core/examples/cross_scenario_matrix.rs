//! Trains one model per scenario and tests it on every scenario, with and
//! without a k-shot fine-tune on the tested scenario. Models transfer poorly
//! across scenarios until they see a few of the target's samples.

use metaloc::eval::cross_scenario_matrix;
use metaloc::meta::MetaConfig;
use metaloc::tasks::{generate_suite, ChannelConfig};

fn main() -> metaloc::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let scenarios = generate_suite(n, 1, &ChannelConfig::default())?;
    let cfg = MetaConfig::default();
    for k in [0, cfg.shots] {
        let m = cross_scenario_matrix(&scenarios, k, &cfg)?;
        println!("fine-tune shots {k}: rows train on, columns test on (mean error, cm)");
        for row in &m.mean_error_cm {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:6.1}")).collect();
            println!("  {}", cells.join(""));
        }
        println!(
            "  diagonal {:.1} cm, off-diagonal {:.1} cm, ratio {:.2}\n",
            m.diagonal_mean(),
            m.off_diagonal_mean(),
            m.off_diagonal_mean() / m.diagonal_mean()
        );
    }
    Ok(())
}
