//! Runs the ablation rows over a reduced crossing suite.
//!
//! `cargo run --release --example ablation_study -- [scenarios]`

use cotrack::experiment::{ablation_checks, run_ablation, SuiteConfig, HEAVY_BIN};
use cotrack::metrics::pretty_table;
use cotrack::weights::ModelWeights;

fn main() -> cotrack::Result<()> {
    let scenarios = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = SuiteConfig { scenarios, ..SuiteConfig::default() };
    let reports = run_ablation(&ModelWeights::pretrained(), &cfg)?;
    let rows: Vec<_> = reports.iter().map(|r| (r.name.clone(), r.eval)).collect();
    print!("{}", pretty_table(&rows));
    for r in &reports {
        println!("{:<24} tracked through {:>3}/{:<3} heavy {:.3}", r.name, r.tracked, r.targets, r.pooled_fraction(HEAVY_BIN));
    }
    if let Some(c) = ablation_checks(&reports, 0.15) {
        println!("tracked-through gain over disabled {:+.1} pp", 100.0 * c.tracked_gain);
    }
    Ok(())
}
