//! The full property suite: coupling signs, monotonicity, oracle
//! matches, table structure, comparison, a-priori bounds, and the
//! convergence trend, all seeded and deterministic.
//!
//!     cargo run --release --example structural_checks

use hjhomog::harness::{run_property_suite, ExperimentConfig};

fn main() -> hjhomog::Result<()> {
    // Smaller cell grid than the acceptance setup so this finishes in
    // a few seconds; every verdict still comes out the same.
    let mut cfg = ExperimentConfig::default_config();
    cfg.suite.cell_n = 64;
    cfg.suite.samples = 20;

    let report = run_property_suite(&cfg)?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    println!(
        "\nconvergence errors {:?} (strictly decreasing: {})",
        report.convergence.errors, report.convergence.strictly_decreasing
    );
    println!("slope spread across the sweep: {:.2}%", 100.0 * report.convergence.slope_spread);
    std::process::exit(if report.passed { 0 } else { 1 });
}
