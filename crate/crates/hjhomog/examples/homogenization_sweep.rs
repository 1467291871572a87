//! The convergence study: oscillating solutions approach the
//! homogenized one as eps shrinks.
//!
//!     cargo run --release --example homogenization_sweep

use hjhomog::harness::{run_convergence, ExperimentConfig};

fn main() -> hjhomog::Result<()> {
    let cfg = ExperimentConfig::default_config();
    println!(
        "sweep: eps {:?}, T = {}, u0 = {:?}, {} cells per period",
        cfg.eps, cfg.t_end, cfg.u0, cfg.cells_per_eps
    );
    let report = run_convergence(&cfg)?;

    println!(
        "\nhomogenized baseline: n = {} ({:.1} ms), measured on n = {}",
        report.homogenized_n, report.homogenized_runtime_ms, report.measurement_n
    );
    println!(
        "{:>8} {:>6} {:>12} {:>8} {:>10}",
        "eps", "n", "error", "ratio", "ms"
    );
    for k in 0..report.eps_list.len() {
        let ratio = report
            .ratios
            .get(k)
            .map(|r| format!("{r:.3}"))
            .unwrap_or_default();
        println!(
            "{:>8} {:>6} {:>12.6} {:>8} {:>10.1}",
            report.eps_list[k], report.ns[k], report.errors[k], ratio, report.runtimes_ms[k]
        );
    }
    println!(
        "\nstrictly decreasing: {}   error({}) / error({}) = {:.3}",
        report.strictly_decreasing(),
        report.eps_list.last().unwrap(),
        report.eps_list[0],
        report.last_over_first()
    );
    println!("final-state slopes: {:?}", report.slopes);
    Ok(())
}
