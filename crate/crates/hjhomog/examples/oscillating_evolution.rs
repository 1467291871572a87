//! Evolve the oscillating system next to its homogenized limit and
//! print both profiles side by side.
//!
//!     cargo run --release --example oscillating_evolution

use hjhomog::evolve::{EvolutionProblem, EvolutionSource};
use hjhomog::grids::TorusGrid;
use hjhomog::harness::{cosine_eikonal_system, ExperimentConfig, HbarSource};

fn main() -> hjhomog::Result<()> {
    let cfg = ExperimentConfig::default_config();
    let sys = cosine_eikonal_system();
    let eps = 0.1;
    let n = cfg.n_for_eps(eps);
    let grid = TorusGrid::new(1, n, 1.0)?;

    let mut osc = EvolutionProblem::new(
        EvolutionSource::Oscillating { system: &sys, eps },
        cfg.u0_field(grid)?,
        cfg.t_end,
    )?;
    osc.snapshot_times = vec![0.25];
    let osc_run = osc.solve()?;

    assert!(matches!(cfg.hbar, HbarSource::ClosedForm));
    let provider = cfg.hbar_provider(&sys)?;
    let hom_run = EvolutionProblem::new(
        EvolutionSource::Homogenized {
            provider: &provider,
        },
        cfg.u0_field(grid)?,
        cfg.t_end,
    )?
    .solve()?;

    println!(
        "eps = {eps}, n = {n}: {} oscillating steps (theta {}), {} homogenized steps",
        osc_run.steps, osc_run.theta, hom_run.steps
    );
    println!("\n{:>8} {:>12} {:>12}", "x", "u_eps(T)", "u_hom(T)");
    for k in (0..n).step_by(n / 16) {
        let x = grid.coords(k)[0];
        println!(
            "{x:>8.4} {:>12.6} {:>12.6}",
            osc_run.final_state.component(0)[k],
            hom_run.final_state.component(0)[k]
        );
    }
    let gap = osc_run.final_state.sup_diff(&hom_run.final_state)?;
    println!("\nsup gap at T = {}: {gap:.4}  (shrinks with eps)", cfg.t_end);
    println!(
        "a-priori sup bound margin: {:.3e}",
        osc_run.linfini_margin(cfg.t_end)
    );
    Ok(())
}
