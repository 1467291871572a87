//! The discrete scheme is monotone: the positive part of the gap
//! between two solutions never grows past its initial value.
//!
//!     cargo run --example comparison_principle

use hjhomog::evolve::{check_comparison, EvolutionSource};
use hjhomog::grids::{GridField, TorusGrid};
use hjhomog::harness::exchange_pair_system;

fn main() -> hjhomog::Result<()> {
    let sys = exchange_pair_system();
    let grid = TorusGrid::new(1, 128, 1.0)?;
    let tau = std::f64::consts::TAU;

    // Crossing data: neither field dominates the other at t = 0.
    let low = GridField::sample_system(
        grid,
        &[
            &|x: &[f64]| (tau * x[0]).sin(),
            &|x: &[f64]| 0.5 * (2.0 * tau * x[0]).cos(),
        ],
    )?;
    let high = GridField::sample_system(
        grid,
        &[
            &|x: &[f64]| 0.8 * (tau * x[0]).cos(),
            &|x: &[f64]| 0.3 + 0.4 * (tau * x[0]).sin(),
        ],
    )?;

    let outcome = check_comparison(
        EvolutionSource::Oscillating {
            system: &sys,
            eps: 0.25,
        },
        low,
        high,
        0.4,
        vec![0.1, 0.2, 0.3, 0.4],
    )?;

    println!("initial gap positive part: {:.6}", outcome.initial_gap_plus);
    println!("{:>6} {:>12}", "t", "gap(t)");
    for (t, g) in &outcome.gap_history {
        println!("{t:>6} {g:>12.6}");
    }
    println!(
        "\nworst excess over the initial gap: {:.3e}  ({} steps, passed: {})",
        outcome.worst_excess, outcome.steps, outcome.passed
    );
    Ok(())
}
