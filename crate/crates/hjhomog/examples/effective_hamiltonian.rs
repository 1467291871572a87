//! Solve one ergodic cell problem and compare the effective value
//! against the exact columnwise formula.
//!
//!     cargo run --example effective_hamiltonian

use hjhomog::cell::CellProblem;
use hjhomog::efftable::{closed_form_eikonal_weakly_coupled, MIN_AUDIT_N};
use hjhomog::harness::cosine_eikonal_system;

fn main() -> hjhomog::Result<()> {
    let sys = cosine_eikonal_system();
    let cm = sys.coupling_matrix().expect("weakly coupled");

    println!("H = |p| + (2 + cos 2pi y) u, frozen at r = 1");
    println!("{:>6} {:>12} {:>12} {:>10} {:>8}", "p", "lambda", "exact", "error", "iters");
    for p in [0.0, 0.5, 1.0, 1.5, 3.0] {
        let prob = CellProblem::new(&sys, 0, vec![0.0], vec![1.0], vec![p])?;
        let solve = prob.effective_hamiltonian()?;
        let exact = closed_form_eikonal_weakly_coupled(&cm, 0, &[1.0], &[p], MIN_AUDIT_N)?;
        println!(
            "{:>6} {:>12.6} {:>12.6} {:>10.2e} {:>8}",
            p,
            solve.lambda,
            exact,
            (solve.lambda - exact).abs(),
            solve.iterations
        );
    }

    // The corrector carries the fast oscillation the effective value
    // absorbed; at p = 0 it solves |v'| = 3 - (2 + cos 2pi y).
    let prob = CellProblem::new(&sys, 0, vec![0.0], vec![1.0], vec![0.0])?;
    let solve = prob.effective_hamiltonian()?;
    let sup = solve.corrector.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    println!("\ncorrector at p = 0: sup {:.4}, residual {:.2e}", sup, solve.residual_sup);
    Ok(())
}
