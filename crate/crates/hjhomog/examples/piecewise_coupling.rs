//! Homogenization does not commute with freezing the unknown: the
//! effective dependence on r is piecewise linear with three slopes,
//! not the single slope naive averaging would give.
//!
//!     cargo run --example piecewise_coupling

use hjhomog::cell::CellProblem;
use hjhomog::efftable::{closed_form_piecewise_r1, MIN_AUDIT_N};
use hjhomog::hamiltonians::Coefficient;
use hjhomog::harness::half_cosine_system;

fn main() -> hjhomog::Result<()> {
    let sys = half_cosine_system();
    let c11 = Coefficient::parse("1 + cos(2*pi*y)/2")?;
    let p = 1.0;

    // Slopes: min c11 = 0.5 for r << 0, mean c11 = 1 in the middle
    // band |r| <= 2|p|, max c11 = 1.5 for r >> 0.
    println!("H = |p| + (1 + cos(2pi y)/2) u at p = {p}");
    println!("{:>6} {:>12} {:>12} {:>10}", "r", "lambda", "piecewise", "error");
    for r1 in [-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0] {
        let prob = CellProblem::new(&sys, 0, vec![0.0], vec![r1], vec![p])?;
        let solve = prob.effective_hamiltonian()?;
        let exact = closed_form_piecewise_r1(&c11, r1, p, MIN_AUDIT_N)?;
        println!(
            "{:>6} {:>12.6} {:>12.6} {:>10.2e}",
            r1,
            solve.lambda,
            exact,
            (solve.lambda - exact).abs()
        );
    }
    println!("\nkinks at r = -2 and r = 2; between them the oscillation averages out");
    Ok(())
}
