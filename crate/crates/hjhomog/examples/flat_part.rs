//! The flat part of the effective Hamiltonian: oscillation in the
//! coupling wipes out the p-dependence on a whole interval.
//!
//!     cargo run --example flat_part

use hjhomog::cell::CellProblem;
use hjhomog::efftable::{effective_flat_width, MIN_AUDIT_N};
use hjhomog::harness::cosine_eikonal_system;

fn main() -> hjhomog::Result<()> {
    let sys = cosine_eikonal_system();
    let cm = sys.coupling_matrix().expect("weakly coupled");
    let r = [1.0];
    let width = effective_flat_width(&cm, 0, &r, MIN_AUDIT_N)?;
    println!("flat width at r = 1: {width}  (max c11 - mean c11 = 3 - 2)");
    println!();
    println!("{:>6} {:>12} {:>8}", "p", "hbar", "flat?");
    for k in 0..13 {
        let p = -1.5 + 0.25 * k as f64;
        let mut prob = CellProblem::new(&sys, 0, vec![0.0], r.to_vec(), vec![p])?;
        prob.n = 128;
        let solve = prob.effective_hamiltonian()?;
        let flat = if p.abs() <= width { "yes" } else { "" };
        println!("{:>6.2} {:>12.6} {:>8}", p, solve.lambda, flat);
    }
    println!("\nthe graph sits at 3 across |p| <= {width} and grows as |p| + 2 outside");
    Ok(())
}
