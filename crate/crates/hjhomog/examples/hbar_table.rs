//! Build an effective-Hamiltonian table over (r, p), save it, load it
//! back, and query between the nodes.
//!
//!     cargo run --example hbar_table

use hjhomog::efftable::{build_table, AxisCoord, AxisSpec, HBarTable, TableBuildSpec};
use hjhomog::harness::cosine_eikonal_system;

fn main() -> hjhomog::Result<()> {
    let sys = cosine_eikonal_system();
    let axes = vec![
        AxisSpec::frozen(AxisCoord::X(0), 0.0),
        AxisSpec {
            coord: AxisCoord::R(0),
            min: -2.0,
            max: 2.0,
            count: 9,
        },
        AxisSpec {
            coord: AxisCoord::P(0),
            min: -3.0,
            max: 3.0,
            count: 13,
        },
    ];
    let mut spec = TableBuildSpec::new(&sys, vec![0], axes);
    spec.cell_n = 128;
    let table = build_table(&spec)?;
    println!("built {} nodes", table.node_count());

    let dir = std::env::temp_dir().join("hjhomog_table_example");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("hbar.tab");
    table.save(&path)?;
    let loaded = HBarTable::load(&path)?;
    println!("saved and reloaded from {}", path.display());

    // Queries off the lattice interpolate multilinearly; the frozen x
    // axis accepts any value within tolerance of its pin.
    let x = [0.0];
    println!("\n{:>6} {:>6} {:>12}", "r", "p", "hbar");
    for (r1, p1) in [(1.0, 0.0), (1.0, 0.25), (0.75, 2.5), (-1.3, 1.1)] {
        let v = loaded.query(0, &x, &[r1], &[p1])?;
        println!("{r1:>6} {p1:>6} {v:>12.6}");
    }

    let err = loaded.query(0, &x, &[5.0], &[0.0]).unwrap_err();
    println!("\nout-of-hull query errors as it should: {err}");
    Ok(())
}
