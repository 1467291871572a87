//! The ten acceptance criteria, each with its pinned tolerance and
//! runtime budget. Every test prints one verdict line; run with
//! `--nocapture` to see them all.

use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hjhomog::cell::CellProblem;
use hjhomog::efftable::{
    build_table, closed_form_constant_coupling, closed_form_eikonal_weakly_coupled,
    closed_form_piecewise_r1, effective_flat_width, AxisCoord, AxisSpec, BaseEffective,
    TableBuildSpec, MIN_AUDIT_N,
};
use hjhomog::evolve::{check_comparison, EvolutionSource};
use hjhomog::grids::{GridField, TorusGrid};
use hjhomog::hamiltonians::{BaseH, Coefficient, Component, HamiltonianSystem};
use hjhomog::harness::{
    cosine_eikonal_system, exchange_pair_system, half_cosine_system, run_convergence,
    ExperimentConfig,
};

fn verdict(criterion: &str, ok: bool, detail: String) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{criterion}: {detail}");
}

fn within(start: Instant, budget: Duration) -> (bool, f64) {
    let elapsed = start.elapsed();
    (elapsed <= budget, elapsed.as_secs_f64())
}

#[test]
fn c1_closed_form_oracle_match() {
    let start = Instant::now();
    let sys = cosine_eikonal_system();
    let cm = sys.coupling_matrix().expect("weakly coupled");
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let r1 = rng.gen_range(-3.0..=3.0);
        let p1 = rng.gen_range(-4.0..=4.0);
        let mut prob = CellProblem::new(&sys, 0, vec![0.0], vec![r1], vec![p1]).unwrap();
        prob.n = 256;
        prob.alphas = vec![0.02, 0.01];
        let solve = prob.effective_hamiltonian().unwrap();
        let exact = closed_form_eikonal_weakly_coupled(&cm, 0, &[r1], &[p1], MIN_AUDIT_N).unwrap();
        worst = worst.max((solve.lambda - exact).abs());
    }
    let (in_time, secs) = within(start, Duration::from_secs(30));
    verdict(
        "C1 closed-form oracle match",
        worst <= 2e-2 && in_time,
        format!("worst |lambda - exact| = {worst:.2e} over 20 samples, {secs:.1}s"),
    );
}

#[test]
fn c2_trivial_corrector_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_lambda = 0.0f64;
    let mut worst_corrector = 0.0f64;
    for _ in 0..10 {
        let c = rng.gen_range(0.5..=2.0);
        let r1 = rng.gen_range(-3.0..=3.0);
        let p1 = rng.gen_range(-4.0..=4.0);
        let sys = HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::Const(c)],
            }],
        )
        .unwrap();
        let mut prob = CellProblem::new(&sys, 0, vec![0.0], vec![r1], vec![p1]).unwrap();
        prob.n = 64;
        let solve = prob.effective_hamiltonian().unwrap();
        let exact = sys.eval(0, &[0.0], &[0.0], &[r1], &[p1]).unwrap();
        worst_lambda = worst_lambda.max((solve.lambda - exact).abs());
        let wsup = solve.corrector.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        worst_corrector = worst_corrector.max(wsup);
    }
    let (in_time, secs) = within(start, Duration::from_secs(5));
    verdict(
        "C2 trivial-corrector exactness",
        worst_lambda <= 1e-6 && worst_corrector <= 1e-6 && in_time,
        format!(
            "worst |lambda - H| = {worst_lambda:.2e}, worst corrector sup = {worst_corrector:.2e}, {secs:.1}s"
        ),
    );
}

#[test]
fn c3_constant_coupling_decoupling() {
    let start = Instant::now();
    let sys = exchange_pair_system();
    let cm = sys.coupling_matrix().expect("weakly coupled");
    let base = |p: &[f64]| p[0].abs();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let r = vec![rng.gen_range(-3.0..=3.0), rng.gen_range(-3.0..=3.0)];
        let p1 = rng.gen_range(-4.0..=4.0);
        for i in 0..2 {
            let mut prob = CellProblem::new(&sys, i, vec![0.0], r.clone(), vec![p1]).unwrap();
            prob.n = 64;
            let solve = prob.effective_hamiltonian().unwrap();
            let exact = closed_form_constant_coupling(
                &BaseEffective::ClosedForm(&base),
                &cm,
                i,
                &r,
                &[p1],
            )
            .unwrap();
            worst = worst.max((solve.lambda - exact).abs());
        }
    }
    let (in_time, secs) = within(start, Duration::from_secs(60));
    verdict(
        "C3 constant-coupling decoupling",
        worst <= 2e-2 && in_time,
        format!("worst error {worst:.2e} over 20 samples x 2 components, {secs:.1}s"),
    );
}

#[test]
fn c4_piecewise_branch_values() {
    let start = Instant::now();
    let sys = half_cosine_system();
    let c11 = Coefficient::parse("1 + cos(2*pi*y)/2").unwrap();
    let mut worst = 0.0f64;
    for (r1, want) in [(-4.0, -2.0), (0.0, 1.0), (4.0, 6.0)] {
        let mut prob = CellProblem::new(&sys, 0, vec![0.0], vec![r1], vec![1.0]).unwrap();
        prob.n = 256;
        let solve = prob.effective_hamiltonian().unwrap();
        worst = worst.max((solve.lambda - want).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..10 {
        let r1 = rng.gen_range(-5.0..=5.0);
        let mut prob = CellProblem::new(&sys, 0, vec![0.0], vec![r1], vec![1.0]).unwrap();
        prob.n = 256;
        let solve = prob.effective_hamiltonian().unwrap();
        let exact = closed_form_piecewise_r1(&c11, r1, 1.0, MIN_AUDIT_N).unwrap();
        worst = worst.max((solve.lambda - exact).abs());
    }
    let (in_time, secs) = within(start, Duration::from_secs(60));
    verdict(
        "C4 piecewise branch values",
        worst <= 2e-2 && in_time,
        format!("worst error {worst:.2e} over 3 pinned + 10 random r, {secs:.1}s"),
    );
}

fn slice_table() -> hjhomog::efftable::HBarTable {
    let sys = cosine_eikonal_system();
    let axes = vec![
        AxisSpec::frozen(AxisCoord::X(0), 0.0),
        AxisSpec::frozen(AxisCoord::R(0), 1.0),
        AxisSpec {
            coord: AxisCoord::P(0),
            min: -1.5,
            max: 1.5,
            count: 31,
        },
    ];
    let mut spec = TableBuildSpec::new(&sys, vec![0], axes);
    spec.cell_n = 256;
    build_table(&spec).unwrap()
}

#[test]
fn c5_flat_part_of_the_slice() {
    let start = Instant::now();
    let table = slice_table();
    let x = [0.0];
    let r = [1.0];
    let mut worst_flat = 0.0f64;
    let mut edge_min = f64::INFINITY;
    for k in 0..31 {
        let p1 = -1.5 + 0.1 * k as f64;
        let v = table.query(0, &x, &r, &[p1]).unwrap();
        if p1.abs() <= 0.9 + 1e-9 {
            worst_flat = worst_flat.max((v - 3.0).abs());
        }
        if (p1.abs() - 1.5).abs() <= 1e-9 {
            edge_min = edge_min.min(v);
        }
    }
    let (in_time, secs) = within(start, Duration::from_secs(30));
    verdict(
        "C5 flat part",
        worst_flat <= 2e-2 && edge_min >= 3.05 && in_time,
        format!(
            "worst |hbar - 3| = {worst_flat:.2e} on |p| <= 0.9, hbar(+-1.5) >= {edge_min:.3}, {secs:.1}s"
        ),
    );
}

#[test]
fn c6_effective_structure_suite() {
    let start = Instant::now();
    let sys = cosine_eikonal_system();
    let cm = sys.coupling_matrix().expect("weakly coupled");
    let (r_min, r_max, r_count) = (-3.0, 3.0, 13usize);
    let (p_min, p_max, p_count) = (-4.0, 4.0, 17usize);
    let axes = vec![
        AxisSpec::frozen(AxisCoord::X(0), 0.0),
        AxisSpec {
            coord: AxisCoord::R(0),
            min: r_min,
            max: r_max,
            count: r_count,
        },
        AxisSpec {
            coord: AxisCoord::P(0),
            min: p_min,
            max: p_max,
            count: p_count,
        },
    ];
    let mut spec = TableBuildSpec::new(&sys, vec![0], axes);
    spec.cell_n = 256;
    let table = build_table(&spec).unwrap();
    let x = [0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(106);

    let mut worst_monotone = f64::INFINITY;
    for _ in 0..50 {
        let a = rng.gen_range(r_min..=r_max);
        let b = rng.gen_range(r_min..=r_max);
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let p1 = rng.gen_range(p_min..=p_max);
        let vh = table.query(0, &x, &[hi], &[p1]).unwrap();
        let vl = table.query(0, &x, &[lo], &[p1]).unwrap();
        worst_monotone = worst_monotone.min(vh - vl);
    }

    let mut worst_convex = 0.0f64;
    for _ in 0..50 {
        let r1 = rng.gen_range(r_min..=r_max);
        let pa = rng.gen_range(p_min..=p_max);
        let pb = rng.gen_range(p_min..=p_max);
        let va = table.query(0, &x, &[r1], &[pa]).unwrap();
        let vb = table.query(0, &x, &[r1], &[pb]).unwrap();
        let vm = table.query(0, &x, &[r1], &[0.5 * (pa + pb)]).unwrap();
        worst_convex = worst_convex.max(vm - 0.5 * (va + vb));
    }

    let mut rays = 0usize;
    let mut coercive = true;
    let r_step = (r_max - r_min) / (r_count - 1) as f64;
    for k in 0..r_count {
        let r1 = r_min + r_step * k as f64;
        let width = effective_flat_width(&cm, 0, &[r1], MIN_AUDIT_N).unwrap();
        if p_max.min(-p_min) <= width {
            continue;
        }
        rays += 1;
        let center = table.query(0, &x, &[r1], &[0.0]).unwrap();
        for pb in [p_min, p_max] {
            let edge = table.query(0, &x, &[r1], &[pb]).unwrap();
            if edge <= center {
                coercive = false;
            }
        }
    }

    let (in_time, secs) = within(start, Duration::from_secs(120));
    verdict(
        "C6 structural suite",
        worst_monotone >= -1e-3 && worst_convex <= 2e-2 && coercive && rays > 0 && in_time,
        format!(
            "monotonicity margin {worst_monotone:.2e}, convexity slack {worst_convex:.2e}, \
             {rays} coercive rays, {secs:.1}s"
        ),
    );
}

#[test]
fn c7_discrete_comparison() {
    let start = Instant::now();
    let sys = exchange_pair_system();
    let grid = TorusGrid::new(1, 128, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let tau = std::f64::consts::TAU;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..5 {
        let mut draw = |grid: TorusGrid| {
            let mut f = GridField::zeros(grid, 2).unwrap();
            for c in 0..2 {
                let a = rng.gen_range(0.2..1.0);
                let k = rng.gen_range(1..=3) as f64;
                let phase = rng.gen_range(0.0..tau);
                let shift = rng.gen_range(-0.5..0.5);
                let comp = f.component_mut(c);
                for node in 0..grid.node_count() {
                    let x = grid.coords(node)[0];
                    comp[node] = a * (tau * k * x + phase).sin() + shift;
                }
            }
            f
        };
        let low = draw(grid);
        let high = draw(grid);
        let outcome = check_comparison(
            EvolutionSource::Oscillating {
                system: &sys,
                eps: 0.25,
            },
            low,
            high,
            0.3,
            vec![0.1, 0.2, 0.3],
        )
        .unwrap();
        // The bound must hold at every recorded time, not only at the end.
        for &(_, gap) in &outcome.gap_history {
            worst = worst.max(gap - outcome.initial_gap_plus);
        }
        worst = worst.max(outcome.worst_excess);
    }
    let (in_time, secs) = within(start, Duration::from_secs(60));
    verdict(
        "C7 discrete comparison",
        worst <= 1e-6 && in_time,
        format!("worst gap excess {worst:.2e} over 5 pairs, {secs:.1}s"),
    );
}

#[test]
fn c8_a_priori_bounds_and_slope_persistence() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default_config();
    let report = run_convergence(&cfg).unwrap();
    let worst_margin = report
        .linfini_margins
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let spread = report.slope_spread();
    let (_, secs) = within(start, Duration::from_secs(600));
    verdict(
        "C8 a-priori bounds",
        worst_margin >= 0.0 && spread <= 0.10,
        format!(
            "worst sup-bound margin {worst_margin:.2e}, slope spread {:.2}% across eps, {secs:.1}s",
            100.0 * spread
        ),
    );
}

#[test]
fn c9_homogenization_convergence() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default_config();
    let report = run_convergence(&cfg).unwrap();
    let decreasing = report.strictly_decreasing();
    let ratio = report.last_over_first();
    let (in_time, secs) = within(start, Duration::from_secs(600));
    verdict(
        "C9 homogenization convergence",
        decreasing && ratio <= 0.6 && in_time,
        format!(
            "errors {:?}, last/first = {ratio:.3}, {secs:.1}s",
            report.errors
        ),
    );
}

#[test]
fn c10_verify_is_deterministic() {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_hjhomog");
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("run{run}"));
        let status = std::process::Command::new(bin)
            .args(["verify", "--seed", "7", "--out-dir"])
            .arg(&out_dir)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "verify run {run} failed");
        reports.push(std::fs::read(out_dir.join("verify_report.json")).unwrap());
    }
    let (_, secs) = within(start, Duration::from_secs(600));
    verdict(
        "C10 verify determinism",
        reports[0] == reports[1],
        format!(
            "two seeded verify runs, {} bytes each, identical: {}, {secs:.1}s",
            reports[0].len(),
            reports[0] == reports[1]
        ),
    );
}
