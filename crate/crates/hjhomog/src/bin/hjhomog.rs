//! Command-line front end. Thin by design: every subcommand parses
//! flags, calls one library entry point, prints JSON to stdout, and
//! maps check failures to a nonzero exit code.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hjhomog::cell::CellProblem;
use hjhomog::efftable::{build_table, complete_axes, AxisSpec, HBarTable, TableBuildSpec};
use hjhomog::error::{Error, Result};
use hjhomog::evolve::{EvolutionProblem, EvolutionSource, HbarProvider};
use hjhomog::grids::{GridField, TorusGrid};
use hjhomog::harness::{
    emit_plot_data, run_convergence, run_property_suite, write_convergence_outputs,
    ConvergenceReport, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "hjhomog",
    about = "Effective Hamiltonians and monotone evolution for weakly coupled periodic HJ systems",
    version
)]
struct Cli {
    /// Experiment config JSON; defaults to the built-in reference setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's suite seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for table builds.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one ergodic cell problem and print its diagnostics.
    Cell(CellArgs),
    /// Build an effective-Hamiltonian lookup table.
    Table(TableArgs),
    /// Run one evolution (oscillating or homogenized) and write CSV fields.
    Evolve(EvolveArgs),
    /// Run the eps-sweep convergence study and write its reports.
    Converge,
    /// Run the full property suite; exit 0 iff everything passes.
    Verify,
    /// Re-emit plot CSVs from a stored convergence report.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct CellArgs {
    /// 1-based equation index.
    #[arg(long, default_value_t = 1)]
    component: usize,
    /// Slow position, comma-separated.
    #[arg(long, default_value = "0")]
    x: String,
    /// Frozen unknown r, comma-separated, one entry per component.
    #[arg(long, default_value = "0")]
    r: String,
    /// Frozen momentum p, comma-separated.
    #[arg(long, default_value = "0")]
    p: String,
    /// Cell-grid points per axis.
    #[arg(long)]
    n: Option<usize>,
    /// Decreasing discount schedule, comma-separated.
    #[arg(long)]
    alphas: Option<String>,
    /// Sup-residual target for each discounted solve.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the corrector as a GridField CSV here.
    #[arg(long)]
    corrector_out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// Axis spec `name:min:max:count`, repeatable; omitted coordinates
    /// freeze at 0.
    #[arg(long = "axes", required = true)]
    axes: Vec<String>,
    /// Binary table output path.
    #[arg(long)]
    out: PathBuf,
    /// Also export the nodes as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// 1-based component indices, comma-separated; default all.
    #[arg(long)]
    components: Option<String>,
    /// Cell-grid points per axis for each node solve.
    #[arg(long)]
    cell_n: Option<usize>,
}

#[derive(Args)]
struct EvolveArgs {
    /// Oscillation scale, or `none` for the homogenized system.
    #[arg(long)]
    eps: String,
    /// Domain length per axis.
    #[arg(long = "L", default_value_t = 1.0)]
    len: f64,
    /// Grid points per axis.
    #[arg(long)]
    n: usize,
    /// Final time.
    #[arg(long = "T")]
    t_end: f64,
    #[arg(long)]
    cfl: Option<f64>,
    /// Initial-data expression in x, repeatable, one per component;
    /// default: the config's u0.
    #[arg(long)]
    u0: Vec<String>,
    /// Comma-separated times to record; each lands on an exact step.
    #[arg(long)]
    snapshots: Option<String>,
    /// Final-state CSV path; snapshots go to `<stem>_t<time>.csv`.
    #[arg(long)]
    out: PathBuf,
    /// H-bar table for homogenized runs; default: the config's source.
    #[arg(long)]
    hbar_table: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Convergence report JSON; default `<out-dir>/convergence_report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{what} entry `{s}`: {e}")))
        })
        .collect()
}

fn parse_index_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("{what} entry `{s}`: {e}")))
        })
        .collect()
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_config(),
    };
    if let Some(seed) = cli.seed {
        cfg.suite.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(w) = cli.workers {
        cfg.suite.workers = w.max(1);
    }
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_cell(cfg: &ExperimentConfig, args: &CellArgs) -> Result<bool> {
    let sys = cfg.system()?;
    if args.component == 0 || args.component > sys.m() {
        return Err(Error::Config(format!(
            "--component is 1-based; {} is outside 1..={}",
            args.component,
            sys.m()
        )));
    }
    let x = parse_f64_list(&args.x, "--x")?;
    let r = parse_f64_list(&args.r, "--r")?;
    let p = parse_f64_list(&args.p, "--p")?;
    let mut prob = CellProblem::new(&sys, args.component - 1, x, r, p)?;
    prob.n = args.n.unwrap_or(cfg.suite.cell_n);
    if let Some(a) = &args.alphas {
        prob.alphas = parse_f64_list(a, "--alphas")?;
    } else {
        prob.alphas = cfg.suite.alphas.clone();
    }
    if let Some(tol) = args.tol {
        prob.residual_tol = tol;
    }
    let solve = prob.effective_hamiltonian()?;
    if let Some(path) = &args.corrector_out {
        let grid = TorusGrid::new(sys.dim(), solve.n, 1.0)?;
        GridField::from_values(grid, 1, solve.corrector.clone())?.save_csv(path)?;
    }
    print_json(&json!({
        "lambda": solve.lambda,
        "lambda_alphas": solve.lambda_alphas,
        "n": solve.n,
        "iterations": solve.iterations,
        "residual_sup": solve.residual_sup,
        "theta": solve.theta,
        "zero_gradient_bound": solve.zero_gradient_bound,
        "coercivity_radius": solve.coercivity_radius,
    }))?;
    Ok(true)
}

fn run_table(cfg: &ExperimentConfig, args: &TableArgs) -> Result<bool> {
    let sys = cfg.system()?;
    let parsed: Vec<AxisSpec> = args
        .axes
        .iter()
        .map(|s| AxisSpec::parse_spec(s))
        .collect::<Result<_>>()?;
    let axes = complete_axes(sys.m(), sys.dim(), &parsed)?;
    let components = match &args.components {
        Some(list) => {
            let one_based = parse_index_list(list, "--components")?;
            let mut out = Vec::with_capacity(one_based.len());
            for c in one_based {
                if c == 0 || c > sys.m() {
                    return Err(Error::Config(format!(
                        "--components is 1-based; {c} is outside 1..={}",
                        sys.m()
                    )));
                }
                out.push(c - 1);
            }
            out
        }
        None => (0..sys.m()).collect(),
    };
    let mut spec = TableBuildSpec::new(&sys, components, axes);
    spec.cell_n = args.cell_n.unwrap_or(cfg.suite.cell_n);
    spec.alphas = cfg.suite.alphas.clone();
    spec.workers = cfg.suite.workers;
    let table = build_table(&spec)?;
    table.save(&args.out)?;
    if let Some(csv) = &args.csv {
        table.export_csv(csv)?;
    }
    print_json(&json!({
        "out": args.out,
        "csv": args.csv,
        "nodes": table.node_count(),
        "components": table.components().iter().map(|c| c + 1).collect::<Vec<_>>(),
        "axes": table
            .axes()
            .iter()
            .map(|a| json!({
                "name": a.coord.name(),
                "min": a.min,
                "max": a.max,
                "count": a.count,
            }))
            .collect::<Vec<_>>(),
    }))?;
    Ok(true)
}

fn snapshot_path(out: &Path, t: f64) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "field".into());
    let ext = out
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    out.with_file_name(format!("{stem}_t{t}.{ext}"))
}

fn run_evolve(cfg: &ExperimentConfig, args: &EvolveArgs) -> Result<bool> {
    let sys = cfg.system()?;
    let grid = TorusGrid::new(sys.dim(), args.n, args.len)?;

    let u0 = if args.u0.is_empty() {
        let mut data_cfg = cfg.clone();
        data_cfg.u0 = cfg.u0.clone();
        data_cfg.u0_field(grid)?
    } else {
        let mut data_cfg = cfg.clone();
        data_cfg.u0 = args.u0.clone();
        data_cfg.validate()?;
        data_cfg.u0_field(grid)?
    };

    let eps_text = args.eps.trim();
    let provider;
    let source = if eps_text.eq_ignore_ascii_case("none") {
        provider = match &args.hbar_table {
            Some(path) => HbarProvider::from_table(HBarTable::load(path)?)?,
            None => cfg.hbar_provider(&sys)?,
        };
        EvolutionSource::Homogenized {
            provider: &provider,
        }
    } else {
        let eps: f64 = eps_text
            .parse()
            .map_err(|e| Error::Config(format!("--eps `{eps_text}`: {e}")))?;
        EvolutionSource::Oscillating { system: &sys, eps }
    };

    let mut prob = EvolutionProblem::new(source, u0, args.t_end)?;
    prob.cfl = args.cfl.unwrap_or(cfg.cfl);
    if let Some(times) = &args.snapshots {
        prob.snapshot_times = parse_f64_list(times, "--snapshots")?;
    }
    let run = prob.solve()?;

    run.final_state.save_csv(&args.out)?;
    let mut snapshot_files = Vec::new();
    for (t, field) in &run.snapshots {
        let path = snapshot_path(&args.out, *t);
        field.save_csv(&path)?;
        snapshot_files.push(json!({ "t": t, "path": path }));
    }
    print_json(&json!({
        "out": args.out,
        "snapshots": snapshot_files,
        "steps": run.steps,
        "dt_min": run.dt_min,
        "dt_max": run.dt_max,
        "theta": run.theta,
        "sup_initial": run.sup_initial,
        "sup_final": run.sup_final,
        "sup_running": run.sup_running,
        "linfini_c": run.linfini_c,
        "linfini_margin": run.linfini_margin(args.t_end),
        "max_slope_final": run.max_slope_final,
    }))?;
    Ok(run.linfini_margin(args.t_end) >= 0.0)
}

fn run_converge(cfg: &ExperimentConfig) -> Result<bool> {
    let report = run_convergence(cfg)?;
    let files = write_convergence_outputs(&report, &cfg.out_dir)?;
    print_json(&json!({
        "eps": report.eps_list,
        "errors": report.errors,
        "ratios": report.ratios,
        "strictly_decreasing": report.strictly_decreasing(),
        "last_over_first": report.last_over_first(),
        "measurement_n": report.measurement_n,
        "homogenized_n": report.homogenized_n,
        "runtimes_ms": report.runtimes_ms,
        "files": files,
    }))?;
    Ok(true)
}

fn run_verify(cfg: &ExperimentConfig) -> Result<bool> {
    let report = run_property_suite(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join("verify_report.json");
    std::fs::write(&path, report.to_json_string()?).map_err(|e| Error::io(&path, e))?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    println!("report: {}", path.display());
    Ok(report.passed)
}

fn run_plotdata(cfg: &ExperimentConfig, args: &PlotArgs) -> Result<bool> {
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("convergence_report.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report = ConvergenceReport::from_json_str(&text)?;
    let files = emit_plot_data(&report, &cfg.out_dir)?;
    print_json(&json!({ "files": files }))?;
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::Cell(args) => run_cell(&cfg, args),
        Cmd::Table(args) => run_table(&cfg, args),
        Cmd::Evolve(args) => run_evolve(&cfg, args),
        Cmd::Converge => run_converge(&cfg),
        Cmd::Verify => run_verify(&cfg),
        Cmd::Plotdata(args) => run_plotdata(&cfg, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
