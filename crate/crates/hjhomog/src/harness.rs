//! Experiment orchestration: the ε-sweep convergence study, the
//! property suite behind `verify`, and plot-data files.
//!
//! Everything here is deterministic for a fixed config and seed. The
//! suite report deliberately carries no wall-clock data so that two
//! runs serialize to identical bytes; timings live only in the
//! convergence report, which is a separate artifact.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{CellProblem, DEFAULT_ALPHAS, DEFAULT_RESIDUAL_TOL};
use crate::efftable::{
    closed_form_constant_coupling, closed_form_eikonal_weakly_coupled, closed_form_piecewise_r1,
    effective_flat_width, build_table, AxisCoord, AxisSpec, BaseEffective, HBarTable,
    TableBuildSpec, MIN_AUDIT_N,
};
use crate::error::{Error, Result};
use crate::evolve::{
    check_comparison, EvolutionProblem, EvolutionResult, EvolutionSource, HbarProvider,
    DEFAULT_CFL,
};
use crate::expr::{EvalArgs, Expr};
use crate::grids::{GridField, TorusGrid};
use crate::hamiltonians::{
    check_a1_coefficients, check_a3, BaseH, Coefficient, Component, CouplingMatrix,
    HamiltonianSystem, SystemDoc,
};
use crate::report::CheckReport;

// ---------------------------------------------------------------------------
// Reference systems
//
// Three fixed single-cell families the suite and the examples lean on.
// Their effective Hamiltonians have closed forms, which is what makes
// them usable as oracles.

/// M=1, H = |p| + (2 + cos 2πy)·u. Effective: max(3r, |p| + 2r) at
/// r-level r, so the slice at r=1 is flat at 3 for |p| ≤ 1.
pub fn cosine_eikonal_system() -> HamiltonianSystem {
    HamiltonianSystem::new(
        1,
        vec![Component::WeaklyCoupled {
            base: BaseH::Norm,
            coupling: vec![Coefficient::parse("2 + cos(2*pi*y)").expect("builtin coefficient")],
        }],
    )
    .expect("builtin system")
}

/// M=2, H_i = |p| + u_i − u_j with constant antisymmetric coupling.
/// Constant coupling decouples: λ_i = |p| + r_i − r_j exactly.
pub fn exchange_pair_system() -> HamiltonianSystem {
    HamiltonianSystem::new(
        1,
        vec![
            Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::Const(1.0), Coefficient::Const(-1.0)],
            },
            Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::Const(-1.0), Coefficient::Const(1.0)],
            },
        ],
    )
    .expect("builtin system")
}

/// M=1, H = |p| + (1 + cos(2πy)/2)·u. The effective Hamiltonian in r
/// at fixed p is piecewise: slopes 0.5 / 1 / 1.5 with kinks at
/// r = ∓2|p|, so it is visibly not linear in r.
pub fn half_cosine_system() -> HamiltonianSystem {
    HamiltonianSystem::new(
        1,
        vec![Component::WeaklyCoupled {
            base: BaseH::Norm,
            coupling: vec![Coefficient::parse("1 + cos(2*pi*y)/2").expect("builtin coefficient")],
        }],
    )
    .expect("builtin system")
}

// ---------------------------------------------------------------------------
// Configuration

/// Where the homogenized solver gets H̄ from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum HbarSource {
    /// Exact columnwise formula; needs a weakly coupled system with a
    /// coupling matrix.
    ClosedForm,
    /// Evaluate H at y = 0; only valid for y-independent systems.
    Frozen,
    /// Load a previously built table.
    Table { path: PathBuf },
    /// Build a table up front from axis specs (`name:min:max:count`).
    Build {
        axes: Vec<String>,
        #[serde(default)]
        cell_n: Option<usize>,
    },
}

impl Default for HbarSource {
    fn default() -> Self {
        HbarSource::ClosedForm
    }
}

/// Budgets and knobs for the property suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteBudgets {
    #[serde(default)]
    pub seed: u64,
    /// Sample count for the randomized structure checks (monotonicity
    /// pairs, convexity triples). The oracle checks use their own
    /// fixed counts.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_suite_cell_n")]
    pub cell_n: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl Default for SuiteBudgets {
    fn default() -> Self {
        SuiteBudgets {
            seed: 0,
            samples: default_samples(),
            cell_n: default_suite_cell_n(),
            alphas: default_alphas(),
            workers: default_workers(),
        }
    }
}

/// The H̄-vs-p slice written to `hbar_slice.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlotSlice {
    /// r at which to slice; defaults to all ones.
    #[serde(default)]
    pub r: Option<Vec<f64>>,
    #[serde(default = "default_slice_pmax")]
    pub p_max: f64,
    #[serde(default = "default_slice_count")]
    pub count: usize,
}

impl Default for PlotSlice {
    fn default() -> Self {
        PlotSlice {
            r: None,
            p_max: default_slice_pmax(),
            count: default_slice_count(),
        }
    }
}

fn default_samples() -> usize {
    50
}
fn default_suite_cell_n() -> usize {
    256
}
fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}
fn default_workers() -> usize {
    1
}
fn default_slice_pmax() -> f64 {
    1.5
}
fn default_slice_count() -> usize {
    61
}
fn default_len() -> f64 {
    1.0
}
fn default_t_end() -> f64 {
    0.5
}
fn default_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_cells_per_eps() -> usize {
    32
}
fn default_cfl() -> f64 {
    DEFAULT_CFL
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One JSON document driving `converge` and `verify`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemDoc,
    #[serde(rename = "L", default = "default_len")]
    pub len: f64,
    #[serde(rename = "T", default = "default_t_end")]
    pub t_end: f64,
    /// Strictly decreasing; each must divide L.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Grid cells per oscillation period: n = cells_per_eps · L/ε,
    /// so h = ε/cells_per_eps.
    #[serde(default = "default_cells_per_eps")]
    pub cells_per_eps: usize,
    /// Initial data, one expression in x per component.
    pub u0: Vec<String>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub hbar: HbarSource,
    /// Grid for the homogenized baseline. Default: 4× the coarsest
    /// oscillating grid, which keeps the baseline's own discretization
    /// error out of the measured ε-trend.
    #[serde(default)]
    pub homogenized_n: Option<usize>,
    #[serde(default)]
    pub suite: SuiteBudgets,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub plot: PlotSlice,
}

impl ExperimentConfig {
    /// The shipped default: the cosine eikonal system with sin data,
    /// the acceptance-grade ε schedule, and the closed-form H̄.
    pub fn default_config() -> ExperimentConfig {
        ExperimentConfig {
            system: cosine_eikonal_system().to_doc(),
            len: default_len(),
            t_end: default_t_end(),
            eps: default_eps(),
            cells_per_eps: default_cells_per_eps(),
            u0: vec!["sin(2*pi*x)".into()],
            cfl: default_cfl(),
            hbar: HbarSource::default(),
            homogenized_n: None,
            suite: SuiteBudgets::default(),
            out_dir: default_out_dir(),
            plot: PlotSlice::default(),
        }
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn system(&self) -> Result<HamiltonianSystem> {
        HamiltonianSystem::from_doc(&self.system)
    }

    /// Oscillating-grid resolution for one ε.
    pub fn n_for_eps(&self, eps: f64) -> usize {
        (self.cells_per_eps as f64 * self.len / eps).round() as usize
    }

    fn measurement_n(&self) -> usize {
        self.n_for_eps(self.eps[0])
    }

    fn homogenized_n(&self) -> usize {
        self.homogenized_n.unwrap_or(4 * self.measurement_n())
    }

    pub fn validate(&self) -> Result<()> {
        let sys = self.system()?;
        if !(self.len > 0.0 && self.len.is_finite()) {
            return Err(Error::Config(format!("L must be positive, got {}", self.len)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("T must be positive, got {}", self.t_end)));
        }
        if self.eps.is_empty() {
            return Err(Error::Config("eps schedule is empty".into()));
        }
        for w in self.eps.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(format!(
                    "eps schedule must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for &eps in &self.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!("eps must be positive, got {eps}")));
            }
            let periods = self.len / eps;
            if (periods - periods.round()).abs() > 1e-9 * periods.max(1.0) {
                return Err(Error::Config(format!(
                    "eps = {eps} does not divide L = {}: {periods} periods",
                    self.len
                )));
            }
        }
        if self.cells_per_eps < 32 {
            return Err(Error::Config(format!(
                "cells_per_eps = {} undershoots the h <= eps/32 resolution rule",
                self.cells_per_eps
            )));
        }
        if self.u0.len() != sys.m() {
            return Err(Error::Config(format!(
                "{} u0 expressions for a system with M = {}",
                self.u0.len(),
                sys.m()
            )));
        }
        for src in &self.u0 {
            let e = Expr::parse(src)?;
            let u = e.var_use();
            if u.y > 0 || u.r > 0 || u.p > 0 {
                return Err(Error::BadVariable {
                    name: "y/r/p".into(),
                    context: format!("initial data `{src}` may only depend on x"),
                });
            }
            if u.x > sys.dim() {
                return Err(Error::BadVariable {
                    name: format!("x{}", u.x),
                    context: format!("initial data `{src}` in dimension {}", sys.dim()),
                });
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if let Some(nh) = self.homogenized_n {
            let nm = self.measurement_n();
            if nh == 0 || nh % nm != 0 {
                return Err(Error::Config(format!(
                    "homogenized_n = {nh} must be a positive multiple of the measurement grid {nm}"
                )));
            }
        }
        if self.suite.samples == 0 {
            return Err(Error::Config("suite.samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Sample the initial-data expressions on a grid.
    pub fn u0_field(&self, grid: TorusGrid) -> Result<GridField> {
        let sys = self.system()?;
        let mut exprs = Vec::with_capacity(sys.m());
        for src in &self.u0 {
            exprs.push(Expr::parse(src)?);
        }
        let mut field = GridField::zeros(grid, sys.m())?;
        for c in 0..sys.m() {
            let e = &exprs[c];
            let comp = field.component_mut(c);
            for k in 0..grid.node_count() {
                let x = grid.coords(k);
                comp[k] = e.eval(&EvalArgs::new(&x[..grid.dim()], &[], &[], &[]));
            }
        }
        for v in field.values() {
            if !v.is_finite() {
                return Err(Error::NonFinite("initial data".into()));
            }
        }
        Ok(field)
    }

    pub fn hbar_provider(&self, sys: &HamiltonianSystem) -> Result<HbarProvider> {
        match &self.hbar {
            HbarSource::ClosedForm => {
                let cm = sys.coupling_matrix().ok_or_else(|| {
                    Error::Config(
                        "closed-form H-bar needs a weakly coupled system with a coupling matrix"
                            .into(),
                    )
                })?;
                HbarProvider::closed_form_eikonal(&cm, MIN_AUDIT_N)
            }
            HbarSource::Frozen => HbarProvider::frozen(sys.clone()),
            HbarSource::Table { path } => HbarProvider::from_table(HBarTable::load(path)?),
            HbarSource::Build { axes, cell_n } => {
                let parsed: Vec<AxisSpec> = axes
                    .iter()
                    .map(|s| AxisSpec::parse_spec(s))
                    .collect::<Result<_>>()?;
                let axes = crate::efftable::complete_axes(sys.m(), sys.dim(), &parsed)?;
                let mut spec = TableBuildSpec::new(sys, (0..sys.m()).collect(), axes);
                if let Some(n) = cell_n {
                    spec.cell_n = *n;
                }
                spec.alphas = self.suite.alphas.clone();
                spec.workers = self.suite.workers;
                HbarProvider::from_table(build_table(&spec)?)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convergence study

/// Outcome of the ε-sweep. `errors[k]` is the sup-norm gap between the
/// oscillating run at `eps_list[k]` and the shared homogenized
/// baseline, both restricted to the coarsest grid; `ratios[k]` is
/// `errors[k] / errors[k+1]`, so values above 1 mean the gap shrinks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eps_list: Vec<f64>,
    pub errors: Vec<f64>,
    pub ratios: Vec<f64>,
    pub runtimes_ms: Vec<f64>,
    pub ns: Vec<usize>,
    pub dts: Vec<f64>,
    pub thetas: Vec<f64>,
    pub slopes: Vec<f64>,
    pub linfini_margins: Vec<f64>,
    pub linfini_c: f64,
    pub sup_initial: f64,
    pub sup_running: f64,
    pub measurement_n: usize,
    pub homogenized_n: usize,
    pub homogenized_runtime_ms: f64,
    pub homogenized_slope: f64,
    /// (p, H̄(x₀, r₀, p)) pairs for `hbar_slice.csv`.
    pub hbar_slice: Vec<(f64, f64)>,
    /// Measurement-grid abscissae for the profiles.
    pub profile_x: Vec<f64>,
    /// Homogenized final state per component on the measurement grid.
    pub profile_hom: Vec<Vec<f64>>,
    /// Per ε, per component, final state restricted to the
    /// measurement grid.
    pub profiles_eps: Vec<Vec<Vec<f64>>>,
}

impl ConvergenceReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }

    pub fn last_over_first(&self) -> f64 {
        match (self.errors.first(), self.errors.last()) {
            (Some(&a), Some(&b)) if a > 0.0 => b / a,
            _ => f64::NAN,
        }
    }

    /// Relative spread (max − min)/max of the oscillating runs' final
    /// upwind slopes; the uniformity number the bounds check uses.
    pub fn slope_spread(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &s in &self.slopes {
            lo = lo.min(s);
            hi = hi.max(s);
        }
        if self.slopes.is_empty() || hi <= 0.0 {
            return f64::NAN;
        }
        (hi - lo) / hi
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.eps_list.len();
        if k == 0 {
            return Err(Error::Config("empty convergence report".into()));
        }
        let same = self.errors.len() == k
            && self.runtimes_ms.len() == k
            && self.ns.len() == k
            && self.dts.len() == k
            && self.thetas.len() == k
            && self.slopes.len() == k
            && self.linfini_margins.len() == k
            && self.profiles_eps.len() == k
            && self.ratios.len() + 1 == k;
        if !same {
            return Err(Error::Shape("convergence report arrays disagree on length".into()));
        }
        for &e in &self.errors {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::NonFinite(format!("error entry {e}")));
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<ConvergenceReport> {
        let rep: ConvergenceReport = serde_json::from_str(text)?;
        rep.validate()?;
        Ok(rep)
    }

    /// The `eps,error,ratio` summary table.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("eps,error,ratio\n");
        for k in 0..self.eps_list.len() {
            let ratio = match self.ratios.get(k) {
                Some(r) => format!("{r}"),
                None => String::new(),
            };
            out.push_str(&format!("{},{},{ratio}\n", self.eps_list[k], self.errors[k]));
        }
        out
    }
}

/// Solve the homogenized baseline once, then each oscillating run, and
/// compare on the coarsest grid at t = T.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let provider = cfg.hbar_provider(&sys)?;
    let dim = sys.dim();

    let n_meas = cfg.measurement_n();
    let g_meas = TorusGrid::new(dim, n_meas, cfg.len)?;
    let n_hom = cfg.homogenized_n();
    let g_hom = TorusGrid::new(dim, n_hom, cfg.len)?;

    // Hull probe before any solve: a table-backed H̄ must cover the
    // data's own corners. The run still errors if the solution
    // escapes, but this catches gross mismatches cheaply.
    let u0_probe = cfg.u0_field(g_meas)?;
    probe_hull(&provider, &u0_probe)?;

    let started = Instant::now();
    let mut hom_prob = EvolutionProblem::new(
        EvolutionSource::Homogenized {
            provider: &provider,
        },
        cfg.u0_field(g_hom)?,
        cfg.t_end,
    )?;
    hom_prob.cfl = cfg.cfl;
    let hom = hom_prob.solve()?;
    let homogenized_runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    let hom_coarse = hom.final_state.restrict_to(g_meas)?;

    let mut eps_list = Vec::new();
    let mut errors = Vec::new();
    let mut runtimes_ms = Vec::new();
    let mut ns = Vec::new();
    let mut dts = Vec::new();
    let mut thetas = Vec::new();
    let mut slopes = Vec::new();
    let mut linfini_margins = Vec::new();
    let mut profiles_eps = Vec::new();
    let mut linfini_c = 0.0f64;
    let mut sup_initial = 0.0f64;
    let mut sup_running = 0.0f64;

    // The runs are independent, so they go wide; assembly below stays
    // sequential in eps order, which keeps the report deterministic.
    let outcomes: Vec<Result<(f64, EvolutionResult)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .eps
            .iter()
            .map(|&eps| {
                let sys = &sys;
                scope.spawn(move || {
                    let n = cfg.n_for_eps(eps);
                    let g = TorusGrid::new(dim, n, cfg.len)?;
                    let started = Instant::now();
                    let mut prob = EvolutionProblem::new(
                        EvolutionSource::Oscillating { system: sys, eps },
                        cfg.u0_field(g)?,
                        cfg.t_end,
                    )?;
                    prob.cfl = cfg.cfl;
                    let run = prob.solve()?;
                    Ok((started.elapsed().as_secs_f64() * 1e3, run))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("eps worker panicked"))
            .collect()
    });

    for (&eps, outcome) in cfg.eps.iter().zip(outcomes) {
        let (runtime_ms, run) = outcome?;
        let n = cfg.n_for_eps(eps);
        runtimes_ms.push(runtime_ms);

        let coarse = run.final_state.restrict_to(g_meas)?;
        errors.push(coarse.sup_diff(&hom_coarse)?);
        eps_list.push(eps);
        ns.push(n);
        dts.push(run.dt_max);
        thetas.push(run.theta);
        slopes.push(run.max_slope_final);
        linfini_margins.push(run.linfini_margin(cfg.t_end));
        linfini_c = linfini_c.max(run.linfini_c);
        sup_initial = sup_initial.max(run.sup_initial);
        sup_running = sup_running.max(run.sup_running);
        profiles_eps.push((0..sys.m()).map(|c| coarse.component(c).to_vec()).collect());
    }

    let ratios = errors
        .windows(2)
        .map(|w| if w[1] > 0.0 { w[0] / w[1] } else { f64::INFINITY })
        .collect();

    let slice_r = cfg.plot.r.clone().unwrap_or_else(|| vec![1.0; sys.m()]);
    let hbar_slice = sample_hbar_slice(&provider, &slice_r, cfg.plot.p_max, cfg.plot.count)?;

    let profile_x: Vec<f64> = (0..g_meas.node_count())
        .map(|k| g_meas.coords(k)[0])
        .collect();
    let profile_hom = (0..sys.m()).map(|c| hom_coarse.component(c).to_vec()).collect();

    let report = ConvergenceReport {
        eps_list,
        errors,
        ratios,
        runtimes_ms,
        ns,
        dts,
        thetas,
        slopes,
        linfini_margins,
        linfini_c,
        sup_initial,
        sup_running,
        measurement_n: n_meas,
        homogenized_n: n_hom,
        homogenized_runtime_ms,
        homogenized_slope: hom.max_slope_final,
        hbar_slice,
        profile_x,
        profile_hom,
        profiles_eps,
    };
    report.validate()?;
    Ok(report)
}

fn probe_hull(provider: &HbarProvider, u0: &GridField) -> Result<()> {
    let dim = u0.grid().dim();
    let m = u0.m();
    let sup = u0.sup_norm();
    let slope = u0.max_upwind_slope();
    let x = vec![0.0; dim];
    for sr in [-1.0, 1.0] {
        for sp in [-1.0, 1.0] {
            let r = vec![sr * sup; m];
            let mut p = vec![0.0; dim];
            p[0] = sp * slope;
            for i in 0..m {
                provider.query(i, &x, &r, &p).map_err(|e| match e {
                    Error::OutOfHull(msg) => Error::OutOfHull(format!(
                        "H-bar source does not cover the initial data ({msg})"
                    )),
                    other => other,
                })?;
            }
        }
    }
    Ok(())
}

fn sample_hbar_slice(
    provider: &HbarProvider,
    r: &[f64],
    p_max: f64,
    count: usize,
) -> Result<Vec<(f64, f64)>> {
    let count = count.max(2);
    let x = vec![0.0; provider.dim()];
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let p1 = -p_max + 2.0 * p_max * k as f64 / (count - 1) as f64;
        let mut p = vec![0.0; provider.dim()];
        p[0] = p1;
        out.push((p1, provider.query(0, &x, r, &p)?));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Property suite

/// Trimmed convergence digest for the suite report. No runtimes: this
/// struct must serialize identically across runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub eps_list: Vec<f64>,
    pub errors: Vec<f64>,
    pub ratios: Vec<f64>,
    pub strictly_decreasing: bool,
    pub last_over_first: f64,
    pub slopes: Vec<f64>,
    pub slope_spread: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub checks: Vec<CheckReport>,
    pub convergence: ConvergenceSummary,
    pub passed: bool,
}

impl SuiteReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self.checks.iter().map(|c| c.summary_line()).collect();
        lines.push(format!(
            "[{}] suite verdict, seed {}",
            if self.passed { "pass" } else { "FAIL" },
            self.seed
        ));
        lines
    }
}

/// Fixed sample counts for the oracle checks. The randomized structure
/// checks scale with `suite.samples` instead.
const ORACLE_SAMPLES: usize = 20;
const TRIVIAL_SAMPLES: usize = 10;
const PIECEWISE_RANDOM_SAMPLES: usize = 10;
const COMPARISON_PAIRS: usize = 5;

/// Run every structural and oracle property plus the convergence
/// trend, all seeded from `cfg.suite.seed`.
pub fn run_property_suite(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let seed = cfg.suite.seed;
    let mut checks = Vec::new();

    checks.push(check_coupling_signs()?);
    checks.push(check_broken_coupling_detected()?);
    checks.push(check_exchange_monotonicity(seed)?);
    checks.push(check_trivial_corrector(cfg, seed)?);
    checks.push(check_eikonal_oracle(cfg, seed)?);
    checks.push(check_constant_coupling(cfg, seed)?);
    checks.push(check_piecewise_branches(cfg, seed)?);
    checks.push(check_flat_slice(cfg)?);
    checks.push(check_effective_structure(cfg, seed)?);
    checks.push(check_comparison_pairs(seed)?);

    let convergence_report = run_convergence(cfg)?;
    checks.push(check_evolution_bounds(cfg, &convergence_report)?);
    checks.push(check_homogenization_trend(&convergence_report));

    let convergence = ConvergenceSummary {
        eps_list: convergence_report.eps_list.clone(),
        errors: convergence_report.errors.clone(),
        ratios: convergence_report.ratios.clone(),
        strictly_decreasing: convergence_report.strictly_decreasing(),
        last_over_first: convergence_report.last_over_first(),
        slopes: convergence_report.slopes.clone(),
        slope_spread: convergence_report.slope_spread(),
    };
    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport {
        seed,
        checks,
        convergence,
        passed,
    })
}

fn check_coupling_signs() -> Result<CheckReport> {
    let mut rep = CheckReport::new("coupling-signs");
    for sys in [cosine_eikonal_system(), exchange_pair_system(), half_cosine_system()] {
        let cm = sys
            .coupling_matrix()
            .ok_or_else(|| Error::Config("reference system lost its coupling matrix".into()))?;
        rep.absorb(check_a1_coefficients(&cm, 64)?);
    }
    Ok(rep)
}

/// The suite must be able to see a bad matrix, or a silent pass means
/// nothing: a positive off-diagonal entry has to fail the sign check.
fn check_broken_coupling_detected() -> Result<CheckReport> {
    let mut rep = CheckReport::new("sign-check-detects-bad-coupling");
    let broken = CouplingMatrix::constant(2, &[1.0, 0.7, -1.0, 1.0])?;
    let sub = check_a1_coefficients(&broken, 16)?;
    let margin = if sub.passed { -1.0 } else { 1.0 };
    rep.record(margin, 0.0, || {
        "a positive off-diagonal coupling slipped past the sign check".into()
    });
    Ok(rep)
}

fn check_exchange_monotonicity(seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("sign-condition-implies-monotonicity");
    rep.absorb(check_a3(&exchange_pair_system(), 3.0, 64, seed ^ 0xA3)?);
    Ok(rep)
}

fn suite_cell<'a>(
    cfg: &ExperimentConfig,
    sys: &'a HamiltonianSystem,
    r: Vec<f64>,
    p: Vec<f64>,
) -> Result<CellProblem<'a>> {
    let dim = sys.dim();
    let mut prob = CellProblem::new(sys, 0, vec![0.0; dim], r, p)?;
    prob.n = cfg.suite.cell_n;
    prob.alphas = cfg.suite.alphas.clone();
    prob.residual_tol = DEFAULT_RESIDUAL_TOL;
    Ok(prob)
}

/// y-independent problems must come out exact: λ equals the
/// Hamiltonian at the data point and the corrector vanishes.
fn check_trivial_corrector(cfg: &ExperimentConfig, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("trivial-corrector-exactness");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7C);
    for _ in 0..TRIVIAL_SAMPLES {
        let c = rng.gen_range(0.5..2.0);
        let r1 = rng.gen_range(-3.0..3.0);
        let p1 = rng.gen_range(-4.0..4.0);
        let sys = HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::Const(c)],
            }],
        )?;
        let mut prob = suite_cell(cfg, &sys, vec![r1], vec![p1])?;
        prob.n = 64; // flat data; any grid resolves it
        let solve = prob.effective_hamiltonian()?;
        let exact = sys.eval(0, &[0.0], &[0.0], &[r1], &[p1])?;
        rep.record(1e-6 - (solve.lambda - exact).abs(), 0.0, || {
            format!("lambda {} vs H {exact} at c={c} r={r1} p={p1}", solve.lambda)
        });
        let wsup = solve.corrector.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        rep.record(1e-6 - wsup, 0.0, || {
            format!("corrector sup {wsup} at c={c} r={r1} p={p1}")
        });
    }
    Ok(rep)
}

/// Cell solves on the cosine system against the exact columnwise
/// formula, over the acceptance sampling box.
fn check_eikonal_oracle(cfg: &ExperimentConfig, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("effective-vs-closed-form");
    let sys = cosine_eikonal_system();
    let cm = sys.coupling_matrix().expect("weakly coupled by construction");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE1);
    for _ in 0..ORACLE_SAMPLES {
        let r1 = rng.gen_range(-3.0..3.0);
        let p1 = rng.gen_range(-4.0..4.0);
        let solve = suite_cell(cfg, &sys, vec![r1], vec![p1])?.effective_hamiltonian()?;
        let exact = closed_form_eikonal_weakly_coupled(&cm, 0, &[r1], &[p1], MIN_AUDIT_N)?;
        rep.record(2e-2 - (solve.lambda - exact).abs(), 0.0, || {
            format!("lambda {} vs {exact} at r={r1} p={p1}", solve.lambda)
        });
    }
    Ok(rep)
}

/// Constant coupling decouples the pair: λ_i = |p| + (c r)_i exactly.
fn check_constant_coupling(cfg: &ExperimentConfig, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("constant-coupling-decoupling");
    let sys = exchange_pair_system();
    let cm = sys.coupling_matrix().expect("weakly coupled by construction");
    let base = |p: &[f64]| p[0].abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xCC);
    for _ in 0..ORACLE_SAMPLES {
        let r = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let p1 = rng.gen_range(-4.0..4.0);
        for i in 0..2 {
            let mut prob = CellProblem::new(&sys, i, vec![0.0], r.clone(), vec![p1])?;
            prob.n = 64; // y never enters; exact on any grid
            prob.alphas = cfg.suite.alphas.clone();
            let solve = prob.effective_hamiltonian()?;
            let exact = closed_form_constant_coupling(
                &BaseEffective::ClosedForm(&base),
                &cm,
                i,
                &r,
                &[p1],
            )?;
            rep.record(2e-2 - (solve.lambda - exact).abs(), 0.0, || {
                format!("component {} lambda {} vs {exact} at r={r:?} p={p1}", i + 1, solve.lambda)
            });
        }
    }
    Ok(rep)
}

/// The half-cosine family at p=1: pinned values on all three slope
/// branches, then random r against the piecewise formula.
fn check_piecewise_branches(cfg: &ExperimentConfig, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("piecewise-branch-selection");
    let sys = half_cosine_system();
    let c11 = Coefficient::parse("1 + cos(2*pi*y)/2")?;
    for (r1, want) in [(-4.0, -2.0), (0.0, 1.0), (4.0, 6.0)] {
        let solve = suite_cell(cfg, &sys, vec![r1], vec![1.0])?.effective_hamiltonian()?;
        rep.record(2e-2 - (solve.lambda - want).abs(), 0.0, || {
            format!("pinned branch value {} vs {want} at r={r1}", solve.lambda)
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9B);
    for _ in 0..PIECEWISE_RANDOM_SAMPLES {
        let r1 = rng.gen_range(-5.0..5.0);
        let solve = suite_cell(cfg, &sys, vec![r1], vec![1.0])?.effective_hamiltonian()?;
        let exact = closed_form_piecewise_r1(&c11, r1, 1.0, MIN_AUDIT_N)?;
        rep.record(2e-2 - (solve.lambda - exact).abs(), 0.0, || {
            format!("lambda {} vs {exact} at r={r1}", solve.lambda)
        });
    }
    Ok(rep)
}

fn suite_table(
    cfg: &ExperimentConfig,
    sys: &HamiltonianSystem,
    axes: Vec<AxisSpec>,
) -> Result<HBarTable> {
    let mut spec = TableBuildSpec::new(sys, vec![0], axes);
    spec.cell_n = cfg.suite.cell_n;
    spec.alphas = cfg.suite.alphas.clone();
    spec.workers = cfg.suite.workers;
    build_table(&spec)
}

/// Tabulated slice of the cosine system at r = 1: flat at 3 across
/// |p| ≤ 1, strictly above beyond it.
fn check_flat_slice(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let mut rep = CheckReport::new("flat-part-of-the-slice");
    let sys = cosine_eikonal_system();
    let table = suite_table(
        cfg,
        &sys,
        vec![
            AxisSpec::frozen(AxisCoord::X(0), 0.0),
            AxisSpec::frozen(AxisCoord::R(0), 1.0),
            AxisSpec {
                coord: AxisCoord::P(0),
                min: -1.5,
                max: 1.5,
                count: 31,
            },
        ],
    )?;
    let x = [0.0];
    let r = [1.0];
    for k in 0..31 {
        let p1 = -1.5 + 0.1 * k as f64;
        let v = table.query(0, &x, &r, &[p1])?;
        if p1.abs() <= 0.9 + 1e-9 {
            rep.record(2e-2 - (v - 3.0).abs(), 0.0, || {
                format!("H-bar({p1}) = {v}, expected flat at 3")
            });
        }
        if (p1.abs() - 1.5).abs() <= 1e-9 {
            rep.record(v - 3.05, 0.0, || {
                format!("H-bar({p1}) = {v}, expected at least 3.05 outside the flat part")
            });
        }
    }
    Ok(rep)
}

/// Structure of a tabulated (r, p) patch of the cosine system:
/// monotone in r, midpoint-convex in p, and coercive along every
/// p-ray whose reach exceeds the flat width at that r.
fn check_effective_structure(cfg: &ExperimentConfig, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("effective-structure");
    let sys = cosine_eikonal_system();
    let cm = sys.coupling_matrix().expect("weakly coupled by construction");
    let (r_min, r_max, r_count) = (-3.0, 3.0, 13);
    let (p_min, p_max, p_count) = (-4.0, 4.0, 17);
    let table = suite_table(
        cfg,
        &sys,
        vec![
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
        ],
    )?;
    let x = [0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57);

    for _ in 0..cfg.suite.samples {
        let a = rng.gen_range(r_min..r_max);
        let b = rng.gen_range(r_min..r_max);
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let p1 = rng.gen_range(p_min..p_max);
        let vh = table.query(0, &x, &[hi], &[p1])?;
        let vl = table.query(0, &x, &[lo], &[p1])?;
        rep.record(vh - vl, -1e-3, || {
            format!("H-bar({hi}, {p1}) = {vh} under H-bar({lo}, {p1}) = {vl}")
        });
    }

    for _ in 0..cfg.suite.samples {
        let r1 = rng.gen_range(r_min..r_max);
        let pa = rng.gen_range(p_min..p_max);
        let pb = rng.gen_range(p_min..p_max);
        let va = table.query(0, &x, &[r1], &[pa])?;
        let vb = table.query(0, &x, &[r1], &[pb])?;
        let vm = table.query(0, &x, &[r1], &[0.5 * (pa + pb)])?;
        rep.record(0.5 * (va + vb) - vm + 2e-2, 0.0, || {
            format!("midpoint value {vm} above chord of {va}, {vb} at r={r1}")
        });
    }

    let r_step = (r_max - r_min) / (r_count - 1) as f64;
    for k in 0..r_count {
        let r1 = r_min + r_step * k as f64;
        let width = effective_flat_width(&cm, 0, &[r1], MIN_AUDIT_N)?;
        if p_max.min(-p_min) <= width {
            continue;
        }
        let center = table.query(0, &x, &[r1], &[0.0])?;
        for pb in [p_min, p_max] {
            let edge = table.query(0, &x, &[r1], &[pb])?;
            rep.record(edge - center, 1e-9, || {
                format!(
                    "H-bar({r1}, {pb}) = {edge} fails to rise over the center {center} \
                     (flat width {width})"
                )
            });
        }
    }
    Ok(rep)
}

fn trig_field(rng: &mut ChaCha8Rng, grid: TorusGrid, m: usize) -> Result<GridField> {
    let len = grid.len();
    let mut field = GridField::zeros(grid, m)?;
    for c in 0..m {
        let a = rng.gen_range(0.2..1.0);
        let k = rng.gen_range(1..=3) as f64;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let shift = rng.gen_range(-0.5..0.5);
        let comp = field.component_mut(c);
        for node in 0..grid.node_count() {
            let x = grid.coords(node)[0];
            comp[node] = a * (std::f64::consts::TAU * k * x / len + phase).sin() + shift;
        }
    }
    Ok(field)
}

/// Ordered-data gap can only shrink: seeded pairs on the exchange
/// system, oscillating source.
fn check_comparison_pairs(seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("comparison-bound");
    let sys = exchange_pair_system();
    let grid = TorusGrid::new(1, 128, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0);
    for pair in 0..COMPARISON_PAIRS {
        let low = trig_field(&mut rng, grid, sys.m())?;
        let high = trig_field(&mut rng, grid, sys.m())?;
        let outcome = check_comparison(
            EvolutionSource::Oscillating {
                system: &sys,
                eps: 0.25,
            },
            low,
            high,
            0.3,
            vec![0.1, 0.2, 0.3],
        )?;
        rep.record(-outcome.worst_excess, -1e-6, || {
            format!(
                "pair {pair}: gap grew by {:.3e} beyond its initial positive part",
                outcome.worst_excess
            )
        });
    }
    Ok(rep)
}

/// Smallest probed radius ρ with H_i(0, y, r, q) > c for every sampled
/// y, every r-corner at sup-level `r_sup`, every |q| = ρ. The a-priori
/// slope bound for solutions with data below that sup.
fn coercivity_radius_for(sys: &HamiltonianSystem, c: f64, r_sup: f64) -> Result<f64> {
    let dim = sys.dim();
    let dirs: Vec<[f64; 2]> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..16)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 16.0;
                [a.cos(), a.sin()]
            })
            .collect()
    };
    let y_side = 64usize;
    let ys: Vec<[f64; 2]> = if dim == 1 {
        (0..y_side).map(|k| [k as f64 / y_side as f64, 0.0]).collect()
    } else {
        let mut v = Vec::new();
        for a in 0..16 {
            for b in 0..16 {
                v.push([a as f64 / 16.0, b as f64 / 16.0]);
            }
        }
        v
    };
    let mut corners: Vec<Vec<f64>> = vec![vec![0.0; sys.m()]];
    for code in 0..(1usize << sys.m().min(6)) {
        corners.push(
            (0..sys.m())
                .map(|b| if (code >> b) & 1 == 1 { r_sup } else { -r_sup })
                .collect(),
        );
    }
    let x = vec![0.0; dim];
    let cap = 64.0 * (1.0 + c.abs() + r_sup);
    let mut rho = 0.5;
    while rho <= cap {
        let mut ok = true;
        'probe: for i in 0..sys.m() {
            for d in &dirs {
                let q = [d[0] * rho, d[1] * rho];
                for y in &ys {
                    for r in &corners {
                        let h = sys.eval(i, &x, &y[..dim], r, &q[..dim])?;
                        if !(h > c) {
                            ok = false;
                            break 'probe;
                        }
                    }
                }
            }
        }
        if ok {
            return Ok(rho);
        }
        rho += 0.5;
    }
    Err(Error::NonCoercive {
        bound: c,
        radius: cap,
    })
}

/// Every sweep run must sit inside its a-priori sup bound, keep its
/// final slope under the coercivity radius, and the slopes must agree
/// across ε to within 10% (measured as (max − min)/max).
fn check_evolution_bounds(cfg: &ExperimentConfig, rep_conv: &ConvergenceReport) -> Result<CheckReport> {
    let mut rep = CheckReport::new("evolution-bounds");
    let sys = cfg.system()?;
    for (k, &margin) in rep_conv.linfini_margins.iter().enumerate() {
        rep.record(margin, 0.0, || {
            format!(
                "sup bound violated at eps = {} (margin {margin:.3e})",
                rep_conv.eps_list[k]
            )
        });
    }
    let radius = coercivity_radius_for(&sys, rep_conv.linfini_c, rep_conv.sup_running)?;
    rep.note(format!("coercivity slope radius {radius}"));
    for (k, &slope) in rep_conv.slopes.iter().enumerate() {
        rep.record(radius - slope, 0.0, || {
            format!(
                "final slope {slope} beyond the coercivity radius {radius} at eps = {}",
                rep_conv.eps_list[k]
            )
        });
    }
    let spread = rep_conv.slope_spread();
    rep.record(0.10 - spread, 0.0, || {
        format!("slope spread {spread:.4} across the sweep exceeds 10%")
    });
    rep.note(format!("slope spread {spread:.4} over {:?}", rep_conv.slopes));
    Ok(rep)
}

/// The quantitative convergence verdict: strictly shrinking errors and
/// a final error at most 0.6× the first.
fn check_homogenization_trend(rep_conv: &ConvergenceReport) -> CheckReport {
    let mut rep = CheckReport::new("homogenization-trend");
    for (k, w) in rep_conv.errors.windows(2).enumerate() {
        rep.record(w[0] - w[1], 0.0, || {
            format!(
                "error rose from {} to {} between eps {} and {}",
                w[0],
                w[1],
                rep_conv.eps_list[k],
                rep_conv.eps_list[k + 1]
            )
        });
    }
    if let (Some(&first), Some(&last)) = (rep_conv.errors.first(), rep_conv.errors.last()) {
        rep.record(0.6 * first - last, 0.0, || {
            format!("error({}) = {last} above 0.6 x error({}) = {}",
                rep_conv.eps_list.last().unwrap(), rep_conv.eps_list[0], 0.6 * first)
        });
    }
    rep.note(format!("errors {:?}", rep_conv.errors));
    rep
}

// ---------------------------------------------------------------------------
// Plot data

fn push_csv_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `eps_error.csv`, `hbar_slice.csv`, and
/// `solution_profiles.csv` under `dir`. Empty report sections produce
/// header-only files.
pub fn emit_plot_data(report: &ConvergenceReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut eps_csv = String::from("eps,error,ratio\n");
    for k in 0..report.eps_list.len() {
        let ratio = report.ratios.get(k).map(|r| format!("{r}")).unwrap_or_default();
        push_csv_row(
            &mut eps_csv,
            &[
                format!("{}", report.eps_list[k]),
                format!("{}", report.errors[k]),
                ratio,
            ],
        );
    }
    let p = dir.join("eps_error.csv");
    write_file(&p, &eps_csv)?;
    written.push(p);

    let mut slice_csv = String::from("p,hbar\n");
    for (p1, v) in &report.hbar_slice {
        push_csv_row(&mut slice_csv, &[format!("{p1}"), format!("{v}")]);
    }
    let p = dir.join("hbar_slice.csv");
    write_file(&p, &slice_csv)?;
    written.push(p);

    let m = report.profile_hom.len();
    let mut header = vec!["x".to_string()];
    for c in 0..m {
        header.push(format!("hom_{}", c + 1));
    }
    for (k, eps) in report.eps_list.iter().enumerate() {
        for c in 0..m {
            header.push(format!("eps{k}_{}_{}", eps, c + 1));
        }
    }
    let mut prof_csv = String::new();
    push_csv_row(&mut prof_csv, &header);
    for (node, &x) in report.profile_x.iter().enumerate() {
        let mut row = vec![format!("{x}")];
        for c in 0..m {
            row.push(format!("{}", report.profile_hom[c][node]));
        }
        for per_eps in &report.profiles_eps {
            for c in 0..m {
                row.push(format!("{}", per_eps[c][node]));
            }
        }
        push_csv_row(&mut prof_csv, &row);
    }
    let p = dir.join("solution_profiles.csv");
    write_file(&p, &prof_csv)?;
    written.push(p);

    Ok(written)
}

/// Full `converge` output: report JSON, the eps/error/ratio CSV, and
/// the plot files.
pub fn write_convergence_outputs(report: &ConvergenceReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let p = dir.join("convergence_report.json");
    write_file(&p, &report.to_json_string()?)?;
    written.push(p);
    let p = dir.join("convergence.csv");
    write_file(&p, &report.summary_csv())?;
    written.push(p);
    written.extend(emit_plot_data(report, dir)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        // First two acceptance eps values at full T: the trend is
        // established there, while the cheap cell grid keeps the
        // table-backed checks fast.
        let mut cfg = ExperimentConfig::default_config();
        cfg.eps = vec![0.2, 0.1];
        cfg.suite.cell_n = 64;
        cfg.suite.samples = 6;
        cfg
    }

    #[test]
    fn default_config_round_trips_through_json() {
        let cfg = ExperimentConfig::default_config();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.eps, cfg.eps);
        assert_eq!(back.u0, cfg.u0);
        assert_eq!(back.system().unwrap().m(), 1);
    }

    #[test]
    fn non_dividing_eps_is_rejected_before_any_solve() {
        let mut cfg = ExperimentConfig::default_config();
        cfg.eps = vec![0.3];
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn u0_must_depend_on_x_only() {
        let mut cfg = ExperimentConfig::default_config();
        cfg.u0 = vec!["sin(2*pi*y)".into()];
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::BadVariable { .. }), "{err}");
    }

    #[test]
    fn u0_count_must_match_m() {
        let mut cfg = ExperimentConfig::default_config();
        cfg.u0 = vec!["sin(2*pi*x)".into(), "0".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn y_independent_sweep_is_scheme_noise_only() {
        // Oscillation never enters, so u^eps = u at the PDE level and
        // the measured gaps are pure scheme noise, far below the
        // 5 sqrt(h) (1+T) allowance and flat in eps.
        let mut cfg = tiny_config();
        cfg.system = HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::Const(1.5)],
            }],
        )
        .unwrap()
        .to_doc();
        cfg.hbar = HbarSource::Frozen;
        let rep = run_convergence(&cfg).unwrap();
        for (k, &err) in rep.errors.iter().enumerate() {
            let h = cfg.len / rep.ns[k] as f64;
            assert!(
                err <= 5.0 * h.sqrt() * (1.0 + cfg.t_end),
                "eps {} error {err}",
                rep.eps_list[k]
            );
        }
    }

    #[test]
    fn convergence_report_round_trips_and_validates() {
        let mut cfg = tiny_config();
        cfg.t_end = 0.1;
        let rep = run_convergence(&cfg).unwrap();
        rep.validate().unwrap();
        let text = rep.to_json_string().unwrap();
        let back = ConvergenceReport::from_json_str(&text).unwrap();
        assert_eq!(back.errors, rep.errors);
        assert_eq!(back.ns, rep.ns);
        for (a, b) in rep.hbar_slice.iter().zip(&back.hbar_slice) {
            assert_eq!(
                (a.0.to_bits(), a.1.to_bits()),
                (b.0.to_bits(), b.1.to_bits()),
                "slice entry {a:?} vs {b:?}"
            );
        }
    }

    #[test]
    fn plot_files_round_trip() {
        let mut cfg = tiny_config();
        cfg.t_end = 0.1;
        let rep = run_convergence(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&rep, dir.path()).unwrap();
        assert_eq!(files.len(), 3);

        let eps_text = std::fs::read_to_string(dir.path().join("eps_error.csv")).unwrap();
        let mut lines = eps_text.lines();
        assert_eq!(lines.next(), Some("eps,error,ratio"));
        for (k, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[0].parse::<f64>().unwrap(), rep.eps_list[k]);
            assert_eq!(cells[1].parse::<f64>().unwrap(), rep.errors[k]);
        }

        let slice_text = std::fs::read_to_string(dir.path().join("hbar_slice.csv")).unwrap();
        let row1 = slice_text.lines().nth(1).unwrap();
        let cells: Vec<&str> = row1.split(',').collect();
        assert_eq!(cells[0].parse::<f64>().unwrap(), rep.hbar_slice[0].0);
        assert_eq!(cells[1].parse::<f64>().unwrap(), rep.hbar_slice[0].1);

        let prof_text = std::fs::read_to_string(dir.path().join("solution_profiles.csv")).unwrap();
        assert_eq!(prof_text.lines().count(), 1 + rep.profile_x.len());
    }

    #[test]
    fn empty_report_gives_header_only_plot_files() {
        let rep = ConvergenceReport {
            eps_list: vec![],
            errors: vec![],
            ratios: vec![],
            runtimes_ms: vec![],
            ns: vec![],
            dts: vec![],
            thetas: vec![],
            slopes: vec![],
            linfini_margins: vec![],
            linfini_c: 0.0,
            sup_initial: 0.0,
            sup_running: 0.0,
            measurement_n: 0,
            homogenized_n: 0,
            homogenized_runtime_ms: 0.0,
            homogenized_slope: 0.0,
            hbar_slice: vec![],
            profile_x: vec![],
            profile_hom: vec![],
            profiles_eps: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        emit_plot_data(&rep, dir.path()).unwrap();
        for name in ["eps_error.csv", "hbar_slice.csv", "solution_profiles.csv"] {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text.lines().count(), 1, "{name} should be header-only");
        }
    }

    #[test]
    fn suite_is_deterministic_for_a_fixed_seed() {
        let cfg = tiny_config();
        let a = run_property_suite(&cfg).unwrap().to_json_string().unwrap();
        let b = run_property_suite(&cfg).unwrap().to_json_string().unwrap();
        assert_eq!(a, b, "suite reports must serialize to identical bytes");
    }

    #[test]
    fn suite_passes_on_the_tiny_config() {
        let rep = run_property_suite(&tiny_config()).unwrap();
        for line in rep.summary_lines() {
            eprintln!("{line}");
        }
        assert!(rep.passed, "{:#?}", rep.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
    }

    #[test]
    fn seed_change_keeps_the_verdicts() {
        for seed in [1u64, 77, 4096] {
            let mut cfg = tiny_config();
            cfg.suite.seed = seed;
            let rep = run_property_suite(&cfg).unwrap();
            assert!(rep.passed, "seed {seed} flipped a verdict");
        }
    }

    #[test]
    fn coercivity_radius_covers_the_reference_run() {
        let sys = cosine_eikonal_system();
        // c = 3 and sup 2.5 mirror the acceptance sweep's a-priori
        // numbers; the slope radius lands beyond 6 sup + c.
        let rho = coercivity_radius_for(&sys, 3.0, 2.5).unwrap();
        assert!(rho > 10.0 && rho < 12.0, "rho = {rho}");
    }

    #[test]
    fn hull_probe_rejects_a_tight_table() {
        let sys = cosine_eikonal_system();
        let axes = vec![
            AxisSpec::frozen(AxisCoord::X(0), 0.0),
            AxisSpec {
                coord: AxisCoord::R(0),
                min: -0.1,
                max: 0.1,
                count: 3,
            },
            AxisSpec {
                coord: AxisCoord::P(0),
                min: -8.0,
                max: 8.0,
                count: 5,
            },
        ];
        let mut spec = TableBuildSpec::new(&sys, vec![0], axes);
        spec.cell_n = 32;
        let table = build_table(&spec).unwrap();
        let provider = HbarProvider::from_table(table).unwrap();
        let grid = TorusGrid::new(1, 32, 1.0).unwrap();
        let u0 = GridField::sample(grid, |x| (std::f64::consts::TAU * x[0]).sin()).unwrap();
        let err = probe_hull(&provider, &u0).unwrap_err();
        assert!(matches!(err, Error::OutOfHull(_)), "{err}");
    }
}
