//! Explicit monotone time stepping for the coupled evolution system,
//! in two flavors sharing one stepper: the oscillating system with
//! Hamiltonians evaluated at (x, x/ε), and the homogenized system
//! driven by an effective-Hamiltonian provider.
//!
//! The update is forward Euler on the local Lax-Friedrichs flux,
//!
//! ```text
//! u_i ← u_i − dt·[ H_i(x, x/ε, u, central Du_i) − Θ Σ_a (D⁺−D⁻)/2 ]
//! ```
//!
//! with the coupling vector u taken at the old time level. Under
//! dt ≤ cfl·h/(2NΘ) and dt·Λ_r ≤ 1 the update is nondecreasing in every
//! stencil value, which is the discrete comparison principle; we keep
//! dt·Λ_r ≤ 1/2 internally for margin.

use std::collections::HashMap;

use crate::cell::neighbors;
use crate::efftable::{AxisCoord, HBarTable};
use crate::error::{Error, Result};
use crate::expr::EvalArgs;
use crate::grids::{GridField, TorusGrid};
use crate::hamiltonians::{BaseH, Coefficient, Component, CouplingMatrix, HamiltonianSystem};

pub const DEFAULT_CFL: f64 = 0.5;
pub const DEFAULT_MAX_STEPS: usize = 20_000_000;

/// Slack granted to every a-priori inequality the result must satisfy.
const BOUND_SLACK: f64 = 1e-6;

/// Where homogenized runs get H̄ from.
pub enum HbarProvider {
    /// Tabulated values; queries substitute the table's frozen x
    /// coordinates, so an x-independent table serves any domain.
    Table {
        table: HBarTable,
        lip_p: f64,
        lip_r: f64,
    },
    /// The 1-D eikonal weakly coupled closed form, reduced to per-column
    /// max/min/mean statistics (plus raw samples when M > 1 with
    /// genuinely oscillating entries, where the max no longer splits).
    ClosedFormEikonal(ClosedFormEikonal),
    /// A y-independent system evaluated directly; H̄ = H.
    Frozen { system: HamiltonianSystem },
}

pub struct ClosedFormEikonal {
    m: usize,
    col_max: Vec<f64>,
    col_min: Vec<f64>,
    col_mean: Vec<f64>,
    samples: Option<Vec<f64>>,
    audit_n: usize,
}

impl ClosedFormEikonal {
    fn query(&self, i: usize, r: &[f64]) -> (f64, f64) {
        let m = self.m;
        let mut gmean = 0.0;
        for j in 0..m {
            gmean += self.col_mean[j * m + i] * r[j];
        }
        let gmax = match &self.samples {
            Some(s) => {
                let mut best = f64::NEG_INFINITY;
                for k in 0..self.audit_n {
                    let mut g = 0.0;
                    for j in 0..m {
                        g += s[(j * m + i) * self.audit_n + k] * r[j];
                    }
                    best = best.max(g);
                }
                best
            }
            None => {
                // per-column split is exact for M = 1 and for constant
                // entries, the only cases without stored samples
                let mut g = 0.0;
                for j in 0..m {
                    let c = j * m + i;
                    g += if r[j] >= 0.0 {
                        self.col_max[c] * r[j]
                    } else {
                        self.col_min[c] * r[j]
                    };
                }
                g
            }
        };
        (gmax, gmean)
    }
}

impl HbarProvider {
    pub fn from_table(table: HBarTable) -> Result<Self> {
        // the interpolant is piecewise multilinear, so its exact
        // Lipschitz constants are the worst adjacent-node slopes
        let mut lip_p = 0.0f64;
        let mut lip_r = 0.0f64;
        let nodes = table.node_count();
        let axes = table.axes().to_vec();
        let mut strides = vec![1usize; axes.len()];
        for a in (0..axes.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].count;
        }
        for (a, ax) in axes.iter().enumerate() {
            if ax.count < 2 {
                continue;
            }
            let inv_step = 1.0 / ax.step();
            for slot in 0..table.components().len() {
                for k in 0..nodes {
                    let idx_a = (k / strides[a]) % ax.count;
                    if idx_a + 1 == ax.count {
                        continue;
                    }
                    let slope = (table.value_at(slot, k + strides[a]) - table.value_at(slot, k))
                        .abs()
                        * inv_step;
                    match ax.coord {
                        AxisCoord::P(_) => lip_p = lip_p.max(slope),
                        AxisCoord::R(_) => lip_r = lip_r.max(slope),
                        AxisCoord::X(_) => {}
                    }
                }
            }
        }
        Ok(HbarProvider::Table {
            table,
            lip_p,
            lip_r,
        })
    }

    pub fn closed_form_eikonal(c: &CouplingMatrix, audit_n: usize) -> Result<Self> {
        if c.dim() != 1 {
            return Err(Error::Shape(
                "the eikonal closed form covers 1-D oscillation only".into(),
            ));
        }
        let m = c.m();
        let n = audit_n.max(crate::efftable::MIN_AUDIT_N);
        let h = 1.0 / n as f64;
        let mut col_max = vec![f64::NEG_INFINITY; m * m];
        let mut col_min = vec![f64::INFINITY; m * m];
        let mut col_mean = vec![0.0; m * m];
        let mut samples = vec![0.0; m * m * n];
        let mut any_oscillates = false;
        for j in 0..m {
            for i in 0..m {
                let u = c.entry(j, i).var_use();
                if u.x > 0 {
                    return Err(Error::Config(
                        "closed-form provider needs x-independent coupling".into(),
                    ));
                }
                let e = j * m + i;
                let mut sum = 0.0;
                for k in 0..n {
                    let v = c.eval_entry(j, i, &[0.0], &[k as f64 * h]);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("c[{},{}] on the audit lattice", j + 1, i + 1)));
                    }
                    samples[e * n + k] = v;
                    col_max[e] = col_max[e].max(v);
                    col_min[e] = col_min[e].min(v);
                    sum += v;
                }
                col_mean[e] = sum / n as f64;
                if col_max[e] - col_min[e] > 1e-12 {
                    any_oscillates = true;
                }
            }
        }
        Ok(HbarProvider::ClosedFormEikonal(ClosedFormEikonal {
            m,
            col_max,
            col_min,
            col_mean,
            samples: if m > 1 && any_oscillates {
                Some(samples)
            } else {
                None
            },
            audit_n: n,
        }))
    }

    pub fn frozen(system: HamiltonianSystem) -> Result<Self> {
        if !system.y_independent() {
            return Err(Error::Config(
                "a y-dependent system is not its own effective Hamiltonian".into(),
            ));
        }
        Ok(HbarProvider::Frozen { system })
    }

    pub fn m(&self) -> usize {
        match self {
            HbarProvider::Table { table, .. } => table.m(),
            HbarProvider::ClosedFormEikonal(cf) => cf.m,
            HbarProvider::Frozen { system } => system.m(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HbarProvider::Table { table, .. } => table.dim(),
            HbarProvider::ClosedFormEikonal(_) => 1,
            HbarProvider::Frozen { system } => system.dim(),
        }
    }

    pub fn query(&self, i: usize, x: &[f64], r: &[f64], p: &[f64]) -> Result<f64> {
        match self {
            HbarProvider::Table { table, .. } => {
                let mut xq = vec![0.0; table.dim()];
                for spec in table.axes() {
                    if let AxisCoord::X(k) = spec.coord {
                        xq[k] = if spec.count == 1 { spec.min } else { x[k] };
                    }
                }
                table.query(i, &xq, r, p)
            }
            HbarProvider::ClosedFormEikonal(cf) => {
                if i >= cf.m || r.len() != cf.m || p.len() != 1 {
                    return Err(Error::Shape("closed-form query arity".into()));
                }
                let (gmax, gmean) = cf.query(i, r);
                Ok(gmax.max(p[0].abs() + gmean))
            }
            HbarProvider::Frozen { system } => {
                let y = [0.0; 2];
                system.eval(i, x, &y[..system.dim()], r, p)
            }
        }
    }

    pub fn lip_p(&self, radius: f64) -> Result<f64> {
        match self {
            HbarProvider::Table { lip_p, .. } => Ok(*lip_p),
            HbarProvider::ClosedFormEikonal(_) => Ok(1.0),
            HbarProvider::Frozen { system } => system.lip_p_bound(radius),
        }
    }

    pub fn lip_r(&self, radius: f64) -> Result<f64> {
        match self {
            HbarProvider::Table { lip_r, .. } => Ok(*lip_r),
            HbarProvider::ClosedFormEikonal(cf) => {
                let m = cf.m;
                let mut worst = 0.0f64;
                for i in 0..m {
                    let mut sum = 0.0;
                    for j in 0..m {
                        let e = j * m + i;
                        sum += cf.col_max[e].abs().max(cf.col_min[e].abs());
                    }
                    worst = worst.max(sum);
                }
                Ok(worst)
            }
            HbarProvider::Frozen { system } => system.lip_r_bound(radius),
        }
    }
}

pub enum EvolutionSource<'a> {
    Oscillating {
        system: &'a HamiltonianSystem,
        eps: f64,
    },
    Homogenized { provider: &'a HbarProvider },
}

impl<'a> EvolutionSource<'a> {
    fn m(&self) -> usize {
        match self {
            EvolutionSource::Oscillating { system, .. } => system.m(),
            EvolutionSource::Homogenized { provider } => provider.m(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            EvolutionSource::Oscillating { system, .. } => system.dim(),
            EvolutionSource::Homogenized { provider } => provider.dim(),
        }
    }
}

pub struct EvolutionProblem<'a> {
    pub source: EvolutionSource<'a>,
    pub u0: GridField,
    pub t_end: f64,
    pub cfl: f64,
    /// Strictly increasing times in (0, t_end]; the stepper lands on
    /// each exactly and records the state.
    pub snapshot_times: Vec<f64>,
    pub max_steps: usize,
}

pub struct EvolutionResult {
    pub final_state: GridField,
    pub snapshots: Vec<(f64, GridField)>,
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub theta: f64,
    /// Largest sup |u| seen at any accepted step.
    pub sup_running: f64,
    pub sup_initial: f64,
    pub sup_final: f64,
    /// Sampled sup |H(x, x/ε, r, 0)| over |r|_∞ ≤ sup |u0|: the C of
    /// the a-priori bound sup |u(T)| ≤ sup |u0| + C·T.
    pub linfini_c: f64,
    pub max_slope_final: f64,
}

impl EvolutionResult {
    /// Margin of the a-priori sup bound; nonnegative when it holds.
    pub fn linfini_margin(&self, t_end: f64) -> f64 {
        self.sup_initial + self.linfini_c * t_end + BOUND_SLACK - self.sup_running
    }
}

impl<'a> EvolutionProblem<'a> {
    pub fn new(source: EvolutionSource<'a>, u0: GridField, t_end: f64) -> Result<Self> {
        let m = source.m();
        let dim = source.dim();
        if u0.m() != m || u0.grid().dim() != dim {
            return Err(Error::Shape(format!(
                "initial data is {}-component on a {}-D grid; the source wants {m} on {dim}-D",
                u0.m(),
                u0.grid().dim()
            )));
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::Config(format!("final time must be positive, got {t_end}")));
        }
        if let EvolutionSource::Oscillating { eps, .. } = source {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::Config(format!("eps must be positive, got {eps}")));
            }
            let cells = u0.grid().len() / eps;
            if (cells - cells.round()).abs() > 1e-9 * cells.round().max(1.0) || cells < 0.5 {
                return Err(Error::Config(format!(
                    "L/eps = {cells} must be a positive integer so the fast cells tile the domain"
                )));
            }
            let h = u0.grid().spacing();
            if h > eps / 32.0 * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "spacing h = {h} too coarse for eps = {eps}; need h <= eps/32 = {}",
                    eps / 32.0
                )));
            }
        }
        Ok(EvolutionProblem {
            source,
            u0,
            t_end,
            cfl: DEFAULT_CFL,
            snapshot_times: Vec::new(),
            max_steps: DEFAULT_MAX_STEPS,
        })
    }

    fn validate_run(&self) -> Result<Vec<f64>> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        let mut marks = self.snapshot_times.clone();
        for w in marks.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Config("snapshot times must strictly increase".into()));
            }
        }
        if let Some(&t) = marks.first() {
            if t <= 0.0 {
                return Err(Error::Config("snapshot times must be positive".into()));
            }
        }
        if let Some(&t) = marks.last() {
            if t > self.t_end * (1.0 + 1e-12) {
                return Err(Error::Config("snapshot times must not exceed the final time".into()));
            }
        }
        if marks.last().map_or(true, |&t| t < self.t_end * (1.0 - 1e-12)) {
            marks.push(self.t_end);
        } else {
            // a snapshot at T doubles as the final segment end
            *marks.last_mut().unwrap() = self.t_end;
        }
        Ok(marks)
    }

    /// Run to t_end, recording requested snapshots. Fails if the sup
    /// bound sup|u| ≤ sup|u0| + C·t stops holding, which a monotone
    /// step cannot cause.
    pub fn solve(&self) -> Result<EvolutionResult> {
        let marks = self.validate_run()?;
        let mut stepper = Stepper::new(self)?;
        let mut snapshots = Vec::new();
        let mut t = 0.0;
        for &mark in &marks {
            while t < mark * (1.0 - 1e-15) {
                let remaining = mark - t;
                let dt = stepper.next_dt(remaining)?;
                stepper.step(dt)?;
                t += dt;
                if stepper.steps > self.max_steps {
                    return Err(Error::Unstable(format!(
                        "exceeded the {}-step budget at t = {t}",
                        self.max_steps
                    )));
                }
                let bound = stepper.sup0 + stepper.linfini_c * t + BOUND_SLACK;
                if stepper.sup_now > bound {
                    return Err(Error::Unstable(format!(
                        "sup |u| = {} exceeds the a-priori bound {bound} at t = {t}",
                        stepper.sup_now
                    )));
                }
                t = if (mark - t).abs() < 1e-15 * mark.max(1.0) { mark } else { t };
            }
            if mark < self.t_end * (1.0 - 1e-12) || self.snapshot_times.iter().any(|&s| (s - mark).abs() < 1e-12) {
                snapshots.push((mark, stepper.field()?));
            }
            t = mark;
        }
        stepper.finish(self.t_end, snapshots)
    }
}

/// One explicit update of `state` under the problem's scheme; the dt
/// contract is enforced, not assumed.
pub fn step_once(problem: &EvolutionProblem, state: &GridField, dt: f64) -> Result<GridField> {
    if state.m() != problem.u0.m() || state.grid() != problem.u0.grid() {
        return Err(Error::GridMismatch("state does not live on the problem grid".into()));
    }
    let mut stepper = Stepper::new(problem)?;
    stepper.u = state.values().to_vec();
    // the a-priori radius was sized for u0; widen Λ_r if this state
    // sits outside it
    let sup_state = state.sup_norm();
    if sup_state + 1.0 > stepper.radius_star {
        stepper.lambda_r = match problem.source {
            EvolutionSource::Oscillating { system, .. } => system.lip_r_bound(sup_state + 1.0)?,
            EvolutionSource::Homogenized { provider } => provider.lip_r(sup_state + 1.0)?,
        };
    }
    let allowed = stepper.next_dt(f64::INFINITY)?;
    if !(dt > 0.0 && dt <= allowed * (1.0 + 1e-12)) {
        return Err(Error::Unstable(format!(
            "dt = {dt} violates the monotonicity bound {allowed}"
        )));
    }
    stepper.step(dt)?;
    stepper.field()
}

struct Stepper<'p, 'a> {
    prob: &'p EvolutionProblem<'a>,
    grid: TorusGrid,
    m: usize,
    dim: usize,
    nodes: usize,
    u: Vec<f64>,
    next: Vec<f64>,
    xs: Vec<[f64; 2]>,
    ys: Vec<[f64; 2]>,
    plans: Vec<CompPlan>,
    sup0: f64,
    linfini_c: f64,
    lambda_r: f64,
    radius_star: f64,
    theta_cache: HashMap<u64, f64>,
    theta_max: f64,
    dt_bound: f64,
    dt_min: f64,
    dt_max: f64,
    sup_now: f64,
    sup_running: f64,
    steps: usize,
}

/// Per-component fast paths for the oscillating source, frozen at grid
/// construction. Homogenized components always query the provider.
enum CompPlan {
    /// H = speed[k]·|q| + Σ_j coupling[j·nodes + k]·r_j.
    AffineNorm { speed: Vec<f64>, coupling: Vec<f64> },
    /// H = speed[k]·|q| + F(r), F nonlinear through an expression.
    EikonalF { speed: Vec<f64>, f: Coefficient },
    General,
    Homogenized,
}

impl<'p, 'a> Stepper<'p, 'a> {
    fn new(prob: &'p EvolutionProblem<'a>) -> Result<Self> {
        let grid = prob.u0.grid();
        let m = prob.u0.m();
        let dim = grid.dim();
        let nodes = grid.node_count();
        let mut xs = Vec::with_capacity(nodes);
        let mut ys = Vec::with_capacity(nodes);
        let eps = match prob.source {
            EvolutionSource::Oscillating { eps, .. } => eps,
            EvolutionSource::Homogenized { .. } => 1.0,
        };
        for k in 0..nodes {
            let c = grid.coords(k);
            xs.push(c);
            let fast = |v: f64| {
                let y = (v / eps).rem_euclid(1.0);
                if y >= 1.0 {
                    0.0
                } else {
                    y
                }
            };
            ys.push([fast(c[0]), fast(c[1])]);
        }

        let plans: Vec<CompPlan> = match prob.source {
            EvolutionSource::Homogenized { .. } => (0..m).map(|_| CompPlan::Homogenized).collect(),
            EvolutionSource::Oscillating { system, .. } => (0..m)
                .map(|i| build_plan(system, i, &xs, &ys))
                .collect::<Result<_>>()?,
        };

        let sup0 = prob.u0.sup_norm();
        let linfini_c = sample_linfini_c(prob, &xs, &ys, sup0)?;
        let radius_star = sup0 + linfini_c * prob.t_end + 1.0;
        let lambda_r = match prob.source {
            EvolutionSource::Oscillating { system, .. } => system.lip_r_bound(radius_star)?,
            EvolutionSource::Homogenized { provider } => provider.lip_r(radius_star)?,
        };

        let sup_now = sup0;
        Ok(Stepper {
            prob,
            grid,
            m,
            dim,
            nodes,
            u: prob.u0.values().to_vec(),
            next: vec![0.0; m * nodes],
            xs,
            ys,
            plans,
            sup0,
            linfini_c,
            lambda_r,
            radius_star,
            theta_cache: HashMap::new(),
            theta_max: 0.0,
            dt_bound: f64::INFINITY,
            dt_min: f64::INFINITY,
            dt_max: 0.0,
            sup_now,
            sup_running: sup_now,
            steps: 0,
        })
    }

    fn theta_at(&mut self, radius: f64) -> Result<f64> {
        let q = radius.max(self.radius_star).ceil().max(1.0);
        let key = q as u64;
        if let Some(&th) = self.theta_cache.get(&key) {
            return Ok(th);
        }
        let th = match self.prob.source {
            EvolutionSource::Oscillating { system, .. } => system.lip_p_bound(q)?,
            EvolutionSource::Homogenized { provider } => provider.lip_p(q)?,
        };
        self.theta_cache.insert(key, th);
        self.theta_max = self.theta_max.max(th);
        Ok(th)
    }

    /// Largest dt the monotonicity contract allows right now, clamped
    /// nonincreasing over the run and cut to land exactly on the
    /// segment end.
    fn next_dt(&mut self, remaining: f64) -> Result<f64> {
        let slope = max_upwind_slope_raw(&self.u, self.grid, self.m);
        let theta = self.theta_at(slope + 1.0)?;
        let h = self.grid.spacing();
        let mut bound = if theta > 0.0 {
            self.prob.cfl * h / (2.0 * self.dim as f64 * theta)
        } else {
            f64::INFINITY
        };
        if self.lambda_r > 0.0 {
            bound = bound.min(0.5 / self.lambda_r);
        }
        bound = bound.min(self.dt_bound);
        self.dt_bound = bound;
        if !(bound > 0.0) {
            return Err(Error::Unstable(format!("time step collapsed to {bound}")));
        }
        if !remaining.is_finite() {
            return Ok(bound);
        }
        let steps = (remaining / bound).ceil().max(1.0);
        Ok(remaining / steps)
    }

    fn step(&mut self, dt: f64) -> Result<()> {
        let n = self.grid.n();
        let inv_h = 1.0 / self.grid.spacing();
        let slope = max_upwind_slope_raw(&self.u, self.grid, self.m);
        let theta = self.theta_at(slope + 1.0)?;
        let half_theta = 0.5 * theta;
        let dim = self.dim;
        let nodes = self.nodes;
        let mut r_buf = vec![0.0f64; self.m];
        let mut sup = 0.0f64;
        for i in 0..self.m {
            let (plan, u_i) = (&self.plans[i], &self.u[i * nodes..(i + 1) * nodes]);
            let out = &mut self.next[i * nodes..(i + 1) * nodes];
            match plan {
                CompPlan::AffineNorm { speed, coupling } if dim == 1 => {
                    for k in 0..nodes {
                        let wl = u_i[if k == 0 { nodes - 1 } else { k - 1 }];
                        let wr = u_i[if k + 1 == nodes { 0 } else { k + 1 }];
                        let dm = (u_i[k] - wl) * inv_h;
                        let dp = (wr - u_i[k]) * inv_h;
                        let q = 0.5 * (dm + dp);
                        let mut h_val = speed[k] * q.abs();
                        for j in 0..self.m {
                            h_val += coupling[j * nodes + k] * self.u[j * nodes + k];
                        }
                        out[k] = u_i[k] - dt * (h_val - half_theta * (dp - dm));
                    }
                }
                _ => {
                    let mut q = [0.0f64; 2];
                    for k in 0..nodes {
                        let mut diss = 0.0;
                        for a in 0..dim {
                            let (km, kp) = neighbors(k, a, n, dim);
                            let dm = (u_i[k] - u_i[km]) * inv_h;
                            let dp = (u_i[kp] - u_i[k]) * inv_h;
                            q[a] = 0.5 * (dm + dp);
                            diss += half_theta * (dp - dm);
                        }
                        for j in 0..self.m {
                            r_buf[j] = self.u[j * nodes + k];
                        }
                        let h_val = match plan {
                            CompPlan::AffineNorm { speed, coupling } => {
                                let nq = (q[0] * q[0] + q[1] * q[1]).sqrt();
                                let mut v = speed[k] * nq;
                                for j in 0..self.m {
                                    v += coupling[j * nodes + k] * r_buf[j];
                                }
                                v
                            }
                            CompPlan::EikonalF { speed, f } => {
                                let nq = match dim {
                                    1 => q[0].abs(),
                                    _ => (q[0] * q[0] + q[1] * q[1]).sqrt(),
                                };
                                speed[k] * nq
                                    + f.eval(&EvalArgs::new(&[], &[], &r_buf, &[]))
                            }
                            CompPlan::General => {
                                let sys = match self.prob.source {
                                    EvolutionSource::Oscillating { system, .. } => system,
                                    _ => unreachable!("general plan implies oscillating source"),
                                };
                                sys.eval(
                                    i,
                                    &self.xs[k][..dim],
                                    &self.ys[k][..dim],
                                    &r_buf,
                                    &q[..dim],
                                )?
                            }
                            CompPlan::Homogenized => {
                                let provider = match self.prob.source {
                                    EvolutionSource::Homogenized { provider } => provider,
                                    _ => unreachable!("homogenized plan implies homogenized source"),
                                };
                                provider.query(i, &self.xs[k][..dim], &r_buf, &q[..dim])?
                            }
                        };
                        if !h_val.is_finite() {
                            return Err(Error::NonFinite(format!(
                                "H at node {k}, component {}",
                                i + 1
                            )));
                        }
                        out[k] = u_i[k] - dt * (h_val - diss);
                    }
                }
            }
            for &v in out.iter() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("state after step {}", self.steps + 1)));
                }
                sup = sup.max(v.abs());
            }
        }
        std::mem::swap(&mut self.u, &mut self.next);
        self.sup_now = sup;
        self.sup_running = self.sup_running.max(sup);
        self.dt_min = self.dt_min.min(dt);
        self.dt_max = self.dt_max.max(dt);
        self.steps += 1;
        Ok(())
    }

    fn field(&self) -> Result<GridField> {
        GridField::from_values(self.grid, self.m, self.u.clone())
    }

    fn finish(self, t_end: f64, snapshots: Vec<(f64, GridField)>) -> Result<EvolutionResult> {
        let final_state = self.field()?;
        let result = EvolutionResult {
            sup_final: final_state.sup_norm(),
            max_slope_final: final_state.max_upwind_slope(),
            final_state,
            snapshots,
            steps: self.steps,
            dt_min: if self.steps == 0 { 0.0 } else { self.dt_min },
            dt_max: self.dt_max,
            theta: self.theta_max,
            sup_running: self.sup_running,
            sup_initial: self.sup0,
            linfini_c: self.linfini_c,
        };
        if result.linfini_margin(t_end) < 0.0 {
            return Err(Error::Unstable(format!(
                "final sup {} breaks the a-priori bound {}",
                result.sup_running,
                result.sup_initial + result.linfini_c * t_end
            )));
        }
        Ok(result)
    }
}

fn build_plan(
    sys: &HamiltonianSystem,
    i: usize,
    xs: &[[f64; 2]],
    ys: &[[f64; 2]],
) -> Result<CompPlan> {
    let dim = sys.dim();
    let nodes = xs.len();
    let sample = |c: &Coefficient| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let v = c.eval(&EvalArgs::new(&xs[k][..dim], &ys[k][..dim], &[], &[]));
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("coefficient at node {k}")));
            }
            out.push(v);
        }
        Ok(out)
    };
    match sys.component(i)? {
        Component::Eikonal {
            speed, coupling_f, ..
        } => Ok(CompPlan::EikonalF {
            speed: sample(speed)?,
            f: coupling_f.clone(),
        }),
        Component::WeaklyCoupled { base, coupling } => {
            let speed = match base {
                BaseH::Norm => vec![1.0; nodes],
                BaseH::WeightedNorm(a) => sample(a)?,
                BaseH::General(_) => return Ok(CompPlan::General),
            };
            let m = coupling.len();
            let mut coup = vec![0.0; m * nodes];
            for (j, c) in coupling.iter().enumerate() {
                coup[j * nodes..(j + 1) * nodes].copy_from_slice(&sample(c)?);
            }
            Ok(CompPlan::AffineNorm {
                speed,
                coupling: coup,
            })
        }
        Component::Custom { .. } => Ok(CompPlan::General),
    }
}

/// C of the a-priori bound: sampled sup |H(x, x/ε, r, 0)| over the grid
/// with r at the corners of |r|_∞ ≤ sup |u0| (linear coupling attains
/// its sup there) plus the origin.
fn sample_linfini_c(
    prob: &EvolutionProblem,
    xs: &[[f64; 2]],
    ys: &[[f64; 2]],
    sup0: f64,
) -> Result<f64> {
    let m = prob.u0.m();
    let dim = prob.u0.grid().dim();
    let zero_p = [0.0f64; 2];
    let mut corners: Vec<Vec<f64>> = vec![vec![0.0; m]];
    for mask in 0..(1usize << m) {
        let r: Vec<f64> = (0..m)
            .map(|j| if (mask >> j) & 1 == 1 { sup0 } else { -sup0 })
            .collect();
        corners.push(r);
    }
    let mut c = 0.0f64;
    for (k, x) in xs.iter().enumerate() {
        for r in &corners {
            for i in 0..m {
                let v = match prob.source {
                    EvolutionSource::Oscillating { system, .. } => {
                        system.eval(i, &x[..dim], &ys[k][..dim], r, &zero_p[..dim])?
                    }
                    EvolutionSource::Homogenized { provider } => {
                        provider.query(i, &x[..dim], r, &zero_p[..dim])?
                    }
                };
                c = c.max(v.abs());
            }
        }
    }
    Ok(c)
}

fn max_upwind_slope_raw(values: &[f64], grid: TorusGrid, m: usize) -> f64 {
    let n = grid.n();
    let dim = grid.dim();
    let nodes = grid.node_count();
    let inv_h = 1.0 / grid.spacing();
    let mut worst = 0.0f64;
    for c in 0..m {
        let u = &values[c * nodes..(c + 1) * nodes];
        for k in 0..nodes {
            for a in 0..dim {
                let (_, kp) = neighbors(k, a, n, dim);
                worst = worst.max(((u[kp] - u[k]) * inv_h).abs());
            }
        }
    }
    worst
}

/// Outcome of the two-run comparison test: the max-type functional
/// max_j sup_x (u_j − v_j) must never exceed its initial positive part.
pub struct ComparisonOutcome {
    pub initial_gap_plus: f64,
    /// Worst over all steps of gap(t) − gap⁺(0); ≤ BOUND_SLACK when the
    /// discrete comparison principle holds.
    pub worst_excess: f64,
    pub passed: bool,
    pub steps: usize,
    /// (t, gap(t)) at each recorded snapshot time plus the final time.
    pub gap_history: Vec<(f64, f64)>,
}

fn max_gap(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .fold(f64::NEG_INFINITY, |acc, (a, b)| acc.max(a - b))
}

/// Evolve two initial states under the same Hamiltonian with a shared
/// step sequence, checking the comparison bound at every step.
pub fn check_comparison(
    source: EvolutionSource,
    u0_low: GridField,
    u0_high: GridField,
    t_end: f64,
    snapshot_times: Vec<f64>,
) -> Result<ComparisonOutcome> {
    if u0_low.grid() != u0_high.grid() || u0_low.m() != u0_high.m() {
        return Err(Error::GridMismatch(
            "comparison data must share one grid and component count".into(),
        ));
    }
    let (p_low, p_high) = match source {
        EvolutionSource::Oscillating { system, eps } => (
            EvolutionProblem::new(EvolutionSource::Oscillating { system, eps }, u0_low, t_end)?,
            EvolutionProblem::new(EvolutionSource::Oscillating { system, eps }, u0_high, t_end)?,
        ),
        EvolutionSource::Homogenized { provider } => (
            EvolutionProblem::new(EvolutionSource::Homogenized { provider }, u0_low, t_end)?,
            EvolutionProblem::new(EvolutionSource::Homogenized { provider }, u0_high, t_end)?,
        ),
    };
    let mut a = Stepper::new(&p_low)?;
    let mut b = Stepper::new(&p_high)?;
    let gap0 = max_gap(&a.u, &b.u).max(0.0);
    let mut worst = f64::NEG_INFINITY;
    let mut history = Vec::new();
    let mut marks = snapshot_times;
    if marks.last().map_or(true, |&t| t < t_end * (1.0 - 1e-12)) {
        marks.push(t_end);
    }
    let mut t = 0.0;
    history.push((0.0, max_gap(&a.u, &b.u)));
    for &mark in &marks {
        while t < mark * (1.0 - 1e-15) {
            let remaining = mark - t;
            let dt = a.next_dt(remaining)?.min(b.next_dt(remaining)?);
            a.step(dt)?;
            b.step(dt)?;
            t += dt;
            worst = worst.max(max_gap(&a.u, &b.u) - gap0);
            t = if (mark - t).abs() < 1e-15 * mark.max(1.0) { mark } else { t };
        }
        history.push((mark, max_gap(&a.u, &b.u)));
        t = mark;
    }
    let steps = a.steps;
    Ok(ComparisonOutcome {
        initial_gap_plus: gap0,
        worst_excess: worst,
        passed: worst <= BOUND_SLACK,
        steps,
        gap_history: history,
    })
}
