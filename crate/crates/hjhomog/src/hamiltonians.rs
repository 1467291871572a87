//! Weakly coupled Hamiltonian systems H_i(x, y, r, p), i = 1..M, on a
//! periodic fast variable y ∈ T^N.
//!
//! The fast variable is reduced mod 1 before every evaluation, so H is
//! 1-periodic in y by construction. Three component families are
//! supported:
//!
//!   eikonal         a_i(x,y)·|p| + F_i(r),      a_i ≥ δ_i > 0
//!   weakly coupled  G_i(x,y,p) + Σ_j c_{ji}(x,y)·r_j
//!   custom          opaque H_i(x,y,r,p) with user-declared bounds
//!
//! In coupling matrices c_{ji} is the coefficient of r_j in equation i,
//! so equation i couples through column i.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::expr::{expr_norm_1d, EvalArgs, Expr, VarUse};
use crate::grids::{GridField, TorusGrid};
use crate::report::CheckReport;

pub const DEFAULT_LIP_RESOLUTION: usize = 64;
/// Sampled Lipschitz estimates are evidence, not proof; they get this
/// much headroom before use in CFL conditions.
pub const LIP_SAFETY: f64 = 1.1;

/// Scalar coefficient: a constant, a parsed analytic expression, or
/// node values on the unit cell interpolated in y.
#[derive(Clone, Debug)]
pub enum Coefficient {
    Const(f64),
    Expr { src: String, ast: Expr },
    Grid(GridField),
}

impl Coefficient {
    pub fn parse(src: &str) -> Result<Coefficient> {
        let ast = Expr::parse(src)?;
        Ok(match ast {
            Expr::Const(c) => Coefficient::Const(c),
            ast => Coefficient::Expr {
                src: src.to_string(),
                ast,
            },
        })
    }

    pub fn grid_1d(values: Vec<f64>) -> Result<Coefficient> {
        let grid = TorusGrid::new(1, values.len(), 1.0)?;
        Ok(Coefficient::Grid(GridField::from_values(grid, 1, values)?))
    }

    /// NaN on out-of-range variables or broken grids; callers surface
    /// non-finite results as errors.
    pub fn eval(&self, a: &EvalArgs) -> f64 {
        match self {
            Coefficient::Const(c) => *c,
            Coefficient::Expr { ast, .. } => ast.eval(a),
            Coefficient::Grid(f) => {
                let dim = f.grid().dim();
                if a.y.len() < dim {
                    return f64::NAN;
                }
                f.interpolate(&a.y[..dim]).unwrap_or(f64::NAN)
            }
        }
    }

    pub fn var_use(&self) -> VarUse {
        match self {
            Coefficient::Const(_) => VarUse::default(),
            Coefficient::Expr { ast, .. } => ast.var_use(),
            Coefficient::Grid(f) => VarUse {
                y: f.grid().dim(),
                ..VarUse::default()
            },
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Coefficient::Const(c) => Some(*c),
            _ => None,
        }
    }
}

/// The p-part of a weakly coupled component.
#[derive(Clone, Debug)]
pub enum BaseH {
    /// Euclidean norm |p|.
    Norm,
    /// a(x,y)·|p|.
    WeightedNorm(Coefficient),
    /// Arbitrary G(x,y,p).
    General(Coefficient),
}

#[derive(Clone, Debug)]
pub enum Component {
    Eikonal {
        speed: Coefficient,
        delta: f64,
        coupling_f: Coefficient,
    },
    WeaklyCoupled {
        base: BaseH,
        /// Column entries c_{ji}, j = 1..M, for this equation.
        coupling: Vec<Coefficient>,
    },
    Custom {
        eval: Coefficient,
        lip_p: Option<f64>,
        lip_r: Option<f64>,
        convex_in_p: bool,
    },
}

impl Component {
    fn default_convex_in_p(&self) -> bool {
        match self {
            Component::Eikonal { .. } => true,
            Component::WeaklyCoupled { base, .. } => {
                matches!(base, BaseH::Norm | BaseH::WeightedNorm(_))
            }
            Component::Custom { convex_in_p, .. } => *convex_in_p,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HamiltonianSystem {
    m: usize,
    dim: usize,
    components: Vec<Component>,
    convex_in_p: Vec<bool>,
}

fn norm(p: &[f64]) -> f64 {
    match p.len() {
        1 => p[0].abs(),
        _ => (p[0] * p[0] + p[1] * p[1]).sqrt(),
    }
}

fn check_coef(c: &Coefficient, m: usize, dim: usize, allow: VarUse, role: &str) -> Result<()> {
    let u = c.var_use();
    let over = |used: usize, cap: usize, group: &str| -> Result<()> {
        if used > cap {
            Err(Error::BadVariable {
                name: format!("{group}{used}"),
                context: format!("{role} with M={m}, N={dim}"),
            })
        } else {
            Ok(())
        }
    };
    over(u.x, allow.x, "x")?;
    over(u.y, allow.y, "y")?;
    over(u.r, allow.r, "r")?;
    over(u.p, allow.p, "p")?;
    if let Coefficient::Grid(f) = c {
        if f.grid().dim() != dim || f.grid().len() != 1.0 {
            return Err(Error::Shape(format!(
                "grid coefficient for {role} must live on the {dim}-D unit cell"
            )));
        }
        if f.m() != 1 {
            return Err(Error::Shape(format!("grid coefficient for {role} must be scalar")));
        }
    }
    Ok(())
}

impl HamiltonianSystem {
    pub fn new(dim: usize, components: Vec<Component>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Shape(format!("N must be 1 or 2, got {dim}")));
        }
        let m = components.len();
        if m == 0 {
            return Err(Error::Shape("a system needs at least one component".into()));
        }
        let xy = VarUse {
            x: dim,
            y: dim,
            r: 0,
            p: 0,
        };
        for (i, comp) in components.iter().enumerate() {
            match comp {
                Component::Eikonal {
                    speed,
                    delta,
                    coupling_f,
                } => {
                    if !(delta.is_finite() && *delta > 0.0) {
                        return Err(Error::Config(format!(
                            "component {}: eikonal delta must be positive, got {delta}",
                            i + 1
                        )));
                    }
                    check_coef(speed, m, dim, xy, "eikonal speed")?;
                    check_coef(
                        coupling_f,
                        m,
                        dim,
                        VarUse { x: 0, y: 0, r: m, p: 0 },
                        "eikonal coupling F(r)",
                    )?;
                }
                Component::WeaklyCoupled { base, coupling } => {
                    if coupling.len() != m {
                        return Err(Error::Shape(format!(
                            "component {}: coupling column has {} entries, system has M={m}",
                            i + 1,
                            coupling.len()
                        )));
                    }
                    match base {
                        BaseH::Norm => {}
                        BaseH::WeightedNorm(a) => check_coef(a, m, dim, xy, "base weight")?,
                        BaseH::General(g) => check_coef(
                            g,
                            m,
                            dim,
                            VarUse { x: dim, y: dim, r: 0, p: dim },
                            "base Hamiltonian",
                        )?,
                    }
                    for (j, c) in coupling.iter().enumerate() {
                        check_coef(c, m, dim, xy, &format!("coupling c[{},{}]", j + 1, i + 1))?;
                    }
                }
                Component::Custom { eval, lip_p, lip_r, .. } => {
                    check_coef(
                        eval,
                        m,
                        dim,
                        VarUse { x: dim, y: dim, r: m, p: dim },
                        "custom Hamiltonian",
                    )?;
                    for (name, b) in [("lip_p", lip_p), ("lip_r", lip_r)] {
                        if let Some(b) = b {
                            if !(b.is_finite() && *b >= 0.0) {
                                return Err(Error::Config(format!(
                                    "component {}: declared {name} must be a nonnegative real",
                                    i + 1
                                )));
                            }
                        }
                    }
                }
            }
        }
        let convex = components.iter().map(|c| c.default_convex_in_p()).collect();
        Ok(HamiltonianSystem {
            m,
            dim,
            components,
            convex_in_p: convex,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component(&self, i: usize) -> Result<&Component> {
        self.components
            .get(i)
            .ok_or(Error::ComponentIndex { index: i, m: self.m })
    }

    pub fn convex_in_p(&self, i: usize) -> bool {
        self.convex_in_p.get(i).copied().unwrap_or(false)
    }

    pub fn set_convex_in_p(&mut self, i: usize, flag: bool) {
        if let Some(slot) = self.convex_in_p.get_mut(i) {
            *slot = flag;
        }
    }

    /// Reduce the fast variable into [0,1) per axis. Exact on dyadic
    /// rationals, which is what the periodicity property tests rely on.
    pub fn canonical_y(&self, y: &[f64]) -> [f64; 2] {
        let mut out = [0.0f64; 2];
        for (k, v) in y.iter().take(self.dim).enumerate() {
            let mut w = v.rem_euclid(1.0);
            if w >= 1.0 {
                w = 0.0;
            }
            out[k] = w;
        }
        out
    }

    pub fn eval(&self, i: usize, x: &[f64], y: &[f64], r: &[f64], p: &[f64]) -> Result<f64> {
        let comp = self.component(i)?;
        if x.len() != self.dim || y.len() != self.dim || p.len() != self.dim {
            return Err(Error::Shape(format!(
                "x/y/p must have N={} coordinates (got {}, {}, {})",
                self.dim,
                x.len(),
                y.len(),
                p.len()
            )));
        }
        if r.len() != self.m {
            return Err(Error::Shape(format!(
                "r must have M={} components, got {}",
                self.m,
                r.len()
            )));
        }
        for v in x.iter().chain(y).chain(r).chain(p) {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("input {v}")));
            }
        }
        let yc = self.canonical_y(y);
        let args = EvalArgs::new(x, &yc[..self.dim], r, p);
        let v = eval_component(comp, &args, p);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "H_{} at x={x:?} y={y:?} r={r:?} p={p:?}",
                i + 1
            )));
        }
        Ok(v)
    }

    /// Column-assembled coupling matrix, available when every component
    /// is of the weakly coupled family.
    pub fn coupling_matrix(&self) -> Option<CouplingMatrix> {
        let mut entries = vec![Coefficient::Const(0.0); self.m * self.m];
        for (i, comp) in self.components.iter().enumerate() {
            match comp {
                Component::WeaklyCoupled { coupling, .. } => {
                    for (j, c) in coupling.iter().enumerate() {
                        entries[j * self.m + i] = c.clone();
                    }
                }
                _ => return None,
            }
        }
        Some(CouplingMatrix {
            m: self.m,
            dim: self.dim,
            entries,
        })
    }

    /// True when no coefficient reads the fast variable y; H is then its
    /// own effective Hamiltonian and correctors vanish.
    pub fn y_independent(&self) -> bool {
        self.components.iter().all(|c| match c {
            Component::Eikonal {
                speed, coupling_f, ..
            } => speed.var_use().y == 0 && coupling_f.var_use().y == 0,
            Component::WeaklyCoupled { base, coupling } => {
                let b = match base {
                    BaseH::Norm => true,
                    BaseH::WeightedNorm(a) | BaseH::General(a) => a.var_use().y == 0,
                };
                b && coupling.iter().all(|c| c.var_use().y == 0)
            }
            Component::Custom { eval, .. } => eval.var_use().y == 0,
        })
    }

    /// Declared or sampled bound on sup |∂H_i/∂p| over |r|,|p| ≤ radius,
    /// maximized over components.
    pub fn lip_p_bound(&self, radius: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..self.m {
            let b = match self.components[i] {
                Component::Custom { lip_p: Some(b), .. } => b,
                _ => estimate_lip_p(self, i, radius, DEFAULT_LIP_RESOLUTION)?,
            };
            worst = worst.max(b);
        }
        Ok(worst)
    }

    /// Same for the coupling variable r (ℓ∞ operator norm of ∂H/∂r).
    pub fn lip_r_bound(&self, radius: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..self.m {
            let b = match self.components[i] {
                Component::Custom { lip_r: Some(b), .. } => b,
                _ => estimate_lip_r(self, i, radius, DEFAULT_LIP_RESOLUTION)?,
            };
            worst = worst.max(b);
        }
        Ok(worst)
    }
}

pub(crate) fn eval_component(comp: &Component, args: &EvalArgs, p: &[f64]) -> f64 {
    match comp {
        Component::Eikonal {
            speed, coupling_f, ..
        } => speed.eval(args) * norm(p) + coupling_f.eval(args),
        Component::WeaklyCoupled { base, coupling } => {
            let b = match base {
                BaseH::Norm => norm(p),
                BaseH::WeightedNorm(a) => a.eval(args) * norm(p),
                BaseH::General(g) => g.eval(args),
            };
            let mut acc = b;
            for (j, c) in coupling.iter().enumerate() {
                acc += c.eval(args) * args.r.get(j).copied().unwrap_or(f64::NAN);
            }
            acc
        }
        Component::Custom { eval, .. } => eval.eval(args),
    }
}

/// M×M matrix of coupling coefficients; `entry(j, i)` is c_{ji}, the
/// coefficient of r_j in equation i.
#[derive(Clone, Debug)]
pub struct CouplingMatrix {
    m: usize,
    dim: usize,
    entries: Vec<Coefficient>,
}

impl CouplingMatrix {
    pub fn new(m: usize, dim: usize, entries: Vec<Coefficient>) -> Result<Self> {
        if m == 0 || entries.len() != m * m {
            return Err(Error::Shape(format!(
                "coupling matrix needs {}x{} entries, got {}",
                m,
                m,
                entries.len()
            )));
        }
        if !(1..=2).contains(&dim) {
            return Err(Error::Shape(format!("N must be 1 or 2, got {dim}")));
        }
        for (k, e) in entries.iter().enumerate() {
            check_coef(
                e,
                m,
                dim,
                VarUse { x: dim, y: dim, r: 0, p: 0 },
                &format!("coupling entry {k}"),
            )?;
        }
        Ok(CouplingMatrix { m, dim, entries })
    }

    pub fn constant(m: usize, values: &[f64]) -> Result<Self> {
        CouplingMatrix::new(m, 1, values.iter().map(|v| Coefficient::Const(*v)).collect())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, j: usize, i: usize) -> &Coefficient {
        &self.entries[j * self.m + i]
    }

    pub fn eval_entry(&self, j: usize, i: usize, x: &[f64], y: &[f64]) -> f64 {
        self.entry(j, i).eval(&EvalArgs::new(x, y, &[], &[]))
    }

    /// All-constant value table indexed (j, i), if no entry depends on (x,y).
    pub fn constant_values(&self) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.m * self.m);
        for e in &self.entries {
            if !e.var_use().is_constant() {
                return None;
            }
            out.push(e.eval(&EvalArgs::new(&[], &[], &[], &[])));
        }
        Some(out)
    }
}

/// Degenerate-ellipticity check for coupling coefficients: diagonal ≥ 0,
/// off-diagonal ≤ 0, column sums Σ_j c_{ji} ≥ 0, at every sampled (x,y).
pub fn check_a1_coefficients(c: &CouplingMatrix, sample_n: usize) -> Result<CheckReport> {
    let mut rep = CheckReport::new("coupling-signs-and-dominance");
    let sample_n = sample_n.max(2);
    let uses_x = c.entries.iter().any(|e| e.var_use().x > 0);
    let pts = lattice_points(c.dim, sample_n);
    let xs: Vec<[f64; 2]> = if uses_x {
        lattice_points(c.dim, sample_n.min(16))
    } else {
        vec![[0.0; 2]]
    };
    let thr = -1e-12;
    for x in &xs {
        for y in &pts {
            let xs_ = &x[..c.dim];
            let ys_ = &y[..c.dim];
            for i in 0..c.m {
                let mut col_sum = 0.0;
                for j in 0..c.m {
                    let v = c.eval_entry(j, i, xs_, ys_);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("c[{},{}] at y={ys_:?}", j + 1, i + 1)));
                    }
                    col_sum += v;
                    if j == i {
                        rep.record(v, thr, || {
                            format!("diagonal c[{0},{0}] = {v} < 0 at x={xs_:?} y={ys_:?}", i + 1)
                        });
                    } else {
                        rep.record(-v, thr, || {
                            format!("off-diagonal c[{},{}] = {v} > 0 at x={xs_:?} y={ys_:?}", j + 1, i + 1)
                        });
                    }
                }
                rep.record(col_sum, thr, || {
                    format!("column sum Σ_j c[j,{}] = {col_sum} < 0 at x={xs_:?} y={ys_:?}", i + 1)
                });
            }
        }
    }
    Ok(rep)
}

/// Systemwide monotonicity probe: for sampled pairs r, s with
/// r_j − s_j = max_k (r_k − s_k) ≥ 0, equation j must satisfy
/// H_j(x,y,r,p) ≥ H_j(x,y,s,p).
pub fn check_a3(
    sys: &HamiltonianSystem,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let mut rep = CheckReport::new("system-monotonicity");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0usize;
    let mut drawn = 0usize;
    let max_draws = samples.saturating_mul(20).max(64);
    while accepted < samples && drawn < max_draws {
        drawn += 1;
        let x = draw_point(&mut rng, sys.dim, 1.0);
        let y = draw_point(&mut rng, sys.dim, 1.0);
        let p = draw_point(&mut rng, sys.dim, radius);
        let r: Vec<f64> = (0..sys.m).map(|_| rng.gen_range(-radius..=radius)).collect();
        let s: Vec<f64> = (0..sys.m).map(|_| rng.gen_range(-radius..=radius)).collect();
        let gap: Vec<f64> = r.iter().zip(&s).map(|(a, b)| a - b).collect();
        let top = gap.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top < 0.0 {
            continue;
        }
        accepted += 1;
        for j in 0..sys.m {
            if gap[j] < top - 1e-12 {
                continue;
            }
            let hr = sys.eval(j, &x[..sys.dim], &y[..sys.dim], &r, &p[..sys.dim])?;
            let hs = sys.eval(j, &x[..sys.dim], &y[..sys.dim], &s, &p[..sys.dim])?;
            let margin = hr - hs;
            let thr = -1e-9 * (1.0 + hr.abs() + hs.abs());
            rep.record(margin, thr, || {
                format!(
                    "H_{}({r:?}) - H_{}({s:?}) = {margin:.3e} at y={:?} p={:?}",
                    j + 1,
                    j + 1,
                    &y[..sys.dim],
                    &p[..sys.dim]
                )
            });
        }
    }
    rep.note(format!("{accepted} ordered pairs from {drawn} draws"));
    Ok(rep)
}

fn draw_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> [f64; 2] {
    let mut out = [0.0f64; 2];
    for slot in out.iter_mut().take(dim) {
        *slot = rng.gen_range(-radius..=radius);
    }
    out
}

fn lattice_points(dim: usize, side: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / side as f64;
    match dim {
        1 => (0..side).map(|k| [k as f64 * h, 0.0]).collect(),
        _ => {
            let mut v = Vec::with_capacity(side * side);
            for a in 0..side {
                for b in 0..side {
                    v.push([a as f64 * h, b as f64 * h]);
                }
            }
            v
        }
    }
}

fn axis_lattice(radius: f64, count: usize) -> Vec<f64> {
    let count = count.max(3) | 1; // odd, so 0 is included
    let step = 2.0 * radius / (count - 1) as f64;
    (0..count).map(|k| -radius + k as f64 * step).collect()
}

/// Sampled upper estimate of sup |∂H_i/∂p| over |r|, |p| ≤ radius,
/// inflated by `LIP_SAFETY`. One-sided difference quotients, so kinks
/// like |p| at the origin contribute their full slope. The bare norm
/// skips the inflation: its unit slope is structural, and extra
/// Lax-Friedrichs dissipation only smears kinks.
pub fn estimate_lip_p(
    sys: &HamiltonianSystem,
    i: usize,
    radius: f64,
    resolution: usize,
) -> Result<f64> {
    let comp = sys.component(i)?;
    let radius = radius.abs().max(1e-3);
    let raw = match comp {
        Component::Eikonal { speed, .. } => coef_abs_sup(speed, sys.dim, resolution)?,
        Component::WeaklyCoupled { base, .. } => match base {
            BaseH::Norm => return Ok(1.0),
            BaseH::WeightedNorm(a) => coef_abs_sup(a, sys.dim, resolution)?,
            BaseH::General(g) => {
                sampled_p_slope(sys.dim, radius, resolution, &|y, q| {
                    g.eval(&EvalArgs::new(&[0.0; 2][..sys.dim], y, &[], q))
                })?
            }
        },
        Component::Custom { eval, .. } => {
            let m = sys.m;
            let corners = r_probe_points(m, radius);
            let mut worst = 0.0f64;
            for r in &corners {
                let s = sampled_p_slope(sys.dim, radius, resolution, &|y, q| {
                    eval.eval(&EvalArgs::new(&[0.0; 2][..sys.dim], y, r, q))
                })?;
                worst = worst.max(s);
            }
            worst
        }
    };
    if !raw.is_finite() {
        return Err(Error::NonFinite(format!("p-slope estimate for component {}", i + 1)));
    }
    Ok(raw * LIP_SAFETY)
}

/// Sampled upper estimate of the r-Lipschitz constant of H_i (sum over
/// components of the worst per-axis slope), inflated by `LIP_SAFETY`.
pub fn estimate_lip_r(
    sys: &HamiltonianSystem,
    i: usize,
    radius: f64,
    resolution: usize,
) -> Result<f64> {
    let comp = sys.component(i)?;
    let radius = radius.abs().max(1e-3);
    let raw = match comp {
        Component::Eikonal { coupling_f, .. } => {
            sampled_r_slope_sum(sys.m, radius, resolution, &|r| {
                coupling_f.eval(&EvalArgs::new(&[], &[], r, &[]))
            })?
        }
        Component::WeaklyCoupled { coupling, .. } => {
            let mut acc = 0.0;
            for c in coupling {
                acc += coef_abs_sup(c, sys.dim, resolution)?;
            }
            acc
        }
        Component::Custom { eval, .. } => {
            let dim = sys.dim;
            let ys = lattice_points(dim, resolution.min(8).max(2));
            let zeros = [0.0f64; 2];
            let mut worst = 0.0f64;
            for y in &ys {
                let s = sampled_r_slope_sum(sys.m, radius, resolution, &|r| {
                    eval.eval(&EvalArgs::new(&zeros[..dim], &y[..dim], r, &zeros[..dim]))
                })?;
                worst = worst.max(s);
            }
            worst
        }
    };
    if !raw.is_finite() {
        return Err(Error::NonFinite(format!("r-slope estimate for component {}", i + 1)));
    }
    Ok(raw * LIP_SAFETY)
}

fn coef_abs_sup(c: &Coefficient, dim: usize, resolution: usize) -> Result<f64> {
    if let Some(v) = c.constant_value() {
        return Ok(v.abs());
    }
    let u = c.var_use();
    let ys = lattice_points(dim, resolution.max(2));
    let xs = if u.x > 0 {
        lattice_points(dim, resolution.min(16).max(2))
    } else {
        vec![[0.0; 2]]
    };
    let mut sup = 0.0f64;
    for x in &xs {
        for y in &ys {
            let v = c.eval(&EvalArgs::new(&x[..dim], &y[..dim], &[], &[]));
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("coefficient at x={x:?} y={y:?}")));
            }
            sup = sup.max(v.abs());
        }
    }
    Ok(sup)
}

fn sampled_p_slope(
    dim: usize,
    radius: f64,
    resolution: usize,
    f: &dyn Fn(&[f64], &[f64]) -> f64,
) -> Result<f64> {
    let ys = lattice_points(dim, resolution.min(16).max(2));
    let line = axis_lattice(radius, resolution.min(33));
    let delta = (radius * 9.765625e-4).max(1e-7); // radius / 1024
    let mut probes: Vec<[f64; 2]> = Vec::new();
    match dim {
        1 => {
            for &t in &line {
                probes.push([t, 0.0]);
            }
        }
        _ => {
            let coarse = axis_lattice(radius, 9);
            for &a in &line {
                probes.push([a, 0.0]);
                probes.push([0.0, a]);
            }
            for &a in &coarse {
                for &b in &coarse {
                    probes.push([a, b]);
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for y in &ys {
        for q in &probes {
            for axis in 0..dim {
                let mut qp = *q;
                qp[axis] += delta;
                let mut qm = *q;
                qm[axis] -= delta;
                let v0 = f(&y[..dim], &q[..dim]);
                let vp = f(&y[..dim], &qp[..dim]);
                let vm = f(&y[..dim], &qm[..dim]);
                if !(v0.is_finite() && vp.is_finite() && vm.is_finite()) {
                    return Err(Error::NonFinite("p-slope sample".into()));
                }
                worst = worst.max(((vp - v0) / delta).abs());
                worst = worst.max(((v0 - vm) / delta).abs());
            }
        }
    }
    Ok(worst)
}

fn sampled_r_slope_sum(
    m: usize,
    radius: f64,
    resolution: usize,
    f: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    let pts = r_probe_points(m, radius.max(1e-3));
    let delta = (radius * 9.765625e-4).max(1e-7);
    let _ = resolution;
    let mut sum = 0.0f64;
    for j in 0..m {
        let mut worst = 0.0f64;
        for r in &pts {
            let mut rp = r.clone();
            rp[j] += delta;
            let mut rm = r.clone();
            rm[j] -= delta;
            let v0 = f(r);
            let vp = f(&rp);
            let vm = f(&rm);
            if !(v0.is_finite() && vp.is_finite() && vm.is_finite()) {
                return Err(Error::NonFinite("r-slope sample".into()));
            }
            worst = worst.max(((vp - v0) / delta).abs());
            worst = worst.max(((v0 - vm) / delta).abs());
        }
        sum += worst;
    }
    Ok(sum)
}

fn r_probe_points(m: usize, radius: f64) -> Vec<Vec<f64>> {
    // {-radius, 0, radius}^M up to M=3, sign corners plus origin beyond
    let vals = [-radius, 0.0, radius];
    let mut out = Vec::new();
    if m <= 3 {
        let total = 3usize.pow(m as u32);
        for code in 0..total {
            let mut c = code;
            let mut pt = Vec::with_capacity(m);
            for _ in 0..m {
                pt.push(vals[c % 3]);
                c /= 3;
            }
            out.push(pt);
        }
    } else {
        out.push(vec![0.0; m]);
        let total = 1usize << m.min(6);
        for code in 0..total {
            let pt: Vec<f64> = (0..m)
                .map(|b| if (code >> b.min(5)) & 1 == 1 { radius } else { -radius })
                .collect();
            out.push(pt);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// JSON documents

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum CoefficientDoc {
    Num(f64),
    Src(String),
    Grid { grid: GridCoefDoc },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridCoefDoc {
    n: usize,
    #[serde(default = "default_one")]
    dim: usize,
    values: Vec<f64>,
}

fn default_one() -> usize {
    1
}

fn coef_to_doc(c: &Coefficient) -> CoefficientDoc {
    match c {
        Coefficient::Const(v) => CoefficientDoc::Num(*v),
        Coefficient::Expr { src, .. } => CoefficientDoc::Src(src.clone()),
        Coefficient::Grid(f) => CoefficientDoc::Grid {
            grid: GridCoefDoc {
                n: f.grid().n(),
                dim: f.grid().dim(),
                values: f.values().to_vec(),
            },
        },
    }
}

fn coef_from_doc(doc: &CoefficientDoc) -> Result<Coefficient> {
    Ok(match doc {
        CoefficientDoc::Num(v) => Coefficient::Const(*v),
        CoefficientDoc::Src(s) => Coefficient::parse(s)?,
        CoefficientDoc::Grid { grid } => {
            let g = TorusGrid::new(grid.dim, grid.n, 1.0)?;
            Coefficient::Grid(GridField::from_values(g, 1, grid.values.clone())?)
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum BaseDoc {
    Named(String),
    Weighted { weighted_norm: CoefficientDoc },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ComponentDoc {
    #[serde(rename = "eikonal")]
    Eikonal {
        speed: CoefficientDoc,
        delta: f64,
        coupling_f: CoefficientDoc,
    },
    #[serde(rename = "weakly_coupled")]
    WeaklyCoupled {
        #[serde(skip_serializing_if = "Option::is_none")]
        base: Option<BaseDoc>,
        coupling: Vec<CoefficientDoc>,
    },
    #[serde(rename = "custom")]
    Custom {
        eval: CoefficientDoc,
        #[serde(skip_serializing_if = "Option::is_none")]
        lip_p: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lip_r: Option<f64>,
        #[serde(default)]
        convex_in_p: bool,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemDoc {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    dim: usize,
    components: Vec<ComponentDoc>,
}

impl HamiltonianSystem {
    pub fn from_doc(doc: &SystemDoc) -> Result<Self> {
        if doc.components.len() != doc.m {
            return Err(Error::Config(format!(
                "M={} but {} components given",
                doc.m,
                doc.components.len()
            )));
        }
        let mut components = Vec::with_capacity(doc.m);
        for c in &doc.components {
            components.push(match c {
                ComponentDoc::Eikonal {
                    speed,
                    delta,
                    coupling_f,
                } => Component::Eikonal {
                    speed: coef_from_doc(speed)?,
                    delta: *delta,
                    coupling_f: coef_from_doc(coupling_f)?,
                },
                ComponentDoc::WeaklyCoupled { base, coupling } => {
                    let base = match base {
                        None => BaseH::Norm,
                        Some(BaseDoc::Named(s)) if s == "norm" => BaseH::Norm,
                        Some(BaseDoc::Named(s)) => {
                            let c = Coefficient::parse(s)?;
                            match &c {
                                // abs(p1) in 1-D is just the norm; keep the fast path
                                Coefficient::Expr { ast, .. } if expr_norm_1d(ast) => BaseH::Norm,
                                _ => BaseH::General(c),
                            }
                        }
                        Some(BaseDoc::Weighted { weighted_norm }) => {
                            BaseH::WeightedNorm(coef_from_doc(weighted_norm)?)
                        }
                    };
                    Component::WeaklyCoupled {
                        base,
                        coupling: coupling.iter().map(coef_from_doc).collect::<Result<_>>()?,
                    }
                }
                ComponentDoc::Custom {
                    eval,
                    lip_p,
                    lip_r,
                    convex_in_p,
                } => Component::Custom {
                    eval: coef_from_doc(eval)?,
                    lip_p: *lip_p,
                    lip_r: *lip_r,
                    convex_in_p: *convex_in_p,
                },
            });
        }
        HamiltonianSystem::new(doc.dim, components)
    }

    pub fn to_doc(&self) -> SystemDoc {
        let components = self
            .components
            .iter()
            .map(|c| match c {
                Component::Eikonal {
                    speed,
                    delta,
                    coupling_f,
                } => ComponentDoc::Eikonal {
                    speed: coef_to_doc(speed),
                    delta: *delta,
                    coupling_f: coef_to_doc(coupling_f),
                },
                Component::WeaklyCoupled { base, coupling } => ComponentDoc::WeaklyCoupled {
                    base: match base {
                        BaseH::Norm => None,
                        BaseH::WeightedNorm(a) => Some(BaseDoc::Weighted {
                            weighted_norm: coef_to_doc(a),
                        }),
                        BaseH::General(g) => match g {
                            Coefficient::Expr { src, .. } => Some(BaseDoc::Named(src.clone())),
                            other => Some(BaseDoc::Named(format!("{other:?}"))),
                        },
                    },
                    coupling: coupling.iter().map(coef_to_doc).collect(),
                },
                Component::Custom {
                    eval,
                    lip_p,
                    lip_r,
                    convex_in_p,
                } => ComponentDoc::Custom {
                    eval: coef_to_doc(eval),
                    lip_p: *lip_p,
                    lip_r: *lip_r,
                    convex_in_p: *convex_in_p,
                },
            })
            .collect();
        SystemDoc {
            m: self.m,
            dim: self.dim,
            components,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: SystemDoc = serde_json::from_str(text)?;
        HamiltonianSystem::from_doc(&doc)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        HamiltonianSystem::from_json_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_a() -> HamiltonianSystem {
        // |p| + (2 + cos 2πy)·u, the workhorse single-equation example
        HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::parse("2+cos(2*pi*y)").unwrap()],
            }],
        )
        .unwrap()
    }

    fn two_eq_constant() -> HamiltonianSystem {
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
        .unwrap()
    }

    #[test]
    fn eval_weakly_coupled_fixed_point() {
        // |−2| + (2 + cos π)·1 = 2 + 1 = 3
        let sys = example_a();
        let v = sys.eval(0, &[0.0], &[0.5], &[1.0], &[-2.0]).unwrap();
        assert!((v - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eval_two_equation_columns() {
        // equation 1 couples through column 1: c11 r1 + c21 r2 = r1 − r2
        let sys = two_eq_constant();
        let v = sys.eval(0, &[0.0], &[0.3], &[2.0, 1.0], &[0.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        let w = sys.eval(1, &[0.0], &[0.3], &[2.0, 1.0], &[0.0]).unwrap();
        assert!((w - (-1.0)).abs() < 1e-14);
    }

    #[test]
    fn periodic_in_y_exactly_on_dyadic_points() {
        let sys = example_a();
        for k in 0..64 {
            let y = k as f64 / 64.0;
            for shift in [-2.0, -1.0, 1.0, 3.0] {
                let a = sys.eval(0, &[0.0], &[y], &[0.7], &[1.25]).unwrap();
                let b = sys.eval(0, &[0.0], &[y + shift], &[0.7], &[1.25]).unwrap();
                assert_eq!(a, b, "y={y} shift={shift}");
            }
        }
    }

    #[test]
    fn eikonal_is_coercive_in_p() {
        let sys = HamiltonianSystem::new(
            1,
            vec![Component::Eikonal {
                speed: Coefficient::parse("2+cos(2*pi*y)").unwrap(),
                delta: 1.0,
                coupling_f: Coefficient::parse("r1").unwrap(),
            }],
        )
        .unwrap();
        // δ|p| − sup|F| lower bound: at |p| = 50, H ≥ 50 − 2
        for k in 0..8 {
            let y = k as f64 / 8.0;
            let v = sys.eval(0, &[0.0], &[y], &[2.0], &[50.0]).unwrap();
            assert!(v >= 48.0);
        }
    }

    #[test]
    fn rejects_malformed_systems() {
        // coupling column length
        assert!(HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::Const(1.0), Coefficient::Const(0.0)],
            }]
        )
        .is_err());
        // r out of range in a coupling coefficient
        assert!(HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::parse("r2").unwrap()],
            }]
        )
        .is_err());
        // nonpositive delta
        assert!(HamiltonianSystem::new(
            1,
            vec![Component::Eikonal {
                speed: Coefficient::Const(1.0),
                delta: 0.0,
                coupling_f: Coefficient::Const(0.0),
            }]
        )
        .is_err());
        // y2 in a 1-D system
        assert!(HamiltonianSystem::new(
            1,
            vec![Component::Custom {
                eval: Coefficient::parse("abs(p1)+y2").unwrap(),
                lip_p: None,
                lip_r: None,
                convex_in_p: false,
            }]
        )
        .is_err());
    }

    #[test]
    fn a1_passes_on_single_positive_coefficient() {
        let c = CouplingMatrix::new(1, 1, vec![Coefficient::parse("2+cos(2*pi*y)").unwrap()]).unwrap();
        let rep = check_a1_coefficients(&c, 64).unwrap();
        assert!(rep.passed, "{:?}", rep.violations);
        // column sum = diagonal ≥ 1 here
        assert!(rep.worst_margin.unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn a1_flags_positive_off_diagonal() {
        let c = CouplingMatrix::constant(2, &[1.0, 0.5, -0.2, 1.0]).unwrap();
        let rep = check_a1_coefficients(&c, 8).unwrap();
        assert!(!rep.passed);
        assert!(rep.violations.iter().any(|v| v.what.contains("off-diagonal")));
    }

    #[test]
    fn a1_signs_imply_a3() {
        // diagonally dominant columns with the right signs
        let sys = HamiltonianSystem::new(
            1,
            vec![
                Component::WeaklyCoupled {
                    base: BaseH::Norm,
                    coupling: vec![Coefficient::Const(2.0), Coefficient::Const(-0.5)],
                },
                Component::WeaklyCoupled {
                    base: BaseH::Norm,
                    coupling: vec![Coefficient::Const(-1.5), Coefficient::Const(2.0)],
                },
            ],
        )
        .unwrap();
        let rep = check_a3(&sys, 3.0, 60, 11).unwrap();
        assert!(rep.passed, "{:?}", rep.violations);
    }

    #[test]
    fn a3_holds_without_a1_signs() {
        // H_1 = e^{r1−r2} + 2r1 − r2 and symmetrically H_2: monotone as a
        // system although ∂H_1/∂r_2 changes sign
        let sys = HamiltonianSystem::new(
            1,
            vec![
                Component::Custom {
                    eval: Coefficient::parse("exp(r1-r2)+2*r1-r2").unwrap(),
                    lip_p: Some(0.0),
                    lip_r: None,
                    convex_in_p: false,
                },
                Component::Custom {
                    eval: Coefficient::parse("exp(r2-r1)+2*r2-r1").unwrap(),
                    lip_p: Some(0.0),
                    lip_r: None,
                    convex_in_p: false,
                },
            ],
        )
        .unwrap();
        let rep = check_a3(&sys, 2.0, 80, 5).unwrap();
        assert!(rep.passed, "{:?}", rep.violations);
    }

    #[test]
    fn a3_flags_decreasing_diagonal() {
        let sys = HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::Const(-1.0)],
            }],
        )
        .unwrap();
        let rep = check_a3(&sys, 2.0, 40, 3).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn lip_p_estimate_of_norm() {
        let sys = HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::Const(1.0)],
            }],
        )
        .unwrap();
        let est = estimate_lip_p(&sys, 0, 2.0, 64).unwrap();
        assert!((1.0..=1.1 + 1e-9).contains(&est), "est {est}");
    }

    #[test]
    fn lip_p_estimate_of_oscillating_speed() {
        let sys = HamiltonianSystem::new(
            1,
            vec![Component::Eikonal {
                speed: Coefficient::parse("2+cos(2*pi*y)").unwrap(),
                delta: 1.0,
                coupling_f: Coefficient::Const(0.0),
            }],
        )
        .unwrap();
        let est = estimate_lip_p(&sys, 0, 3.0, 64).unwrap();
        assert!((3.0..=3.3 + 1e-9).contains(&est), "est {est}");
    }

    #[test]
    fn lip_r_estimate_matches_coefficient_sup() {
        let sys = example_a();
        let est = estimate_lip_r(&sys, 0, 2.0, 64).unwrap();
        assert!((3.0..=3.3 + 1e-9).contains(&est), "est {est}");
        // general-base path agrees for a custom copy of the same system
        let cust = HamiltonianSystem::new(
            1,
            vec![Component::Custom {
                eval: Coefficient::parse("abs(p1)+(2+cos(2*pi*y))*r1").unwrap(),
                lip_p: None,
                lip_r: None,
                convex_in_p: true,
            }],
        )
        .unwrap();
        let est2 = estimate_lip_r(&cust, 0, 2.0, 64).unwrap();
        assert!((est - est2).abs() < 0.1, "{est} vs {est2}");
    }

    #[test]
    fn custom_declared_bounds_take_precedence() {
        let sys = HamiltonianSystem::new(
            1,
            vec![Component::Custom {
                eval: Coefficient::parse("abs(p1)").unwrap(),
                lip_p: Some(7.0),
                lip_r: Some(0.25),
                convex_in_p: true,
            }],
        )
        .unwrap();
        assert_eq!(sys.lip_p_bound(1.0).unwrap(), 7.0);
        assert_eq!(sys.lip_r_bound(1.0).unwrap(), 0.25);
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{
            "M": 2, "N": 1,
            "components": [
                {"kind": "weakly_coupled", "base": "abs(p1)", "coupling": [1.0, -1.0]},
                {"kind": "weakly_coupled", "coupling": [-1.0, "1+0*y"]}
            ]
        }"#;
        let sys = HamiltonianSystem::from_json_str(text).unwrap();
        assert_eq!(sys.m(), 2);
        // abs(p1) normalizes to the norm fast path
        assert!(matches!(
            sys.component(0).unwrap(),
            Component::WeaklyCoupled { base: BaseH::Norm, .. }
        ));
        let back = sys.to_json_string().unwrap();
        let sys2 = HamiltonianSystem::from_json_str(&back).unwrap();
        let v1 = sys.eval(0, &[0.0], &[0.3], &[2.0, 1.0], &[0.5]).unwrap();
        let v2 = sys2.eval(0, &[0.0], &[0.3], &[2.0, 1.0], &[0.5]).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn json_rejects_bad_docs() {
        assert!(HamiltonianSystem::from_json_str(r#"{"M":2,"N":1,"components":[]}"#).is_err());
        assert!(HamiltonianSystem::from_json_str(
            r#"{"M":1,"N":1,"components":[{"kind":"eikonal","speed":1.0,"delta":-1.0,"coupling_f":0.0}]}"#
        )
        .is_err());
        assert!(HamiltonianSystem::from_json_str(
            r#"{"M":1,"N":1,"components":[{"kind":"weakly_coupled","coupling":["r9"]}]}"#
        )
        .is_err());
    }

    #[test]
    fn grid_coefficient_interpolates() {
        let vals: Vec<f64> = (0..64)
            .map(|k| 2.0 + (2.0 * std::f64::consts::PI * k as f64 / 64.0).cos())
            .collect();
        let c = Coefficient::grid_1d(vals).unwrap();
        let v = c.eval(&EvalArgs::new(&[], &[0.25], &[], &[]));
        assert!((v - 2.0).abs() < 1e-2);
        let sys = HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![c],
            }],
        )
        .unwrap();
        let h = sys.eval(0, &[0.0], &[0.0], &[1.0], &[0.0]).unwrap();
        assert!((h - 3.0).abs() < 1e-12);
    }
}
