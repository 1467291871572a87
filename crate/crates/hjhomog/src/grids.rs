//! Uniform periodic grids on the torus [0,L)^N, N ∈ {1,2}, and the
//! fields living on them.
//!
//! Nodes sit at integer multiples of h = L/n per axis, linearized in
//! row-major order (first index outermost). All stencils wrap around.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// Uniform n^N lattice on [0,L)^N. Stored as (n, L) so h·n = L holds by
/// construction; h is always derived, never stored.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    len: f64,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize, len: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Shape(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if n < 4 {
            return Err(Error::Shape(format!("grid needs at least 4 points per axis, got {n}")));
        }
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::Shape(format!("grid side length must be positive, got {len}")));
        }
        Ok(TorusGrid { dim, n, len })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn spacing(&self) -> f64 {
        self.len / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Coordinates of linear node k; the second entry is 0 in 1-D.
    pub fn coords(&self, k: usize) -> [f64; MAX_DIM] {
        let h = self.spacing();
        match self.dim {
            1 => [k as f64 * h, 0.0],
            _ => {
                let i = k / self.n;
                let j = k % self.n;
                [i as f64 * h, j as f64 * h]
            }
        }
    }

    pub fn index2(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.dim == 2);
        i * self.n + j
    }
}

/// Values on a grid, one slab of n^N reals per component (component-major).
/// All values are finite; constructors reject NaN and infinities.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: TorusGrid,
    m: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: TorusGrid, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Shape("field needs at least one component".into()));
        }
        Ok(GridField {
            grid,
            m,
            values: vec![0.0; m * grid.node_count()],
        })
    }

    pub fn from_values(grid: TorusGrid, m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || values.len() != m * grid.node_count() {
            return Err(Error::Shape(format!(
                "expected {} x {} values, got {}",
                m,
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value {v}")));
        }
        Ok(GridField { grid, m, values })
    }

    /// Scalar field sampled from a function of the node coordinates.
    pub fn sample(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let vals: Vec<f64> = (0..grid.node_count())
            .map(|k| f(&grid.coords(k)[..grid.dim()]))
            .collect();
        GridField::from_values(grid, 1, vals)
    }

    /// One sampled component per function, in order.
    pub fn sample_system(grid: TorusGrid, fs: &[&dyn Fn(&[f64]) -> f64]) -> Result<Self> {
        let nodes = grid.node_count();
        let mut vals = Vec::with_capacity(fs.len() * nodes);
        for f in fs {
            for k in 0..nodes {
                vals.push(f(&grid.coords(k)[..grid.dim()]));
            }
        }
        GridField::from_values(grid, fs.len(), vals)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let nodes = self.grid.node_count();
        &self.values[c * nodes..(c + 1) * nodes]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let nodes = self.grid.node_count();
        &mut self.values[c * nodes..(c + 1) * nodes]
    }

    /// Clone one component as a scalar field.
    pub fn extract(&self, c: usize) -> Result<GridField> {
        if c >= self.m {
            return Err(Error::Shape(format!("component {c} of {}", self.m)));
        }
        GridField::from_values(self.grid, 1, self.component(c).to_vec())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn sup_diff(&self, other: &GridField) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |a, (u, v)| a.max((u - v).abs())))
    }

    fn check_same_shape(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid || self.m != other.m {
            return Err(Error::GridMismatch(format!(
                "{}^{} (M={}) vs {}^{} (M={})",
                self.grid.n, self.grid.dim, self.m, other.grid.n, other.grid.dim, other.m
            )));
        }
        Ok(())
    }

    /// Periodic multilinear interpolation of a scalar field; x is reduced
    /// mod L per axis first.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        self.interpolate_component(0, x)
    }

    pub fn interpolate_component(&self, c: usize, x: &[f64]) -> Result<f64> {
        if c >= self.m {
            return Err(Error::Shape(format!("component {c} of {}", self.m)));
        }
        let g = self.grid;
        if x.len() != g.dim() {
            return Err(Error::Shape(format!(
                "point with {} coordinates on a {}-D grid",
                x.len(),
                g.dim()
            )));
        }
        let h = g.spacing();
        let vals = self.component(c);
        let mut i0 = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for (a, &xa) in x.iter().enumerate() {
            if !xa.is_finite() {
                return Err(Error::NonFinite(format!("interpolation point {xa}")));
            }
            let t = xa.rem_euclid(g.len()) / h;
            let mut i = t.floor() as usize;
            let mut f = t - i as f64;
            if i >= g.n() {
                // rem_euclid can land exactly on L for tiny negative inputs
                i = 0;
                f = 0.0;
            }
            i0[a] = i;
            frac[a] = f;
        }
        let n = g.n();
        Ok(match g.dim() {
            1 => {
                let ia = i0[0];
                let ib = (ia + 1) % n;
                vals[ia] * (1.0 - frac[0]) + vals[ib] * frac[0]
            }
            _ => {
                let (ia, ja) = (i0[0], i0[1]);
                let (ib, jb) = ((ia + 1) % n, (ja + 1) % n);
                let (fx, fy) = (frac[0], frac[1]);
                vals[g.index2(ia, ja)] * (1.0 - fx) * (1.0 - fy)
                    + vals[g.index2(ib, ja)] * fx * (1.0 - fy)
                    + vals[g.index2(ia, jb)] * (1.0 - fx) * fy
                    + vals[g.index2(ib, jb)] * fx * fy
            }
        })
    }

    /// Injection onto a coarser grid with the same extent. The fine node
    /// set must contain the coarse one, i.e. n_fine % n_coarse == 0.
    pub fn restrict_to(&self, coarse: TorusGrid) -> Result<GridField> {
        let fine = self.grid;
        if fine.dim() != coarse.dim() || fine.len() != coarse.len() {
            return Err(Error::GridMismatch(format!(
                "restriction between {}-D L={} and {}-D L={}",
                fine.dim(),
                fine.len(),
                coarse.dim(),
                coarse.len()
            )));
        }
        if coarse.n() > fine.n() || fine.n() % coarse.n() != 0 {
            return Err(Error::GridMismatch(format!(
                "coarse n={} does not divide fine n={}",
                coarse.n(),
                fine.n()
            )));
        }
        let s = fine.n() / coarse.n();
        let mut vals = Vec::with_capacity(self.m * coarse.node_count());
        for c in 0..self.m {
            let src = self.component(c);
            match fine.dim() {
                1 => {
                    for i in 0..coarse.n() {
                        vals.push(src[i * s]);
                    }
                }
                _ => {
                    for i in 0..coarse.n() {
                        for j in 0..coarse.n() {
                            vals.push(src[fine.index2(i * s, j * s)]);
                        }
                    }
                }
            }
        }
        GridField::from_values(coarse, self.m, vals)
    }

    /// Largest one-sided difference quotient magnitude over all
    /// components and axes; a discrete Lipschitz seminorm.
    pub fn max_upwind_slope(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.m {
            let f = match self.extract(c) {
                Ok(f) => f,
                Err(_) => continue,
            };
            for axis in 0..self.grid.dim() {
                let (dm, _) = upwind_diffs(&f, axis).expect("scalar by construction");
                worst = worst.max(dm.sup_norm());
            }
        }
        worst
    }

    pub fn to_csv_string(&self) -> String {
        let g = self.grid;
        let mut out = String::new();
        let _ = writeln!(out, "# grid n={} N={} L={} M={}", g.n(), g.dim(), g.len(), self.m);
        let nodes = g.node_count();
        for k in 0..nodes {
            match g.dim() {
                1 => {
                    let _ = write!(out, "{k}");
                }
                _ => {
                    let _ = write!(out, "{},{}", k / g.n(), k % g.n());
                }
            }
            for c in 0..self.m {
                let _ = write!(out, ",{}", self.component(c)[k]);
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv_str(text: &str, origin: &Path) -> Result<GridField> {
        let bad = |msg: String| Error::format(origin, msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let rest = header
            .strip_prefix("# grid ")
            .ok_or_else(|| bad(format!("bad header `{header}`")))?;
        let mut n = None;
        let mut dim = None;
        let mut len = None;
        let mut m = None;
        for part in rest.split_whitespace() {
            let (key, val) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("bad header field `{part}`")))?;
            match key {
                "n" => n = Some(val.parse::<usize>().map_err(|_| bad(format!("bad n `{val}`")))?),
                "N" => dim = Some(val.parse::<usize>().map_err(|_| bad(format!("bad N `{val}`")))?),
                "L" => len = Some(val.parse::<f64>().map_err(|_| bad(format!("bad L `{val}`")))?),
                "M" => m = Some(val.parse::<usize>().map_err(|_| bad(format!("bad M `{val}`")))?),
                _ => return Err(bad(format!("unknown header field `{key}`"))),
            }
        }
        let (n, dim, len, m) = match (n, dim, len, m) {
            (Some(n), Some(d), Some(l), Some(m)) => (n, d, l, m),
            _ => return Err(bad("header must carry n, N, L and M".into())),
        };
        let grid = TorusGrid::new(dim, n, len)?;
        let nodes = grid.node_count();
        let mut values = vec![0.0f64; m * nodes];
        let mut row = 0usize;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            if row >= nodes {
                return Err(bad(format!("more than {nodes} data rows")));
            }
            let mut cells = line.split(',');
            let idx_fields = dim;
            let mut k = 0usize;
            for a in 0..idx_fields {
                let cell = cells
                    .next()
                    .ok_or_else(|| bad(format!("row {row}: missing index {a}")))?;
                let i: usize = cell
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("row {row}: bad index `{cell}`")))?;
                if i >= n {
                    return Err(bad(format!("row {row}: index {i} out of range")));
                }
                k = k * n + i;
            }
            if k != row {
                return Err(bad(format!("row {row}: expected node {row}, found {k}")));
            }
            for c in 0..m {
                let cell = cells
                    .next()
                    .ok_or_else(|| bad(format!("row {row}: missing value {c}")))?;
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("row {row}: bad value `{cell}`")))?;
                values[c * nodes + row] = v;
            }
            if cells.next().is_some() {
                return Err(bad(format!("row {row}: extra fields")));
            }
            row += 1;
        }
        if row != nodes {
            return Err(bad(format!("expected {nodes} data rows, found {row}")));
        }
        GridField::from_values(grid, m, values)
    }

    pub fn load_csv(path: &Path) -> Result<GridField> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GridField::from_csv_str(&text, path)
    }
}

/// Backward and forward difference quotients along one axis, with
/// periodic wraparound: D⁻u_k = (u_k − u_{k−1})/h, D⁺u_k = (u_{k+1} − u_k)/h.
pub fn upwind_diffs(field: &GridField, axis: usize) -> Result<(GridField, GridField)> {
    if field.m() != 1 {
        return Err(Error::Shape(format!(
            "upwind differences act on scalar fields, got M={}",
            field.m()
        )));
    }
    let g = field.grid();
    if axis >= g.dim() {
        return Err(Error::Shape(format!("axis {axis} on a {}-D grid", g.dim())));
    }
    let n = g.n();
    let inv_h = n as f64 / g.len();
    let u = field.component(0);
    let nodes = g.node_count();
    let mut dm = vec![0.0f64; nodes];
    let mut dp = vec![0.0f64; nodes];
    let stride = if g.dim() == 1 {
        1
    } else if axis == 0 {
        n
    } else {
        1
    };
    let lanes = nodes / n;
    for lane in 0..lanes {
        // base index of this 1-D line through the grid
        let base = if g.dim() == 1 {
            0
        } else if axis == 0 {
            lane // vary i, fixed j = lane
        } else {
            lane * n // vary j, fixed i = lane
        };
        for k in 0..n {
            let here = base + k * stride;
            let prev = base + ((k + n - 1) % n) * stride;
            let next = base + ((k + 1) % n) * stride;
            dm[here] = (u[here] - u[prev]) * inv_h;
            dp[here] = (u[next] - u[here]) * inv_h;
        }
    }
    Ok((
        GridField::from_values(g, 1, dm)?,
        GridField::from_values(g, 1, dp)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(TorusGrid::new(0, 8, 1.0).is_err());
        assert!(TorusGrid::new(3, 8, 1.0).is_err());
        assert!(TorusGrid::new(1, 3, 1.0).is_err());
        assert!(TorusGrid::new(1, 8, 0.0).is_err());
        assert!(TorusGrid::new(2, 8, 2.0).is_ok());
    }

    #[test]
    fn spacing_times_n_recovers_len() {
        let g = TorusGrid::new(1, 160, 2.0).unwrap();
        assert_eq!(g.spacing() * g.n() as f64, 2.0);
    }

    #[test]
    fn diff_of_constant_vanishes() {
        let g = TorusGrid::new(1, 16, 1.0).unwrap();
        let f = GridField::sample(g, |_| 4.25).unwrap();
        let (dm, dp) = upwind_diffs(&f, 0).unwrap();
        assert_eq!(dm.sup_norm(), 0.0);
        assert_eq!(dp.sup_norm(), 0.0);
    }

    #[test]
    fn forward_diff_of_sine_matches_shifted_cosine() {
        // D⁺ sin(2πy) = (2/h)·sin(πh)·cos(2π(y+h/2)) exactly, so the
        // mismatch with 2π·cos(2π(y+h/2)) is 2π(1 − sinc(πh)) ≤ π³h²/3 ≪ h.
        let n = 256;
        let g = TorusGrid::new(1, n, 1.0).unwrap();
        let h = g.spacing();
        let f = GridField::sample(g, |x| (2.0 * PI * x[0]).sin()).unwrap();
        let (_, dp) = upwind_diffs(&f, 0).unwrap();
        let mut worst = 0.0f64;
        for k in 0..n {
            let y = k as f64 * h + 0.5 * h;
            worst = worst.max((dp.component(0)[k] - 2.0 * PI * (2.0 * PI * y).cos()).abs());
        }
        assert!(worst <= h, "worst {worst} vs h {h}");
        assert!(worst <= PI.powi(3) * h * h / 3.0 * 1.01);
    }

    #[test]
    fn two_d_diffs_follow_their_axis() {
        let g = TorusGrid::new(2, 8, 1.0).unwrap();
        // field varies only along axis 0
        let f = GridField::sample(g, |x| x[0]).unwrap();
        let (dm0, _) = upwind_diffs(&f, 0).unwrap();
        let (dm1, _) = upwind_diffs(&f, 1).unwrap();
        // interior slope 1 along axis 0 except at the wrap seam
        assert!((dm0.component(0)[g.index2(3, 5)] - 1.0).abs() < 1e-12);
        assert_eq!(dm1.sup_norm(), 0.0);
    }

    #[test]
    fn interpolation_reproduces_nodes_and_wraps() {
        let g = TorusGrid::new(1, 8, 1.0).unwrap();
        let f = GridField::sample(g, |x| (2.0 * PI * x[0]).sin()).unwrap();
        for k in 0..8 {
            let x = [k as f64 / 8.0];
            let v = f.interpolate(&x).unwrap();
            assert!((v - f.component(0)[k]).abs() < 1e-15);
            // one period away must agree exactly up to the mod-L reduction
            let w = f.interpolate(&[x[0] + 1.0]).unwrap();
            assert!((v - w).abs() < 1e-12);
        }
        // midpoint of the last cell interpolates between u_{n-1} and u_0
        let v = f.interpolate(&[1.0 - 1.0 / 16.0]).unwrap();
        let expect = 0.5 * (f.component(0)[7] + f.component(0)[0]);
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn restriction_is_injection_on_nested_grids() {
        let fine = TorusGrid::new(1, 32, 1.0).unwrap();
        let coarse = TorusGrid::new(1, 8, 1.0).unwrap();
        let f = GridField::sample(fine, |x| x[0] * x[0]).unwrap();
        let r = f.restrict_to(coarse).unwrap();
        for i in 0..8 {
            assert_eq!(r.component(0)[i], f.component(0)[4 * i]);
        }
        let off = TorusGrid::new(1, 12, 1.0).unwrap();
        assert!(f.restrict_to(off).is_err());
        let wrong_len = TorusGrid::new(1, 8, 2.0).unwrap();
        assert!(f.restrict_to(wrong_len).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = TorusGrid::new(2, 4, 1.0).unwrap();
        let f = GridField::sample_system(
            g,
            &[&|x: &[f64]| (7.0 * x[0] + 13.0 * x[1]).sin(), &|x: &[f64]| x[0] / 3.0],
        )
        .unwrap();
        let text = f.to_csv_string();
        assert!(text.starts_with("# grid n=4 N=2 L=1 M=2\n"));
        let back = GridField::from_csv_str(&text, Path::new("mem")).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn csv_rejects_corruption() {
        let g = TorusGrid::new(1, 4, 1.0).unwrap();
        let f = GridField::sample(g, |x| x[0]).unwrap();
        let text = f.to_csv_string();
        let p = Path::new("mem");
        // truncated
        let cut = &text[..text.len() - 10];
        assert!(GridField::from_csv_str(cut, p).is_err());
        // extra row
        let extra = format!("{text}4,0.5\n");
        assert!(GridField::from_csv_str(&extra, p).is_err());
        // bad header
        assert!(GridField::from_csv_str("# grid n=4 N=1 L=1\n0,1\n", p).is_err());
        // non-finite value
        let nan = text.replace("0.25", "NaN");
        assert!(GridField::from_csv_str(&nan, p).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = TorusGrid::new(1, 4, 1.0).unwrap();
        assert!(GridField::from_values(g, 1, vec![0.0, 1.0, f64::NAN, 2.0]).is_err());
        assert!(GridField::sample(g, |x| 1.0 / (x[0] - 0.25)).is_err());
    }

    proptest! {
        // telescoping: the mean of D⁺u over the torus is 0 up to rounding
        #[test]
        fn summation_by_parts(vals in proptest::collection::vec(-100.0f64..100.0, 16)) {
            let g = TorusGrid::new(1, 16, 1.0).unwrap();
            let f = GridField::from_values(g, 1, vals).unwrap();
            let (_, dp) = upwind_diffs(&f, 0).unwrap();
            let total: f64 = dp.component(0).iter().sum();
            let bound = 1e-12 * 16.0 * 16.0 * (1.0 + f.sup_norm());
            prop_assert!(total.abs() <= bound, "total {} bound {}", total, bound);
        }

        #[test]
        fn interpolation_stays_in_range(vals in proptest::collection::vec(-5.0f64..5.0, 8),
                                        x in -3.0f64..3.0) {
            let g = TorusGrid::new(1, 8, 1.0).unwrap();
            let f = GridField::from_values(g, 1, vals).unwrap();
            let v = f.interpolate(&[x]).unwrap();
            let lo = f.component(0).iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f.component(0).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
