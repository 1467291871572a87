//! Tabulated effective Hamiltonians H̄_i over lattices in (x, r, p),
//! plus closed forms for the coupling families where H̄ is known
//! analytically. The closed forms double as independent oracles for
//! the iterative cell solves.
//!
//! For a 1-D weakly coupled equation |p + v′| = λ + f(y) with
//! f(y) = −Σ_j c_{ji}(y) r_j, the effective value is
//!
//! ```text
//! H̄_i(r, p) = max{ −min_y f,  |p| − ∫₀¹ f }
//!           = max{ max_y Σ_j c_{ji}(y) r_j,  |p| + Σ_j r_j ∫ c_{ji} }
//! ```
//!
//! evaluated here on a fine audit lattice. The graph is flat in p while
//! |p| ≤ (∫f − min f); tables built from cell solves must reproduce it.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::cell::CellProblem;
use crate::error::{Error, Result};
use crate::expr::EvalArgs;
use crate::hamiltonians::{Coefficient, CouplingMatrix, HamiltonianSystem};

/// Coarsest audit lattice used when grading closed forms; finer than any
/// production cell grid so quadrature error is negligible.
pub const MIN_AUDIT_N: usize = 4096;

const MAGIC: &[u8; 5] = b"HBAR1";
const FORMAT_VERSION: u16 = 1;

/// Which coordinate of (x, r, p) an axis runs over. Indices 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AxisCoord {
    X(usize),
    R(usize),
    P(usize),
}

impl AxisCoord {
    pub fn name(&self) -> String {
        match self {
            AxisCoord::X(k) => format!("x{}", k + 1),
            AxisCoord::R(j) => format!("r{}", j + 1),
            AxisCoord::P(k) => format!("p{}", k + 1),
        }
    }

    pub fn parse(name: &str) -> Result<AxisCoord> {
        let bad = || Error::Config(format!("bad axis name `{name}`"));
        let (head, tail) = name.split_at(1);
        let idx: usize = tail.parse().map_err(|_| bad())?;
        if idx == 0 {
            return Err(bad());
        }
        match head {
            "x" => Ok(AxisCoord::X(idx - 1)),
            "r" => Ok(AxisCoord::R(idx - 1)),
            "p" => Ok(AxisCoord::P(idx - 1)),
            _ => Err(bad()),
        }
    }
}

/// One lattice axis. `count == 1` freezes the coordinate at `min`
/// (`min` must equal `max` in that case).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AxisSpec {
    pub coord: AxisCoord,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn frozen(coord: AxisCoord, value: f64) -> AxisSpec {
        AxisSpec {
            coord,
            min: value,
            max: value,
            count: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::Config(format!("axis {}: non-finite range", self.coord.name())));
        }
        if self.count == 0 {
            return Err(Error::Config(format!("axis {}: empty lattice", self.coord.name())));
        }
        if self.count == 1 {
            if self.min != self.max {
                return Err(Error::Config(format!(
                    "axis {}: a frozen axis needs min == max, got [{}, {}]",
                    self.coord.name(),
                    self.min,
                    self.max
                )));
            }
        } else if !(self.min < self.max) {
            return Err(Error::Config(format!(
                "axis {}: need min < max, got [{}, {}]",
                self.coord.name(),
                self.min,
                self.max
            )));
        }
        Ok(())
    }

    pub fn node(&self, k: usize) -> f64 {
        if self.count == 1 {
            self.min
        } else {
            self.min + (self.max - self.min) * k as f64 / (self.count - 1) as f64
        }
    }

    pub fn step(&self) -> f64 {
        if self.count == 1 {
            0.0
        } else {
            (self.max - self.min) / (self.count - 1) as f64
        }
    }

    /// `name:min:max:count`, the CLI grammar.
    pub fn parse_spec(text: &str) -> Result<AxisSpec> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "axis spec `{text}` is not name:min:max:count"
            )));
        }
        let coord = AxisCoord::parse(parts[0])?;
        let min: f64 = parts[1]
            .parse()
            .map_err(|_| Error::Config(format!("axis spec `{text}`: bad min")))?;
        let max: f64 = parts[2]
            .parse()
            .map_err(|_| Error::Config(format!("axis spec `{text}`: bad max")))?;
        let count: usize = parts[3]
            .parse()
            .map_err(|_| Error::Config(format!("axis spec `{text}`: bad count")))?;
        let spec = AxisSpec { coord, min, max, count };
        spec.validate()?;
        Ok(spec)
    }
}

/// The canonical axis order for a system with M components in N
/// dimensions: x1..xN, r1..rM, p1..pN.
pub fn canonical_axes(m: usize, dim: usize) -> Vec<AxisCoord> {
    let mut out = Vec::with_capacity(dim + m + dim);
    for k in 0..dim {
        out.push(AxisCoord::X(k));
    }
    for j in 0..m {
        out.push(AxisCoord::R(j));
    }
    for k in 0..dim {
        out.push(AxisCoord::P(k));
    }
    out
}

/// Effective-Hamiltonian values on a full (x, r, p) lattice, one value
/// slab per tabulated component, row-major with the first axis outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct HBarTable {
    m: usize,
    dim: usize,
    components: Vec<usize>,
    axes: Vec<AxisSpec>,
    values: Vec<f64>,
    provenance: String,
}

impl HBarTable {
    pub fn new(
        m: usize,
        dim: usize,
        components: Vec<usize>,
        axes: Vec<AxisSpec>,
        values: Vec<f64>,
        provenance: String,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("a table needs at least one component".into()));
        }
        for &i in &components {
            if i >= m {
                return Err(Error::ComponentIndex { index: i, m });
            }
        }
        let expect = canonical_axes(m, dim);
        if axes.len() != expect.len() {
            return Err(Error::Config(format!(
                "need one axis per coordinate of (x, r, p): expected {}, got {}",
                expect.len(),
                axes.len()
            )));
        }
        for (spec, want) in axes.iter().zip(&expect) {
            spec.validate()?;
            if spec.coord != *want {
                return Err(Error::Config(format!(
                    "axes must follow the canonical order x1..xN, r1..rM, p1..pN; found {} where {} belongs",
                    spec.coord.name(),
                    want.name()
                )));
            }
        }
        let nodes: usize = axes.iter().map(|a| a.count).product();
        if values.len() != components.len() * nodes {
            return Err(Error::Shape(format!(
                "expected {} x {} table values, got {}",
                components.len(),
                nodes,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("table value {v}")));
        }
        Ok(HBarTable {
            m,
            dim,
            components,
            axes,
            values,
            provenance,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    /// Lattice coordinates of linear node k, in canonical axis order.
    pub fn node_coords(&self, k: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.axes.len()];
        let mut rem = k;
        for (a, spec) in self.axes.iter().enumerate().rev() {
            idx[a] = rem % spec.count;
            rem /= spec.count;
        }
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, spec)| spec.node(i))
            .collect()
    }

    pub fn value_at(&self, slot: usize, node: usize) -> f64 {
        self.values[slot * self.node_count() + node]
    }

    fn slot_of(&self, i: usize) -> Result<usize> {
        self.components
            .iter()
            .position(|&c| c == i)
            .ok_or_else(|| Error::Config(format!("component {} is not tabulated", i + 1)))
    }

    /// Multilinear interpolation inside the lattice hull. Frozen axes
    /// demand the frozen value (to 1e-9 relative); queries at lattice
    /// nodes reproduce stored values exactly.
    pub fn query(&self, i: usize, x: &[f64], r: &[f64], p: &[f64]) -> Result<f64> {
        let slot = self.slot_of(i)?;
        if x.len() != self.dim || p.len() != self.dim || r.len() != self.m {
            return Err(Error::Shape(format!(
                "query needs {} x, {} r and {} p coordinates",
                self.dim, self.m, self.dim
            )));
        }
        let mut base = vec![0usize; self.axes.len()];
        let mut frac = vec![0.0f64; self.axes.len()];
        for (a, spec) in self.axes.iter().enumerate() {
            let v = match spec.coord {
                AxisCoord::X(k) => x[k],
                AxisCoord::R(j) => r[j],
                AxisCoord::P(k) => p[k],
            };
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("query coordinate {}", spec.coord.name())));
            }
            if spec.count == 1 {
                let tol = 1e-9 * spec.min.abs().max(1.0);
                if (v - spec.min).abs() > tol {
                    return Err(Error::OutOfHull(format!(
                        "{} = {v} but the axis is frozen at {}",
                        spec.coord.name(),
                        spec.min
                    )));
                }
                continue;
            }
            let span = spec.max - spec.min;
            let slack = 1e-12 * span.abs().max(1.0);
            if v < spec.min - slack || v > spec.max + slack {
                return Err(Error::OutOfHull(format!(
                    "{} = {v} outside [{}, {}]",
                    spec.coord.name(),
                    spec.min,
                    spec.max
                )));
            }
            let t = (v - spec.min) / spec.step();
            let snapped = t.round();
            let t = if (t - snapped).abs() < 1e-9 { snapped } else { t };
            let mut i0 = t.floor() as isize;
            if i0 < 0 {
                i0 = 0;
            }
            let mut i0 = i0 as usize;
            if i0 >= spec.count - 1 {
                i0 = spec.count - 2;
            }
            base[a] = i0;
            frac[a] = (t - i0 as f64).clamp(0.0, 1.0);
        }
        let active: Vec<usize> = (0..self.axes.len())
            .filter(|&a| self.axes[a].count > 1 && frac[a] != 0.0)
            .collect();
        // strides, first axis outermost
        let mut strides = vec![1usize; self.axes.len()];
        for a in (0..self.axes.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.axes[a + 1].count;
        }
        let base_node: usize = base.iter().zip(&strides).map(|(&b, &s)| b * s).sum();
        let mut acc = 0.0;
        for mask in 0..(1usize << active.len()) {
            let mut w = 1.0;
            let mut node = base_node;
            for (bit, &a) in active.iter().enumerate() {
                if (mask >> bit) & 1 == 1 {
                    w *= frac[a];
                    node += strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.value_at(slot, node);
            }
        }
        Ok(acc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.m as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.components.len() as u32).to_le_bytes());
        for &c in &self.components {
            buf.extend_from_slice(&(c as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.axes.len() as u32).to_le_bytes());
        for spec in &self.axes {
            let (kind, idx) = match spec.coord {
                AxisCoord::X(k) => (0u8, k),
                AxisCoord::R(j) => (1u8, j),
                AxisCoord::P(k) => (2u8, k),
            };
            buf.push(kind);
            buf.extend_from_slice(&(idx as u32).to_le_bytes());
            buf.extend_from_slice(&spec.min.to_le_bytes());
            buf.extend_from_slice(&spec.max.to_le_bytes());
            buf.extend_from_slice(&(spec.count as u64).to_le_bytes());
        }
        let prov = self.provenance.as_bytes();
        buf.extend_from_slice(&(prov.len() as u64).to_le_bytes());
        buf.extend_from_slice(prov);
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<HBarTable> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut rd = ByteReader {
            data: &data,
            pos: 0,
            path,
        };
        let magic = rd.take(5)?;
        if magic != MAGIC {
            return Err(Error::format(path, "bad magic; not an effective-Hamiltonian table"));
        }
        let version = rd.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported format version {version}"),
            ));
        }
        let m = rd.u32()? as usize;
        let dim = rd.u32()? as usize;
        let ncomp = rd.u32()? as usize;
        if ncomp > 1 << 16 {
            return Err(Error::format(path, "implausible component count"));
        }
        let mut components = Vec::with_capacity(ncomp);
        for _ in 0..ncomp {
            components.push(rd.u32()? as usize);
        }
        let naxes = rd.u32()? as usize;
        if naxes > 64 {
            return Err(Error::format(path, "implausible axis count"));
        }
        let mut axes = Vec::with_capacity(naxes);
        for _ in 0..naxes {
            let kind = rd.u8()?;
            let idx = rd.u32()? as usize;
            let min = rd.f64()?;
            let max = rd.f64()?;
            let count = rd.u64()? as usize;
            let coord = match kind {
                0 => AxisCoord::X(idx),
                1 => AxisCoord::R(idx),
                2 => AxisCoord::P(idx),
                k => return Err(Error::format(path, format!("unknown axis kind {k}"))),
            };
            axes.push(AxisSpec { coord, min, max, count });
        }
        let prov_len = rd.u64()? as usize;
        let prov_bytes = rd.take(prov_len)?;
        let provenance = String::from_utf8(prov_bytes.to_vec())
            .map_err(|_| Error::format(path, "provenance is not UTF-8"))?;
        let nvals = rd.u64()? as usize;
        let expect_nodes: usize = axes.iter().map(|a| a.count).product();
        if nvals != ncomp * expect_nodes {
            return Err(Error::format(
                path,
                format!("value count {nvals} does not match {ncomp} x {expect_nodes}"),
            ));
        }
        let mut values = Vec::with_capacity(nvals);
        for _ in 0..nvals {
            values.push(rd.f64()?);
        }
        if rd.pos != data.len() {
            return Err(Error::format(
                path,
                format!("{} trailing bytes after the value block", data.len() - rd.pos),
            ));
        }
        HBarTable::new(m, dim, components, axes, values, provenance)
            .map_err(|e| Error::format(path, e.to_string()))
    }

    /// Readable mirror of the binary table: one row per lattice node.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let comp_list: Vec<String> = self.components.iter().map(|c| (c + 1).to_string()).collect();
        out.push_str(&format!(
            "# hbar M={} N={} components={}\n",
            self.m,
            self.dim,
            comp_list.join(";")
        ));
        let names: Vec<String> = self.axes.iter().map(|a| a.coord.name()).collect();
        let hbar_names: Vec<String> = self
            .components
            .iter()
            .map(|c| format!("hbar_{}", c + 1))
            .collect();
        out.push_str(&format!("{},{}\n", names.join(","), hbar_names.join(",")));
        for k in 0..self.node_count() {
            let coords = self.node_coords(k);
            let mut row: Vec<String> = coords.iter().map(|v| v.to_string()).collect();
            for slot in 0..self.components.len() {
                row.push(self.value_at(slot, k).to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Everything `build_table` needs besides the system itself. The cell
/// knobs mirror `CellProblem`; zero `workers` means one thread per
/// available core.
pub struct TableBuildSpec<'a> {
    pub system: &'a HamiltonianSystem,
    pub components: Vec<usize>,
    pub axes: Vec<AxisSpec>,
    pub cell_n: usize,
    pub alphas: Vec<f64>,
    pub residual_tol: f64,
    pub max_iters: usize,
    pub workers: usize,
}

impl<'a> TableBuildSpec<'a> {
    pub fn new(system: &'a HamiltonianSystem, components: Vec<usize>, axes: Vec<AxisSpec>) -> Self {
        TableBuildSpec {
            system,
            components,
            axes,
            cell_n: crate::cell::default_cell_n(system.dim()),
            alphas: crate::cell::DEFAULT_ALPHAS.to_vec(),
            residual_tol: crate::cell::DEFAULT_RESIDUAL_TOL,
            max_iters: crate::cell::DEFAULT_MAX_ITERS,
            workers: 0,
        }
    }
}

/// Fill in the canonical axis list from a partial specification;
/// unmentioned coordinates freeze at 0.
pub fn complete_axes(m: usize, dim: usize, partial: &[AxisSpec]) -> Result<Vec<AxisSpec>> {
    let mut out: Vec<AxisSpec> = canonical_axes(m, dim)
        .into_iter()
        .map(|coord| AxisSpec::frozen(coord, 0.0))
        .collect();
    for spec in partial {
        spec.validate()?;
        let slot = out
            .iter()
            .position(|a| a.coord == spec.coord)
            .ok_or_else(|| {
                Error::Config(format!(
                    "axis {} does not exist for M={m}, N={dim}",
                    spec.coord.name()
                ))
            })?;
        out[slot] = *spec;
    }
    Ok(out)
}

/// Solve one cell problem per lattice node and component. Nodes are
/// independent, so they fan out over a scoped thread pool; failures are
/// collected rather than aborting the whole build.
pub fn build_table(spec: &TableBuildSpec) -> Result<HBarTable> {
    let sys = spec.system;
    let m = sys.m();
    let dim = sys.dim();
    if spec.components.is_empty() {
        return Err(Error::Config("no components selected".into()));
    }
    for &i in &spec.components {
        if i >= m {
            return Err(Error::ComponentIndex { index: i, m });
        }
    }
    let expect = canonical_axes(m, dim);
    if spec.axes.len() != expect.len()
        || spec.axes.iter().zip(&expect).any(|(a, w)| a.coord != *w)
    {
        return Err(Error::Config(
            "axes must follow the canonical order x1..xN, r1..rM, p1..pN; see complete_axes".into(),
        ));
    }
    for a in &spec.axes {
        a.validate()?;
    }
    let nodes: usize = spec.axes.iter().map(|a| a.count).product();
    let jobs = spec.components.len() * nodes;
    let values = Mutex::new(vec![0.0f64; jobs]);
    let failures = Mutex::new(Vec::<String>::new());
    let next = AtomicUsize::new(0);

    let run_job = |job: usize| {
        let slot = job / nodes;
        let node = job % nodes;
        let comp = spec.components[slot];
        let mut idx = vec![0usize; spec.axes.len()];
        let mut rem = node;
        for (a, ax) in spec.axes.iter().enumerate().rev() {
            idx[a] = rem % ax.count;
            rem /= ax.count;
        }
        let mut x = vec![0.0; dim];
        let mut r = vec![0.0; m];
        let mut p = vec![0.0; dim];
        for (a, ax) in spec.axes.iter().enumerate() {
            let v = ax.node(idx[a]);
            match ax.coord {
                AxisCoord::X(k) => x[k] = v,
                AxisCoord::R(j) => r[j] = v,
                AxisCoord::P(k) => p[k] = v,
            }
        }
        let outcome = CellProblem::new(sys, comp, x.clone(), r.clone(), p.clone()).and_then(
            |mut prob| {
                prob.n = spec.cell_n;
                prob.alphas = spec.alphas.clone();
                prob.residual_tol = spec.residual_tol;
                prob.max_iters = spec.max_iters;
                prob.effective_hamiltonian()
            },
        );
        match outcome {
            Ok(out) => values.lock().unwrap()[job] = out.lambda,
            Err(e) => failures
                .lock()
                .unwrap()
                .push(format!("component {} at x={x:?} r={r:?} p={p:?}: {e}", comp + 1)),
        }
    };

    let workers = if spec.workers > 0 {
        spec.workers
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    };
    if workers <= 1 {
        for job in 0..jobs {
            run_job(job);
        }
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers.min(jobs) {
                scope.spawn(|| loop {
                    let job = next.fetch_add(1, Ordering::Relaxed);
                    if job >= jobs {
                        break;
                    }
                    run_job(job);
                });
            }
        });
    }

    let failures = failures.into_inner().unwrap();
    if !failures.is_empty() {
        let shown: Vec<String> = failures.iter().take(5).cloned().collect();
        return Err(Error::TableBuild {
            failed: failures.len(),
            total: jobs,
            details: shown.join("; "),
        });
    }
    let provenance = serde_json::to_string(&serde_json::json!({
        "cell_n": spec.cell_n,
        "alphas": spec.alphas,
        "residual_tol": spec.residual_tol,
        "system": sys.to_doc(),
    }))?;
    HBarTable::new(
        m,
        dim,
        spec.components.clone(),
        spec.axes.clone(),
        values.into_inner().unwrap(),
        provenance,
    )
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::format(self.path, "truncated file"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

// ---------------------------------------------------------------------------
// Closed forms

fn audit_lattice(audit_n: usize) -> (usize, f64) {
    let n = audit_n.max(MIN_AUDIT_N);
    (n, 1.0 / n as f64)
}

fn column_stats(
    c: &CouplingMatrix,
    i: usize,
    r: &[f64],
    audit_n: usize,
) -> Result<(f64, f64, f64)> {
    // g(y) = Σ_j c_{ji}(y) r_j sampled on the audit lattice:
    // returns (max, min, mean)
    if c.dim() != 1 {
        return Err(Error::Shape("closed forms cover 1-D oscillation only".into()));
    }
    if i >= c.m() || r.len() != c.m() {
        return Err(Error::Shape(format!(
            "component {} / r of length {} against an M={} coupling matrix",
            i + 1,
            r.len(),
            c.m()
        )));
    }
    for j in 0..c.m() {
        let u = c.entry(j, i).var_use();
        if u.x > 0 {
            return Err(Error::Config(
                "closed forms need coefficients independent of the slow variable x".into(),
            ));
        }
    }
    let (n, h) = audit_lattice(audit_n);
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for k in 0..n {
        let y = [k as f64 * h];
        let mut g = 0.0;
        for j in 0..c.m() {
            let v = c.eval_entry(j, i, &[0.0], &y);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("c[{},{}] at y={}", j + 1, i + 1, y[0])));
            }
            g += v * r[j];
        }
        max = max.max(g);
        min = min.min(g);
        sum += g;
    }
    Ok((max, min, sum / n as f64))
}

/// H̄_i(r, p) for the 1-D family |p| + Σ_j c_{ji}(y) r_j, via the
/// audit-lattice version of the max formula in the module docs.
pub fn closed_form_eikonal_weakly_coupled(
    c: &CouplingMatrix,
    i: usize,
    r: &[f64],
    p: &[f64],
    audit_n: usize,
) -> Result<f64> {
    if p.len() != 1 {
        return Err(Error::Shape("closed forms cover 1-D momenta only".into()));
    }
    let (gmax, _, gmean) = column_stats(c, i, r, audit_n)?;
    Ok(gmax.max(p[0].abs() + gmean))
}

/// Width of the flat part of p ↦ H̄_i(r, p): the graph is constant for
/// |p| up to max_y g − ∫ g, where g(y) = Σ_j c_{ji}(y) r_j.
pub fn effective_flat_width(
    c: &CouplingMatrix,
    i: usize,
    r: &[f64],
    audit_n: usize,
) -> Result<f64> {
    let (gmax, _, gmean) = column_stats(c, i, r, audit_n)?;
    Ok((gmax - gmean).max(0.0))
}

/// A p-only effective Hamiltonian used as the uncoupled base of the
/// constant-coupling decomposition.
pub enum BaseEffective<'a> {
    ClosedForm(&'a dyn Fn(&[f64]) -> f64),
    Table { table: &'a HBarTable, component: usize },
}

impl<'a> BaseEffective<'a> {
    fn eval(&self, p: &[f64]) -> Result<f64> {
        match self {
            BaseEffective::ClosedForm(f) => {
                let v = f(p);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("base effective Hamiltonian at p={p:?}")));
                }
                Ok(v)
            }
            BaseEffective::Table { table, component } => {
                // substitute the table's own frozen x and r coordinates
                let mut x = vec![0.0; table.dim()];
                let mut r = vec![0.0; table.m()];
                for spec in table.axes() {
                    match spec.coord {
                        AxisCoord::X(k) => {
                            if spec.count > 1 {
                                return Err(Error::Config(
                                    "base table must be frozen in x".into(),
                                ));
                            }
                            x[k] = spec.min;
                        }
                        AxisCoord::R(j) => {
                            if spec.count > 1 {
                                return Err(Error::Config(
                                    "base table must be frozen in r".into(),
                                ));
                            }
                            r[j] = spec.min;
                        }
                        AxisCoord::P(_) => {}
                    }
                }
                table.query(*component, &x, &r, p)
            }
        }
    }
}

/// With constant coupling the system decouples after homogenization:
/// H̄_i(r, p) = H̄_base(p) + Σ_j c_{ji} r_j.
pub fn closed_form_constant_coupling(
    base: &BaseEffective,
    c: &CouplingMatrix,
    i: usize,
    r: &[f64],
    p: &[f64],
) -> Result<f64> {
    if i >= c.m() || r.len() != c.m() {
        return Err(Error::Shape(format!(
            "component {} / r of length {} against an M={} coupling matrix",
            i + 1,
            r.len(),
            c.m()
        )));
    }
    let vals = c
        .constant_values()
        .ok_or_else(|| Error::Config("constant-coupling closed form needs constant coefficients".into()))?;
    let mut acc = base.eval(p)?;
    for j in 0..c.m() {
        acc += vals[j * c.m() + i] * r[j];
    }
    Ok(acc)
}

/// Single-equation special case with an explicit kink structure. With
/// α = max c₁₁, β = min c₁₁, γ = ∫ c₁₁ (α > γ > β required):
///
/// ```text
/// H̄(r₁, p) = β r₁            for r₁ ≤ |p|/(β − γ)
///            γ r₁ + |p|      for |p|/(β − γ) ≤ r₁ ≤ |p|/(α − γ)
///            α r₁            for r₁ ≥ |p|/(α − γ)
/// ```
///
/// Not linear in r₁: homogenization does not commute with freezing the
/// unknown.
pub fn closed_form_piecewise_r1(c11: &Coefficient, r1: f64, p: f64, audit_n: usize) -> Result<f64> {
    let u = c11.var_use();
    if u.x > 0 || u.r > 0 || u.p > 0 || u.y > 1 {
        return Err(Error::Config("c11 must be a function of y1 alone".into()));
    }
    let (n, h) = audit_lattice(audit_n);
    let mut a = f64::NEG_INFINITY;
    let mut b = f64::INFINITY;
    let mut sum = 0.0;
    for k in 0..n {
        let v = c11.eval(&EvalArgs::new(&[], &[k as f64 * h], &[], &[]));
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("c11 at y={}", k as f64 * h)));
        }
        a = a.max(v);
        b = b.min(v);
        sum += v;
    }
    let g = sum / n as f64;
    let spread = (a - g).min(g - b);
    if spread <= 1e-10 * (1.0 + a.abs()) {
        return Err(Error::Config(format!(
            "piecewise form needs max > mean > min, got max={a} mean={g} min={b}"
        )));
    }
    let pa = p.abs();
    if r1 <= pa / (b - g) {
        Ok(b * r1)
    } else if r1 >= pa / (a - g) {
        Ok(a * r1)
    } else {
        Ok(g * r1 + pa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::Coefficient;

    fn cos_coupling() -> CouplingMatrix {
        CouplingMatrix::new(1, 1, vec![Coefficient::parse("2+cos(2*pi*y)").unwrap()]).unwrap()
    }

    #[test]
    fn eikonal_closed_form_pinned_values() {
        let c = cos_coupling();
        // r=1: flat value 3 up to |p| = 1, then |p| + 2
        let v0 = closed_form_eikonal_weakly_coupled(&c, 0, &[1.0], &[0.0], 4096).unwrap();
        assert!((v0 - 3.0).abs() < 1e-9, "{v0}");
        let v4 = closed_form_eikonal_weakly_coupled(&c, 0, &[1.0], &[4.0], 4096).unwrap();
        assert!((v4 - 6.0).abs() < 1e-9, "{v4}");
        let vhalf = closed_form_eikonal_weakly_coupled(&c, 0, &[1.0], &[0.5], 4096).unwrap();
        assert!((vhalf - 3.0).abs() < 1e-9, "{vhalf}");
        let vedge = closed_form_eikonal_weakly_coupled(&c, 0, &[1.0], &[1.5], 4096).unwrap();
        assert!((vedge - 3.5).abs() < 1e-9, "{vedge}");
        // r=0 collapses to |p|
        let vz = closed_form_eikonal_weakly_coupled(&c, 0, &[0.0], &[-2.0], 4096).unwrap();
        assert!((vz - 2.0).abs() < 1e-12, "{vz}");
        // negative r picks the min of the coefficient
        let vn = closed_form_eikonal_weakly_coupled(&c, 0, &[-2.0], &[0.0], 4096).unwrap();
        // max{max c·r, |p| + γr} = max{1·(−2), 0 − 4} = −2
        assert!((vn - (-2.0)).abs() < 1e-9, "{vn}");
    }

    #[test]
    fn flat_width_of_the_cosine_coupling() {
        let c = cos_coupling();
        let w = effective_flat_width(&c, 0, &[1.0], 4096).unwrap();
        assert!((w - 1.0).abs() < 1e-9, "{w}");
        let w0 = effective_flat_width(&c, 0, &[0.0], 4096).unwrap();
        assert!(w0.abs() < 1e-12);
    }

    #[test]
    fn piecewise_branches_pinned_values() {
        // c11 = 1 + cos(2πy)/2: α = 1.5, γ = 1, β = 0.5, breakpoints at
        // r1 = −|p|/0.5 and r1 = |p|/0.5
        let c11 = Coefficient::parse("1+cos(2*pi*y)/2").unwrap();
        let v = closed_form_piecewise_r1(&c11, 4.0, 1.0, 4096).unwrap();
        assert!((v - 6.0).abs() < 1e-9, "{v}");
        let v = closed_form_piecewise_r1(&c11, 0.0, 1.0, 4096).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
        let v = closed_form_piecewise_r1(&c11, -4.0, 1.0, 4096).unwrap();
        assert!((v - (-2.0)).abs() < 1e-9, "{v}");
        // at a breakpoint both branches agree
        let v = closed_form_piecewise_r1(&c11, 2.0, 1.0, 4096).unwrap();
        assert!((v - 3.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn piecewise_agrees_with_max_formula() {
        let c11 = Coefficient::parse("1+cos(2*pi*y)/2").unwrap();
        let cm = CouplingMatrix::new(1, 1, vec![c11.clone()]).unwrap();
        for k in 0..40 {
            let r1 = -5.0 + 10.0 * k as f64 / 39.0;
            for p in [-3.0, -1.0, -0.25, 0.0, 0.5, 2.0] {
                let via_max =
                    closed_form_eikonal_weakly_coupled(&cm, 0, &[r1], &[p], 4096).unwrap();
                let via_branches = closed_form_piecewise_r1(&c11, r1, p, 4096).unwrap();
                assert!(
                    (via_max - via_branches).abs() < 1e-9,
                    "r1={r1} p={p}: {via_max} vs {via_branches}"
                );
            }
        }
    }

    #[test]
    fn piecewise_rejects_degenerate_coupling() {
        let c11 = Coefficient::Const(2.0);
        assert!(closed_form_piecewise_r1(&c11, 1.0, 1.0, 4096).is_err());
    }

    #[test]
    fn constant_coupling_decomposition() {
        let c = CouplingMatrix::constant(2, &[1.0, -1.0, -1.0, 1.0]).unwrap();
        let base = |p: &[f64]| p[0].abs();
        let v = closed_form_constant_coupling(&BaseEffective::ClosedForm(&base), &c, 0, &[2.0, 1.0], &[0.0])
            .unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        let v = closed_form_constant_coupling(&BaseEffective::ClosedForm(&base), &c, 1, &[2.0, 1.0], &[-3.0])
            .unwrap();
        // |−3| + (−1)·2 + 1·1 = 2
        assert!((v - 2.0).abs() < 1e-12, "{v}");
        // rejects y-dependent coefficients
        let cy = cos_coupling();
        assert!(
            closed_form_constant_coupling(&BaseEffective::ClosedForm(&base), &cy, 0, &[1.0], &[0.0])
                .is_err()
        );
    }

    fn tiny_table() -> HBarTable {
        // |p| tabulated on p1 ∈ {−2,−1,0,1,2}, x1 and r1 frozen at 0
        let axes = vec![
            AxisSpec::frozen(AxisCoord::X(0), 0.0),
            AxisSpec::frozen(AxisCoord::R(0), 0.0),
            AxisSpec {
                coord: AxisCoord::P(0),
                min: -2.0,
                max: 2.0,
                count: 5,
            },
        ];
        let values = vec![2.0, 1.0, 0.0, 1.0, 2.0];
        HBarTable::new(1, 1, vec![0], axes, values, "{}".into()).unwrap()
    }

    #[test]
    fn query_reproduces_nodes_and_interpolates() {
        let t = tiny_table();
        for (k, p) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
            let v = t.query(0, &[0.0], &[0.0], &[*p]).unwrap();
            assert_eq!(v, t.value_at(0, k));
        }
        let v = t.query(0, &[0.0], &[0.0], &[0.5]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(t.query(0, &[0.0], &[0.0], &[2.5]).is_err());
        assert!(t.query(0, &[0.1], &[0.0], &[0.0]).is_err()); // frozen x
        assert!(t.query(0, &[0.0], &[0.0, 0.0], &[0.0]).is_err()); // wrong r arity
    }

    #[test]
    fn axis_spec_grammar() {
        let a = AxisSpec::parse_spec("r1:-3:3:13").unwrap();
        assert_eq!(a.coord, AxisCoord::R(0));
        assert_eq!(a.count, 13);
        assert!((a.node(6) - 0.0).abs() < 1e-15);
        assert!(AxisSpec::parse_spec("q1:0:1:5").is_err());
        assert!(AxisSpec::parse_spec("p1:1:0:5").is_err());
        assert!(AxisSpec::parse_spec("p1:0:0:1").is_ok());
        assert!(AxisSpec::parse_spec("p1:0:1:1").is_err());
        assert!(AxisSpec::parse_spec("p1:0:1").is_err());
    }

    #[test]
    fn canonical_axis_order_enforced() {
        let axes = vec![
            AxisSpec::frozen(AxisCoord::R(0), 0.0),
            AxisSpec::frozen(AxisCoord::X(0), 0.0),
            AxisSpec::frozen(AxisCoord::P(0), 0.0),
        ];
        assert!(HBarTable::new(1, 1, vec![0], axes, vec![0.0], String::new()).is_err());
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let t = tiny_table();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("t.hbar");
        let p2 = dir.path().join("t2.hbar");
        t.save(&p1).unwrap();
        let back = HBarTable::load(&p1).unwrap();
        assert_eq!(t, back);
        back.save(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn load_rejects_corruption() {
        let t = tiny_table();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.hbar");
        t.save(&p).unwrap();
        let good = std::fs::read(&p).unwrap();
        // bad magic
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(HBarTable::load(&p).is_err());
        // unsupported version
        let mut bad = good.clone();
        bad[5] = 9;
        std::fs::write(&p, &bad).unwrap();
        assert!(HBarTable::load(&p).is_err());
        // truncated
        std::fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(HBarTable::load(&p).is_err());
        // trailing garbage
        let mut bad = good.clone();
        bad.push(0);
        std::fs::write(&p, &bad).unwrap();
        assert!(HBarTable::load(&p).is_err());
    }

    #[test]
    fn csv_export_lists_all_nodes() {
        let t = tiny_table();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.export_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# hbar M=1 N=1 components=1");
        assert_eq!(lines[1], "x1,r1,p1,hbar_1");
        assert_eq!(lines.len(), 2 + 5);
        assert_eq!(lines[2], "0,0,-2,2");
    }

    #[test]
    fn complete_axes_fills_frozen_defaults() {
        let axes = complete_axes(2, 1, &[AxisSpec::parse_spec("p1:-1:1:5").unwrap()]).unwrap();
        assert_eq!(axes.len(), 4); // x1, r1, r2, p1
        assert_eq!(axes[0], AxisSpec::frozen(AxisCoord::X(0), 0.0));
        assert_eq!(axes[3].count, 5);
        assert!(complete_axes(1, 1, &[AxisSpec::parse_spec("r2:0:1:3").unwrap()]).is_err());
    }

    #[test]
    fn built_table_matches_closed_form() {
        use crate::hamiltonians::{BaseH, Component};
        let sys = crate::hamiltonians::HamiltonianSystem::new(
            1,
            vec![Component::WeaklyCoupled {
                base: BaseH::Norm,
                coupling: vec![Coefficient::parse("2+cos(2*pi*y)").unwrap()],
            }],
        )
        .unwrap();
        let axes = complete_axes(
            1,
            1,
            &[
                AxisSpec::parse_spec("r1:1:1:1").unwrap(),
                AxisSpec::parse_spec("p1:-2:2:5").unwrap(),
            ],
        )
        .unwrap();
        let mut spec = TableBuildSpec::new(&sys, vec![0], axes);
        spec.cell_n = 128;
        spec.workers = 1;
        let table = build_table(&spec).unwrap();
        let c = cos_coupling();
        for p in [-2.0, -0.7, 0.0, 1.3, 2.0] {
            let got = table.query(0, &[0.0], &[1.0], &[p]).unwrap();
            let want = closed_form_eikonal_weakly_coupled(&c, 0, &[1.0], &[p], 4096).unwrap();
            // node queries are exact cell solves; off-node adds the
            // chord error of piecewise-linear interpolation in p
            assert!((got - want).abs() < 0.2, "p={p}: {got} vs {want}");
        }
        assert!(table.provenance().contains("cell_n"));
    }

    #[test]
    fn build_failures_are_collected() {
        use crate::hamiltonians::Component;
        // concave in p, so every node fails the coercivity probe
        let sys = crate::hamiltonians::HamiltonianSystem::new(
            1,
            vec![Component::Custom {
                eval: Coefficient::parse("-abs(p1)").unwrap(),
                lip_p: Some(1.0),
                lip_r: Some(0.0),
                convex_in_p: false,
            }],
        )
        .unwrap();
        let axes = complete_axes(1, 1, &[AxisSpec::parse_spec("p1:0:1:3").unwrap()]).unwrap();
        let mut spec = TableBuildSpec::new(&sys, vec![0], axes);
        spec.cell_n = 32;
        spec.workers = 1;
        match build_table(&spec) {
            Err(Error::TableBuild { failed, total, .. }) => {
                assert_eq!(failed, 3);
                assert_eq!(total, 3);
            }
            other => panic!("expected TableBuild error, got {:?}", other.map(|t| t.node_count())),
        }
    }

    #[test]
    fn table_backed_base_effective() {
        let t = tiny_table();
        let c = CouplingMatrix::constant(1, &[2.0]).unwrap();
        let base = BaseEffective::Table { table: &t, component: 0 };
        let v = closed_form_constant_coupling(&base, &c, 0, &[1.5], &[1.0]).unwrap();
        assert!((v - 4.0).abs() < 1e-12, "{v}");
    }
}
