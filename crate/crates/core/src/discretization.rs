//! Space and time grids, nodal fields and the discrete operators shared by
//! all solvers.
//!
//! The spatial mesh is 1D with homogeneous Dirichlet ends: only interior
//! nodes carry unknowns, and stencils read zero at the boundary. Operators
//! are exposed through [`DirichletMesh`] so that solvers do not depend on
//! the 1D layout beyond the tridiagonal factorization.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::{Error, Interval, Result};

/// Node/stencil interface of a mesh with homogeneous Dirichlet boundary.
pub trait DirichletMesh {
    fn node_count(&self) -> usize;
    /// Quadrature weight of a node (`h` in 1D).
    fn node_volume(&self) -> f64;
    fn control_mask(&self) -> &[f64];
    fn laplacian_into(&self, f: &[f64], out: &mut [f64]);
    fn grad_sq_into(&self, f: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceGrid {
    domain: Interval,
    n_interior: usize,
    h: f64,
    omega: Vec<Interval>,
    #[serde(skip)]
    mask: Vec<f64>,
}

impl SpaceGrid {
    /// Grid on `(a, b)` with control region `omega` (a single subinterval).
    pub fn new(domain: Interval, n_interior: usize, omega: Interval) -> Result<Self> {
        Self::with_regions(domain, n_interior, vec![omega])
    }

    /// Control region given as a union of subintervals.
    pub fn with_regions(domain: Interval, n_interior: usize, omega: Vec<Interval>) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::InvalidInput("n_interior must be positive".into()));
        }
        if !(domain.hi > domain.lo) {
            return Err(Error::InvalidInput("domain must have positive length".into()));
        }
        if omega.is_empty() {
            return Err(Error::InvalidInput("control region must be nonempty".into()));
        }
        for w in &omega {
            if !(w.lo < w.hi && domain.lo <= w.lo && w.hi <= domain.hi) {
                return Err(Error::InvalidInput(format!(
                    "control interval [{}, {}] must be a nonempty subinterval of [{}, {}]",
                    w.lo, w.hi, domain.lo, domain.hi
                )));
            }
        }
        let h = domain.length() / (n_interior + 1) as f64;
        let mut grid = Self {
            domain,
            n_interior,
            h,
            omega,
            mask: Vec::new(),
        };
        grid.mask = (0..n_interior)
            .map(|i| {
                let x = grid.x(i);
                if grid.omega.iter().any(|w| w.contains(x)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(grid)
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn omega(&self) -> &[Interval] {
        &self.omega
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    /// Coordinate of interior node `i` (0-based).
    pub fn x(&self, i: usize) -> f64 {
        self.domain.lo + (i + 1) as f64 * self.h
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_interior).map(|i| self.x(i))
    }

    /// Number of nodes inside ω.
    pub fn omega_node_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0.0).count()
    }
}

impl DirichletMesh for SpaceGrid {
    fn node_count(&self) -> usize {
        self.n_interior
    }

    fn node_volume(&self) -> f64 {
        self.h
    }

    fn control_mask(&self) -> &[f64] {
        &self.mask
    }

    fn laplacian_into(&self, f: &[f64], out: &mut [f64]) {
        let n = f.len();
        let inv_h2 = 1.0 / (self.h * self.h);
        for i in 0..n {
            let left = if i > 0 { f[i - 1] } else { 0.0 };
            let right = if i + 1 < n { f[i + 1] } else { 0.0 };
            out[i] = (left - 2.0 * f[i] + right) * inv_h2;
        }
    }

    fn grad_sq_into(&self, f: &[f64], out: &mut [f64]) {
        // Centered differences; the zero boundary value closes the stencil
        // at the first and last interior nodes.
        let n = f.len();
        let inv_2h = 0.5 / self.h;
        for i in 0..n {
            let left = if i > 0 { f[i - 1] } else { 0.0 };
            let right = if i + 1 < n { f[i + 1] } else { 0.0 };
            let d = (right - left) * inv_2h;
            out[i] = d * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {t_final}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput("n_steps must be positive".into()));
        }
        Ok(Self {
            t_final,
            n_steps,
            dt: t_final / n_steps as f64,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of node `k`; exact at `k = n_steps`.
    pub fn t(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_final
        } else {
            k as f64 * self.dt
        }
    }
}

/// Nodal values on the interior nodes of a [`SpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<SpaceGrid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<SpaceGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_interior() {
            return Err(Error::InvalidInput(format!(
                "field has {} values, grid has {} interior nodes",
                values.len(),
                grid.n_interior()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite field value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<SpaceGrid>) -> Self {
        let n = grid.n_interior();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<SpaceGrid>, f: F) -> Result<Self> {
        let values = grid.xs().map(f).collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_raw(grid: Arc<SpaceGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_interior());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<SpaceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn laplacian(&self) -> Field {
        let mut out = vec![0.0; self.values.len()];
        self.grid.laplacian_into(&self.values, &mut out);
        Self::from_raw(self.grid.clone(), out)
    }

    pub fn grad_sq(&self) -> Field {
        let mut out = vec![0.0; self.values.len()];
        self.grid.grad_sq_into(&self.values, &mut out);
        Self::from_raw(self.grid.clone(), out)
    }

    /// `sqrt(h Σ v²)`.
    pub fn l2_norm(&self) -> f64 {
        weighted_l2(&self.values, self.grid.h())
    }

    pub fn linf_norm(&self) -> f64 {
        linf(&self.values)
    }

    /// `h Σ f g`.
    pub fn inner(&self, other: &Field) -> f64 {
        self.grid.h() * dot(&self.values, &other.values)
    }

    /// Nodewise image under a fallible map; the first error is returned.
    pub fn apply_pointwise<F>(&self, map: F) -> Result<Field>
    where
        F: Fn(f64) -> Result<f64>,
    {
        let values = self.values.iter().map(|&v| map(v)).collect::<Result<Vec<_>>>()?;
        Self::new(self.grid.clone(), values)
    }

    /// Multiplies by χ_ω.
    pub fn masked(&self) -> Field {
        let values = self
            .values
            .iter()
            .zip(self.grid.mask())
            .map(|(v, m)| v * m)
            .collect();
        Self::from_raw(self.grid.clone(), values)
    }

    pub fn scaled(&self, c: f64) -> Field {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|v| c * v).collect())
    }

    pub fn sub(&self, other: &Field) -> Field {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self::from_raw(self.grid.clone(), values)
    }

    /// True when every value outside ω is exactly zero.
    pub fn vanishes_outside_omega(&self) -> bool {
        self.values
            .iter()
            .zip(self.grid.mask())
            .all(|(&v, &m)| m != 0.0 || v == 0.0)
    }

    /// Writes `x,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x,value")?;
        for (x, v) in self.grid.xs().zip(&self.values) {
            writeln!(out, "{x},{v}")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub steps: usize,
    /// `max |state|` at every time node.
    pub max_abs: Vec<f64>,
    /// Smallest ratio of the admissible explicit step to `dt`; `None` for
    /// purely linear solves.
    pub dt_margin: Option<f64>,
}

/// Snapshots at every time node, `snapshots[0]` being the initial state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    time: TimeGrid,
    snapshots: Vec<Field>,
    diagnostics: SolverDiagnostics,
}

impl Trajectory {
    pub(crate) fn new(time: TimeGrid, snapshots: Vec<Field>, dt_margin: Option<f64>) -> Self {
        debug_assert_eq!(snapshots.len(), time.n_steps() + 1);
        let diagnostics = SolverDiagnostics {
            steps: time.n_steps(),
            max_abs: snapshots.iter().map(Field::linf_norm).collect(),
            dt_margin,
        };
        Self {
            time,
            snapshots,
            diagnostics,
        }
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn snapshots(&self) -> &[Field] {
        &self.snapshots
    }

    pub fn initial(&self) -> &Field {
        &self.snapshots[0]
    }

    pub fn terminal(&self) -> &Field {
        &self.snapshots[self.snapshots.len() - 1]
    }

    pub fn diagnostics(&self) -> &SolverDiagnostics {
        &self.diagnostics
    }

    /// Nodewise image of every snapshot.
    pub fn map<F>(&self, map: F) -> Result<Trajectory>
    where
        F: Fn(f64) -> Result<f64>,
    {
        let snapshots = self
            .snapshots
            .iter()
            .map(|s| s.apply_pointwise(&map))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(self.time, snapshots, None))
    }

    /// Max over time nodes of `‖self_k - other_k‖₂`.
    pub fn max_l2_gap(&self, other: &Trajectory) -> f64 {
        self.snapshots
            .iter()
            .zip(&other.snapshots)
            .map(|(a, b)| a.sub(b).l2_norm())
            .fold(0.0, f64::max)
    }

    /// Long-format `t,x,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_long_csv(path, "value", &self.snapshots, |k| self.time.t(k))
    }
}

/// Long-format `t,x,<column>` dump of per-step slices.
pub fn write_long_csv<F: Fn(usize) -> f64>(
    path: &Path,
    column: &str,
    slices: &[Field],
    t_of: F,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t,x,{column}")?;
    for (k, slice) in slices.iter().enumerate() {
        let t = t_of(k);
        for (x, v) in slice.grid().xs().zip(slice.values()) {
            writeln!(out, "{t},{x},{v}")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn weighted_l2(a: &[f64], weight: f64) -> f64 {
    (weight * dot(a, a)).sqrt()
}

pub(crate) fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
