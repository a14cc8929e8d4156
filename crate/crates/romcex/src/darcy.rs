//! Groundwater flow full-order model on a structured grid.
//!
//! Steady and transient single-phase Darcy flow with log-normal
//! conductivity: cell-centered finite volumes, five-point stencil, harmonic
//! conductivity averaging at faces, Dirichlet or no-flux edges, and a
//! banded Cholesky solve. The quantity of interest is the inflow through
//! the boundary of a marked extraction subdomain. Conductivity fields are
//! sampled from a truncated Karhunen-Loeve expansion of a stationary
//! covariance kernel, and steady head snapshots over a parameter plan feed
//! the reduced-order machinery.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, DenseMatrix};
use crate::parametric_map::SnapshotSet;
use crate::rng::{standard_normal_vec, stream_rng, CH_FIELD, CH_SNAPSHOT};

/// Relative residual bound on every linear solve.
const SOLVER_TOL: f64 = 1e-12;

// ── grid ────────────────────────────────────────────────────────────

/// Uniform cell-centered grid on a rectangle. Cell (i, j) has index
/// j * nx + i and center ((i + 0.5) hx, (j + 0.5) hy).
///
/// The flow solvers need nx, ny >= 2; a single-cell grid is still a valid
/// domain for covariance discretization, so construction allows it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    extraction_cells: Vec<usize>,
}

impl Grid2D {
    pub fn new(
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
        mut extraction_cells: Vec<usize>,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid(format!("grid must have cells, got {nx}x{ny}")));
        }
        if !(hx > 0.0 && hy > 0.0) || !hx.is_finite() || !hy.is_finite() {
            return Err(Error::invalid(format!(
                "cell sizes must be positive and finite, got {hx}, {hy}"
            )));
        }
        extraction_cells.sort_unstable();
        extraction_cells.dedup();
        for &c in &extraction_cells {
            if c >= nx * ny {
                return Err(Error::IndexOutOfRange {
                    what: "extraction cell",
                    index: c,
                    bound: nx * ny,
                });
            }
            let (i, j) = (c % nx, c / nx);
            let interior = i >= 1 && i + 1 < nx && j >= 1 && j + 1 < ny;
            if !interior {
                return Err(Error::invalid(format!(
                    "extraction cell {c} touches the boundary; the subdomain must be interior"
                )));
            }
        }
        Ok(Grid2D {
            nx,
            ny,
            hx,
            hy,
            extraction_cells,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn extraction_cells(&self) -> &[usize] {
        &self.extraction_cells
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn center(&self, c: usize) -> (f64, f64) {
        let (i, j) = (c % self.nx, c / self.nx);
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }
}

// ── conductivity field ──────────────────────────────────────────────

/// Log-conductivity per cell; kappa = exp(q) stays strictly positive.
#[derive(Clone, Debug)]
pub struct ConductivityField {
    log_values: Vec<f64>,
    kappa: Vec<f64>,
}

impl ConductivityField {
    pub fn from_log(log_values: Vec<f64>) -> Result<Self> {
        if log_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "log-conductivity" });
        }
        let kappa: Vec<f64> = log_values.iter().map(|v| v.exp()).collect();
        if kappa.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid(
                "log-conductivity too large to exponentiate".to_string(),
            ));
        }
        Ok(ConductivityField { log_values, kappa })
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Exponential,
    SquaredExponential,
}

/// Stationary covariance model for the log-conductivity field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KleFieldSpec {
    pub mean: f64,
    pub variance: f64,
    pub correlation_length: f64,
    pub n_modes: usize,
    pub kind: CovarianceKind,
}

impl KleFieldSpec {
    fn validate(&self, n_cells: usize) -> Result<()> {
        if !(self.variance >= 0.0) {
            return Err(Error::invalid(format!(
                "variance must be nonnegative, got {}",
                self.variance
            )));
        }
        if !(self.correlation_length > 0.0) {
            return Err(Error::invalid(format!(
                "correlation length must be positive, got {}",
                self.correlation_length
            )));
        }
        if self.n_modes > n_cells {
            return Err(Error::invalid(format!(
                "n_modes {} exceeds cell count {}",
                self.n_modes, n_cells
            )));
        }
        if !self.mean.is_finite() {
            return Err(Error::NonFinite { context: "field mean" });
        }
        Ok(())
    }

    fn covariance(&self, dx: f64, dy: f64) -> f64 {
        let d = (dx * dx + dy * dy).sqrt() / self.correlation_length;
        match self.kind {
            CovarianceKind::Exponential => self.variance * (-d).exp(),
            CovarianceKind::SquaredExponential => self.variance * (-0.5 * d * d).exp(),
        }
    }
}

/// Truncated eigenpairs of the covariance kernel sampled at cell centers.
///
/// Eigenvalues are those of the kernel matrix itself and modes are
/// euclidean-orthonormal; with this normalization the sampled field
/// q = mean + sum_j sqrt(lambda_j) xi_j v_j reproduces the kernel diagonal
/// as its pointwise variance, independent of the cell size.
#[derive(Clone, Debug)]
pub struct FieldModes {
    pub mean: f64,
    pub eigenvalues: Vec<f64>,
    pub modes: DenseMatrix,
}

impl FieldModes {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Top eigenpairs of the covariance matrix over cell centers, descending
/// and clamped nonnegative.
pub fn field_modes(grid: &Grid2D, spec: &KleFieldSpec) -> Result<FieldModes> {
    spec.validate(grid.n_cells())?;
    let n = grid.n_cells();
    let cov = DenseMatrix::from_fn(n, n, |a, b| {
        let (xa, ya) = grid.center(a);
        let (xb, yb) = grid.center(b);
        spec.covariance(xa - xb, ya - yb)
    });
    if spec.variance == 0.0 {
        return Ok(FieldModes {
            mean: spec.mean,
            eigenvalues: vec![0.0; spec.n_modes],
            modes: DenseMatrix::from_fn(n, spec.n_modes, |i, j| ((i == j) as u8) as f64),
        });
    }
    let eig = sym_eigen(&cov, 1e-12)?;
    let mut eigenvalues = Vec::with_capacity(spec.n_modes);
    let mut modes = DenseMatrix::zeros(n, spec.n_modes);
    for j in 0..spec.n_modes {
        let src = n - 1 - j;
        eigenvalues.push(eig.values[src].max(0.0));
        modes.set_col(j, &eig.vectors.col(src));
    }
    Ok(FieldModes {
        mean: spec.mean,
        eigenvalues,
        modes,
    })
}

/// Draw a conductivity field from the truncated expansion. Either pass the
/// standard-normal coordinates explicitly or let them be drawn from the
/// seed's field channel.
pub fn sample_conductivity(
    modes: &FieldModes,
    xi: Option<&[f64]>,
    seed: u64,
) -> Result<ConductivityField> {
    let k = modes.n_modes();
    let drawn;
    let xi = match xi {
        Some(x) => {
            if x.len() != k {
                return Err(Error::dim(format!(
                    "xi has length {}, expected {} modes",
                    x.len(),
                    k
                )));
            }
            x
        }
        None => {
            drawn = standard_normal_vec(&mut stream_rng(seed, CH_FIELD, 0), k);
            &drawn
        }
    };
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "field coordinates" });
    }
    let n = modes.modes.rows();
    let mut q = vec![modes.mean; n];
    for j in 0..k {
        let a = modes.eigenvalues[j].sqrt() * xi[j];
        if a == 0.0 {
            continue;
        }
        for (i, qi) in q.iter_mut().enumerate() {
            *qi += a * modes.modes.get(i, j);
        }
    }
    ConductivityField::from_log(q)
}

// ── boundary conditions ─────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeBc {
    /// Fixed head along the edge.
    Dirichlet { value: f64 },
    /// Fixed head varying along the edge, one value per boundary cell.
    DirichletProfile { values: Vec<f64> },
    /// Homogeneous Neumann: no flow through the edge.
    NoFlux,
}

impl EdgeBc {
    pub(crate) fn is_dirichlet(&self) -> bool {
        !matches!(self, EdgeBc::NoFlux)
    }

    fn value_at(&self, k: usize) -> f64 {
        match self {
            EdgeBc::Dirichlet { value } => *value,
            EdgeBc::DirichletProfile { values } => values[k],
            EdgeBc::NoFlux => unreachable!("no value on a no-flux edge"),
        }
    }

    fn check_len(&self, expect: usize, name: &str) -> Result<()> {
        if let EdgeBc::DirichletProfile { values } = self {
            if values.len() != expect {
                return Err(Error::dim(format!(
                    "{name} profile has {} values, expected {expect}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: "boundary profile" });
            }
        }
        if let EdgeBc::Dirichlet { value } = self {
            if !value.is_finite() {
                return Err(Error::NonFinite { context: "boundary value" });
            }
        }
        Ok(())
    }
}

/// Conditions on the four edges of the rectangle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: EdgeBc,
    pub right: EdgeBc,
    pub bottom: EdgeBc,
    pub top: EdgeBc,
}

impl BoundarySpec {
    pub fn dirichlet(value: f64) -> Self {
        BoundarySpec {
            left: EdgeBc::Dirichlet { value },
            right: EdgeBc::Dirichlet { value },
            bottom: EdgeBc::Dirichlet { value },
            top: EdgeBc::Dirichlet { value },
        }
    }

    pub(crate) fn validate(&self, grid: &Grid2D) -> Result<()> {
        self.left.check_len(grid.ny, "left")?;
        self.right.check_len(grid.ny, "right")?;
        self.bottom.check_len(grid.nx, "bottom")?;
        self.top.check_len(grid.nx, "top")?;
        let any = self.left.is_dirichlet()
            || self.right.is_dirichlet()
            || self.bottom.is_dirichlet()
            || self.top.is_dirichlet();
        if !any {
            return Err(Error::IllPosed {
                detail: "all edges are no-flux; steady flow needs a Dirichlet edge".to_string(),
            });
        }
        Ok(())
    }
}

// ── banded SPD solver ───────────────────────────────────────────────

/// Symmetric banded matrix in lower-band storage: entry (r, d) holds
/// A[r][r - d] for d in 0..=bw.
struct BandedSpd {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn at(&self, r: usize, d: usize) -> f64 {
        self.band[r * (self.bw + 1) + d]
    }

    #[inline]
    fn add(&mut self, r: usize, c: usize, v: f64) {
        // Symmetric: store only c <= r.
        if c > r {
            return;
        }
        let d = r - c;
        debug_assert!(d <= self.bw);
        self.band[r * (self.bw + 1) + d] += v;
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            for d in 0..=self.bw.min(r) {
                let a = self.at(r, d);
                if a == 0.0 {
                    continue;
                }
                let c = r - d;
                y[r] += a * x[c];
                if d > 0 {
                    y[c] += a * x[r];
                }
            }
        }
        y
    }

    /// In-band Cholesky. Fails on non-positive pivots, which for this
    /// assembly means the problem lost its Dirichlet anchoring.
    fn cholesky(&self) -> Result<BandedSpd> {
        let (n, bw) = (self.n, self.bw);
        let mut l = BandedSpd::zeros(n, bw);
        for r in 0..n {
            let lo = r.saturating_sub(bw);
            for c in lo..=r {
                let mut s = self.at(r, r - c);
                let klo = lo.max(c.saturating_sub(bw));
                for k in klo..c {
                    s -= l.at(r, r - k) * l.at(c, c - k);
                }
                if c < r {
                    l.band[r * (bw + 1) + (r - c)] = s / l.at(c, 0);
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::IllPosed {
                            detail: format!("non-positive pivot {s:.3e} at row {r}"),
                        });
                    }
                    l.band[r * (bw + 1)] = s.sqrt();
                }
            }
        }
        Ok(l)
    }

    /// Solve with a precomputed factor.
    fn solve(l: &BandedSpd, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (l.n, l.bw);
        let mut y = vec![0.0; n];
        for r in 0..n {
            let mut s = b[r];
            for d in 1..=bw.min(r) {
                s -= l.at(r, d) * y[r - d];
            }
            y[r] = s / l.at(r, 0);
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut s = y[r];
            for d in 1..=bw.min(n - 1 - r) {
                s -= l.at(r + d, d) * x[r + d];
            }
            x[r] = s / l.at(r, 0);
        }
        x
    }

    fn inf_norm(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            let mut row = 0.0;
            for d in 0..=self.bw.min(r) {
                row += self.at(r, d).abs();
            }
            for d in 1..=self.bw.min(self.n - 1 - r) {
                row += self.at(r + d, d).abs();
            }
            worst = worst.max(row);
        }
        worst
    }
}

fn check_residual(a: &BandedSpd, x: &[f64], b: &[f64]) -> Result<f64> {
    let ax = a.matvec(x);
    let mut r2 = 0.0;
    let mut b2 = 0.0;
    for i in 0..b.len() {
        let r = ax[i] - b[i];
        r2 += r * r;
        b2 += b[i] * b[i];
    }
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = (b2.sqrt() + a.inf_norm() * xn).max(f64::MIN_POSITIVE);
    let rel = r2.sqrt() / denom;
    if rel > SOLVER_TOL {
        return Err(Error::NoConvergence {
            what: "banded cholesky solve",
            residual: rel,
        });
    }
    Ok(rel)
}

// ── assembly ────────────────────────────────────────────────────────

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

fn validate_flow_inputs(
    grid: &Grid2D,
    field: &ConductivityField,
    source: &[f64],
    bc: &BoundarySpec,
) -> Result<()> {
    if grid.nx < 2 || grid.ny < 2 {
        return Err(Error::invalid(format!(
            "flow solver needs at least 2 cells per direction, got {}x{}",
            grid.nx, grid.ny
        )));
    }
    if field.len() != grid.n_cells() {
        return Err(Error::dim(format!(
            "conductivity has {} cells, grid has {}",
            field.len(),
            grid.n_cells()
        )));
    }
    if source.len() != grid.n_cells() {
        return Err(Error::dim(format!(
            "source has {} cells, grid has {}",
            source.len(),
            grid.n_cells()
        )));
    }
    if source.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "source term" });
    }
    bc.validate(grid)
}

/// Assemble the five-point operator and right-hand side. Transmissibility
/// of an interior face is the harmonic mean of the adjacent conductivities
/// times face length over center distance; a Dirichlet face uses the cell
/// conductivity over the half distance.
fn assemble(
    grid: &Grid2D,
    field: &ConductivityField,
    source: &[f64],
    bc: &BoundarySpec,
) -> (BandedSpd, Vec<f64>) {
    let (nx, ny, hx, hy) = (grid.nx, grid.ny, grid.hx, grid.hy);
    let n = grid.n_cells();
    let kappa = field.kappa();
    let mut a = BandedSpd::zeros(n, nx);
    let mut b: Vec<f64> = source.iter().map(|g| g * grid.cell_area()).collect();

    let tx = hy / hx;
    let ty = hx / hy;
    for j in 0..ny {
        for i in 0..nx {
            let c = grid.idx(i, j);
            let kc = kappa[c];

            // West face.
            if i > 0 {
                let w = grid.idx(i - 1, j);
                let t = harmonic(kc, kappa[w]) * tx;
                a.add(c, c, t);
                a.add(c, w, -t);
            } else if bc.left.is_dirichlet() {
                let t = 2.0 * kc * tx;
                a.add(c, c, t);
                b[c] += t * bc.left.value_at(j);
            }
            // East face.
            if i + 1 < nx {
                let e = grid.idx(i + 1, j);
                let t = harmonic(kc, kappa[e]) * tx;
                a.add(c, c, t);
                a.add(c, e, -t);
            } else if bc.right.is_dirichlet() {
                let t = 2.0 * kc * tx;
                a.add(c, c, t);
                b[c] += t * bc.right.value_at(j);
            }
            // South face.
            if j > 0 {
                let s = grid.idx(i, j - 1);
                let t = harmonic(kc, kappa[s]) * ty;
                a.add(c, c, t);
                a.add(c, s, -t);
            } else if bc.bottom.is_dirichlet() {
                let t = 2.0 * kc * ty;
                a.add(c, c, t);
                b[c] += t * bc.bottom.value_at(i);
            }
            // North face.
            if j + 1 < ny {
                let nb = grid.idx(i, j + 1);
                let t = harmonic(kc, kappa[nb]) * ty;
                a.add(c, c, t);
                a.add(c, nb, -t);
            } else if bc.top.is_dirichlet() {
                let t = 2.0 * kc * ty;
                a.add(c, c, t);
                b[c] += t * bc.top.value_at(i);
            }
        }
    }
    (a, b)
}

// ── solutions ───────────────────────────────────────────────────────

/// Head fields with their time stamps. A steady solve stores one field at
/// time zero; a transient solve stores the initial state and every step.
#[derive(Clone, Debug)]
pub struct DarcySolution {
    pub heads: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl DarcySolution {
    pub fn final_head(&self) -> &[f64] {
        self.heads.last().expect("solution holds at least one field")
    }
}

/// Steady Darcy solve.
pub fn solve_steady(
    grid: &Grid2D,
    field: &ConductivityField,
    source: &[f64],
    bc: &BoundarySpec,
) -> Result<DarcySolution> {
    validate_flow_inputs(grid, field, source, bc)?;
    let (a, b) = assemble(grid, field, source, bc);
    let l = a.cholesky()?;
    let w = BandedSpd::solve(&l, &b);
    check_residual(&a, &w, &b)?;
    Ok(DarcySolution {
        heads: vec![w],
        times: vec![0.0],
    })
}

/// Implicit Euler time stepping of the mass-lumped semidiscrete system
/// area dw/dt + A w = b.
pub fn solve_transient(
    grid: &Grid2D,
    field: &ConductivityField,
    source: &[f64],
    bc: &BoundarySpec,
    w0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<DarcySolution> {
    validate_flow_inputs(grid, field, source, bc)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if w0.len() != grid.n_cells() {
        return Err(Error::dim(format!(
            "initial state has {} cells, grid has {}",
            w0.len(),
            grid.n_cells()
        )));
    }
    if w0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "initial head" });
    }

    let (mut a, b) = assemble(grid, field, source, bc);
    let mass = grid.cell_area() / dt;
    for r in 0..a.n {
        a.band[r * (a.bw + 1)] += mass;
    }
    let l = a.cholesky()?;

    let mut heads = Vec::with_capacity(n_steps + 1);
    let mut times = Vec::with_capacity(n_steps + 1);
    heads.push(w0.to_vec());
    times.push(0.0);
    let mut w = w0.to_vec();
    for step in 0..n_steps {
        let rhs: Vec<f64> = b.iter().zip(&w).map(|(bi, wi)| bi + mass * wi).collect();
        let next = BandedSpd::solve(&l, &rhs);
        check_residual(&a, &next, &rhs)?;
        w = next;
        heads.push(w.clone());
        times.push(dt * (step + 1) as f64);
    }
    Ok(DarcySolution { heads, times })
}

// ── quantity of interest ────────────────────────────────────────────

/// Inflow through the boundary of the extraction subdomain at one time
/// stamp: the sum of discrete face fluxes oriented into the subdomain.
/// At steady state this balances the sources inside exactly.
pub fn qoi_inflow(
    grid: &Grid2D,
    field: &ConductivityField,
    solution: &DarcySolution,
    time_index: usize,
) -> Result<f64> {
    if grid.extraction_cells.is_empty() {
        return Err(Error::invalid(
            "extraction subdomain is empty; no QoI defined".to_string(),
        ));
    }
    if time_index >= solution.heads.len() {
        return Err(Error::IndexOutOfRange {
            what: "time index",
            index: time_index,
            bound: solution.heads.len(),
        });
    }
    let w = &solution.heads[time_index];
    if w.len() != grid.n_cells() {
        return Err(Error::dim(format!(
            "head has {} cells, grid has {}",
            w.len(),
            grid.n_cells()
        )));
    }
    if field.len() != grid.n_cells() {
        return Err(Error::dim(format!(
            "conductivity has {} cells, grid has {}",
            field.len(),
            grid.n_cells()
        )));
    }
    let kappa = field.kappa();
    let inside = |c: usize| grid.extraction_cells.binary_search(&c).is_ok();
    let tx = grid.hy / grid.hx;
    let ty = grid.hx / grid.hy;

    let mut inflow = 0.0;
    for &c in &grid.extraction_cells {
        let (i, j) = (c % grid.nx, c / grid.nx);
        // Extraction cells are interior, so all four neighbors exist.
        let neighbors = [
            (grid.idx(i - 1, j), tx),
            (grid.idx(i + 1, j), tx),
            (grid.idx(i, j - 1), ty),
            (grid.idx(i, j + 1), ty),
        ];
        for (nb, scale) in neighbors {
            if inside(nb) {
                continue;
            }
            let t = harmonic(kappa[c], kappa[nb]) * scale;
            inflow += t * (w[nb] - w[c]);
        }
    }
    Ok(inflow)
}

// ── snapshot generation ─────────────────────────────────────────────

/// Full problem description for snapshot generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DarcyModel {
    pub grid: Grid2D,
    pub field_spec: KleFieldSpec,
    pub source: Vec<f64>,
    pub boundary: BoundarySpec,
}

/// One snapshot request: the recorded parameter point and, optionally, the
/// standard-normal field coordinates. Absent coordinates are drawn from
/// the per-entry stream of the run seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanEntry {
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
}

/// Solve the steady model over the plan and collect head snapshots with
/// uniform weights. Entries are independent and solved in parallel; the
/// result depends only on the seed and plan order, not on scheduling.
pub fn generate_snapshots(model: &DarcyModel, plan: &[PlanEntry], seed: u64) -> Result<SnapshotSet> {
    if plan.is_empty() {
        return Err(Error::invalid("empty snapshot plan".to_string()));
    }
    let modes = field_modes(&model.grid, &model.field_spec)?;
    let columns: Vec<(usize, Result<Vec<f64>>)> = plan
        .par_iter()
        .enumerate()
        .map(|(k, entry)| {
            let run = || -> Result<Vec<f64>> {
                let xi_drawn;
                let xi: &[f64] = match &entry.xi {
                    Some(x) => x,
                    None => {
                        xi_drawn = standard_normal_vec(
                            &mut stream_rng(seed, CH_SNAPSHOT, k as u64),
                            modes.n_modes(),
                        );
                        &xi_drawn
                    }
                };
                let field = sample_conductivity(&modes, Some(xi), seed)?;
                let sol = solve_steady(&model.grid, &field, &model.source, &model.boundary)?;
                Ok(sol.heads.into_iter().next().expect("steady head"))
            };
            (k, run())
        })
        .collect();

    let n = model.grid.n_cells();
    let mut states = DenseMatrix::zeros(n, plan.len());
    for (k, col) in columns {
        match col {
            Ok(w) => states.set_col(k, &w),
            Err(e) => {
                return Err(Error::Snapshot {
                    index: k,
                    source: Box::new(e),
                })
            }
        }
    }
    let params: Vec<Vec<f64>> = plan.iter().map(|e| e.mu.clone()).collect();
    SnapshotSet::uniform(params, states)
}
