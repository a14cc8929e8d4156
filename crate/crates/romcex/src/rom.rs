//! Reduced-order models built from snapshots: orthogonal projection
//! bases, a reduced basis method for affinely parametrized operators,
//! and a greedy low-rank tensor fit.
//!
//! All three reducers consume the same raw material, solutions of the
//! full model at sampled parameters, and differ in what structure they
//! exploit: the projection basis keeps dominant directions, the reduced
//! basis method precomputes Galerkin projections of each affine operator
//! component so online solves cost nothing in the full dimension, and
//! the tensor fit separates parameter and noise axes term by term.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::darcy::{BoundarySpec, Grid2D};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, svd, try_cholesky, CholFactor, DenseMatrix};
use crate::parametric_map::{build_map, SnapshotSet};
use crate::rng::{standard_normal_vec, stream_rng, CH_ALS, CH_PDCHECK};

// ── projection basis ────────────────────────────────────────────────────

/// Orthonormal basis of the dominant snapshot directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PodBasis {
    /// Orthonormal columns, one per retained direction.
    pub columns: DenseMatrix,
    /// Fraction of the weighted snapshot energy captured, in [0, 1].
    pub captured_energy: f64,
}

// Singular values come out of a Gram-matrix eigensolve, whose absolute
// eigenvalue error is about 1e-13 * sigma_1^2; square roots of that noise
// show up near 3e-7 * sigma_1, so the rank cutoff must sit above it.
const POD_RANK_TOL: f64 = 1e-8;
const SVD_TOL: f64 = 1e-13;

/// Extracts the best rank-`k` orthonormal basis for the weighted
/// snapshot columns. Among all orthonormal `k`-column frames, these
/// columns minimize the Frobenius error of projecting the weighted
/// snapshot matrix onto their span.
pub fn pod_basis(set: &SnapshotSet, k: usize) -> Result<PodBasis> {
    if k == 0 {
        return Err(Error::invalid("projection basis size must be at least 1"));
    }
    let z = build_map(set).transpose();
    let dec = svd(&z, SVD_TOL)?;
    let lead = dec.singular_values.first().copied().unwrap_or(0.0);
    let rank = dec
        .singular_values
        .iter()
        .filter(|&&s| s > POD_RANK_TOL * lead)
        .count();
    if k > rank {
        return Err(Error::IndexOutOfRange {
            what: "projection basis size",
            index: k,
            bound: rank,
        });
    }
    let total: f64 = dec.singular_values.iter().map(|s| s * s).sum();
    let kept: f64 = dec.singular_values[..k].iter().map(|s| s * s).sum();
    let columns = DenseMatrix::from_fn(z.rows(), k, |r, c| dec.left.get(r, c));
    Ok(PodBasis {
        columns,
        captured_energy: if total > 0.0 { kept / total } else { 1.0 },
    })
}

// ── affine parametric operators ─────────────────────────────────────────

/// Named coefficient function multiplying one operator component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ThetaForm {
    /// One parameter coordinate verbatim.
    Coordinate { index: usize },
    /// A parameter-independent weight.
    Constant { value: f64 },
}

impl ThetaForm {
    pub fn eval(&self, mu: &[f64]) -> Result<f64> {
        match *self {
            ThetaForm::Coordinate { index } => {
                if index >= mu.len() {
                    return Err(Error::IndexOutOfRange {
                        what: "parameter coordinate",
                        index,
                        bound: mu.len(),
                    });
                }
                Ok(mu[index])
            }
            ThetaForm::Constant { value } => Ok(value),
        }
    }

    /// Smallest parameter length this form can be evaluated at.
    fn min_params(&self) -> usize {
        match *self {
            ThetaForm::Coordinate { index } => index + 1,
            ThetaForm::Constant { .. } => 0,
        }
    }
}

const SYMMETRY_TOL_REL: f64 = 1e-10;

/// Operator family A(mu) = sum of theta_q(mu) * A_q with symmetric
/// components, the structure that lets a reduced model precompute every
/// projection once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineOperator {
    components: Vec<DenseMatrix>,
    theta: Vec<ThetaForm>,
}

impl AffineOperator {
    pub fn new(components: Vec<DenseMatrix>, theta: Vec<ThetaForm>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("affine operator needs at least one component"));
        }
        if components.len() != theta.len() {
            return Err(Error::dim(format!(
                "{} components but {} coefficient forms",
                components.len(),
                theta.len()
            )));
        }
        let n = components[0].rows();
        for (q, a) in components.iter().enumerate() {
            if !a.is_square() || a.rows() != n {
                return Err(Error::dim(format!(
                    "component {q} is {}x{}, expected {n}x{n}",
                    a.rows(),
                    a.cols()
                )));
            }
            let asym = a.max_asymmetry();
            let tol = SYMMETRY_TOL_REL * a.frobenius_norm().max(1.0);
            if asym > tol {
                return Err(Error::NotSymmetric {
                    asymmetry: asym,
                    tolerance: tol,
                });
            }
        }
        Ok(Self { components, theta })
    }

    pub fn dim(&self) -> usize {
        self.components[0].rows()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[DenseMatrix] {
        &self.components
    }

    pub fn theta(&self) -> &[ThetaForm] {
        &self.theta
    }

    /// Assembles A(mu) densely.
    pub fn assemble(&self, mu: &[f64]) -> Result<DenseMatrix> {
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter value",
            });
        }
        let n = self.dim();
        let mut a = DenseMatrix::zeros(n, n);
        for (comp, th) in self.components.iter().zip(&self.theta) {
            let w = th.eval(mu)?;
            a = a.add(&comp.scaled(w));
        }
        Ok(a)
    }

    /// Checks positive definiteness over a parameter box by strict
    /// Cholesky at the box center, at every corner when the dimension
    /// allows enumerating them, and at seeded uniform samples.
    pub fn validate_pd_on_box(
        &self,
        bounds: &[(f64, f64)],
        samples: usize,
        seed: u64,
    ) -> Result<()> {
        if bounds.is_empty() {
            return Err(Error::invalid("parameter box must have at least one axis"));
        }
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid(format!(
                    "parameter box axis {d} has invalid range [{lo}, {hi}]"
                )));
            }
        }
        let need = self.theta.iter().map(|t| t.min_params()).max().unwrap_or(0);
        if need > bounds.len() {
            return Err(Error::IndexOutOfRange {
                what: "parameter box axis",
                index: need - 1,
                bound: bounds.len(),
            });
        }
        let d = bounds.len();
        let mut points: Vec<Vec<f64>> =
            vec![bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()];
        if d <= 10 {
            for mask in 0..(1usize << d) {
                points.push(
                    bounds
                        .iter()
                        .enumerate()
                        .map(|(i, &(lo, hi))| if mask >> i & 1 == 1 { hi } else { lo })
                        .collect(),
                );
            }
        }
        let mut rng = stream_rng(seed, CH_PDCHECK, 0);
        for _ in 0..samples {
            points.push(
                bounds
                    .iter()
                    .map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
                    .collect(),
            );
        }
        for mu in points {
            let a = self.assemble(&mu)?;
            if try_cholesky(&a, 0.0).is_none() {
                return Err(Error::NotCoercive { parameter: mu });
            }
        }
        Ok(())
    }
}

/// Assembles the dense flow stiffness matrix with arithmetically
/// averaged face conductivities. Unlike the harmonic average of the full
/// model's solver, the arithmetic average is linear in the cell values,
/// so piecewise-constant conductivities decompose exactly into affine
/// components.
pub fn arithmetic_stiffness(
    grid: &Grid2D,
    kappa: &[f64],
    boundary: &BoundarySpec,
) -> Result<DenseMatrix> {
    let n = grid.n_cells();
    if kappa.len() != n {
        return Err(Error::dim(format!(
            "conductivity has {} cells, grid has {n}",
            kappa.len()
        )));
    }
    if kappa.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(
            "arithmetic assembly needs finite nonnegative conductivities",
        ));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let tx = grid.hy() / grid.hx();
    let ty = grid.hx() / grid.hy();
    let mut a = DenseMatrix::zeros(n, n);
    let mut couple = |c: usize, r: usize, t: f64| {
        a.set(c, c, a.get(c, c) + t);
        a.set(r, r, a.get(r, r) + t);
        a.set(c, r, a.get(c, r) - t);
        a.set(r, c, a.get(r, c) - t);
    };
    for j in 0..ny {
        for i in 0..nx - 1 {
            let c = grid.idx(i, j);
            let r = grid.idx(i + 1, j);
            couple(c, r, 0.5 * (kappa[c] + kappa[r]) * tx);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let c = grid.idx(i, j);
            let r = grid.idx(i, j + 1);
            couple(c, r, 0.5 * (kappa[c] + kappa[r]) * ty);
        }
    }
    let mut pin = |c: usize, t: f64| a.set(c, c, a.get(c, c) + t);
    if boundary.left.is_dirichlet() {
        for j in 0..ny {
            let c = grid.idx(0, j);
            pin(c, 2.0 * kappa[c] * tx);
        }
    }
    if boundary.right.is_dirichlet() {
        for j in 0..ny {
            let c = grid.idx(nx - 1, j);
            pin(c, 2.0 * kappa[c] * tx);
        }
    }
    if boundary.bottom.is_dirichlet() {
        for i in 0..nx {
            let c = grid.idx(i, 0);
            pin(c, 2.0 * kappa[c] * ty);
        }
    }
    if boundary.top.is_dirichlet() {
        for i in 0..nx {
            let c = grid.idx(i, ny - 1);
            pin(c, 2.0 * kappa[c] * ty);
        }
    }
    Ok(a)
}

/// Builds the affine operator family for a flow problem whose
/// conductivity is constant on each declared subdomain: component q is
/// the stiffness assembled with the indicator of subdomain q, and its
/// coefficient is the parameter coordinate mu_q.
///
/// The subdomains must partition the grid cells.
pub fn affine_darcy_operator(
    grid: &Grid2D,
    subdomains: &[Vec<usize>],
    boundary: &BoundarySpec,
) -> Result<AffineOperator> {
    if subdomains.is_empty() {
        return Err(Error::invalid("at least one subdomain is required"));
    }
    boundary.validate(grid)?;
    let n = grid.n_cells();
    let mut owner = vec![usize::MAX; n];
    for (q, cells) in subdomains.iter().enumerate() {
        for &c in cells {
            if c >= n {
                return Err(Error::IndexOutOfRange {
                    what: "subdomain cell",
                    index: c,
                    bound: n,
                });
            }
            if owner[c] != usize::MAX {
                return Err(Error::invalid(format!(
                    "cell {c} assigned to subdomains {} and {q}",
                    owner[c]
                )));
            }
            owner[c] = q;
        }
    }
    if owner.contains(&usize::MAX) {
        return Err(Error::invalid("subdomains must cover every grid cell"));
    }
    let mut components = Vec::with_capacity(subdomains.len());
    let mut theta = Vec::with_capacity(subdomains.len());
    for (q, cells) in subdomains.iter().enumerate() {
        let mut indicator = vec![0.0; n];
        for &c in cells {
            indicator[c] = 1.0;
        }
        components.push(arithmetic_stiffness(grid, &indicator, boundary)?);
        theta.push(ThetaForm::Coordinate { index: q });
    }
    AffineOperator::new(components, theta)
}

// ── reduced basis method ────────────────────────────────────────────────

/// Offline product of the reduced basis method: an orthonormal snapshot
/// basis plus the projections of every affine component, so an online
/// solve touches nothing of size n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbmModel {
    /// Orthonormal columns spanning the training snapshots.
    pub basis: DenseMatrix,
    /// Coefficient forms, copied from the offline operator.
    pub theta: Vec<ThetaForm>,
    /// basis^T * A_q * basis for each component q.
    pub reduced_components: Vec<DenseMatrix>,
    /// basis^T * load.
    pub reduced_load: Vec<f64>,
}

/// One online solve: reduced coefficients, their lift to the full space,
/// and the energy value load . lifted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbmSolution {
    pub coefficients: Vec<f64>,
    pub lifted: Vec<f64>,
    pub energy: f64,
}

const RBM_DROP_TOL: f64 = 1e-10;

fn solve_spd_strict(a: &DenseMatrix, rhs: &[f64]) -> Option<Vec<f64>> {
    let lower = try_cholesky(a, 0.0)?;
    Some(
        CholFactor {
            lower,
            jitter_used: 0.0,
        }
        .solve_vec(rhs),
    )
}

/// Solves the full problem at every training parameter, orthonormalizes
/// the snapshots (dropping dependent directions), and precomputes the
/// reduced matrices. Snapshot solves run in parallel; the merge order is
/// the training order, so the result is deterministic.
pub fn rbm_offline(
    operator: &AffineOperator,
    load: &[f64],
    train_params: &[Vec<f64>],
) -> Result<RbmModel> {
    let n = operator.dim();
    if load.len() != n {
        return Err(Error::dim(format!(
            "load has length {}, operator dimension is {n}",
            load.len()
        )));
    }
    if load.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "load vector" });
    }
    if train_params.is_empty() {
        return Err(Error::invalid("training set must not be empty"));
    }
    let snapshots: Vec<Vec<f64>> = train_params
        .par_iter()
        .map(|mu| {
            let a = operator.assemble(mu)?;
            solve_spd_strict(&a, load).ok_or_else(|| Error::NotCoercive {
                parameter: mu.clone(),
            })
        })
        .collect::<Result<_>>()?;

    // Rank-revealing modified Gram-Schmidt in training order. Two
    // orthogonalization passes keep the basis orthonormal to roundoff.
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for snap in &snapshots {
        let scale = norm2(snap);
        if scale == 0.0 {
            continue;
        }
        let mut v = snap.clone();
        for _ in 0..2 {
            for col in &cols {
                let p = dot(&v, col);
                for (vi, ci) in v.iter_mut().zip(col) {
                    *vi -= p * ci;
                }
            }
        }
        let rem = norm2(&v);
        if rem <= RBM_DROP_TOL * scale {
            continue;
        }
        for vi in &mut v {
            *vi /= rem;
        }
        cols.push(v);
    }
    if cols.is_empty() {
        return Err(Error::invalid(
            "no independent snapshot directions; is the load zero?",
        ));
    }
    let basis = DenseMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]);
    let bt = basis.transpose();
    let reduced_components = operator
        .components()
        .iter()
        .map(|aq| {
            let raw = bt.matmul(&aq.matmul(&basis));
            // Symmetrize away roundoff so the online factorization sees
            // an exactly symmetric matrix.
            raw.add(&raw.transpose()).scaled(0.5)
        })
        .collect();
    Ok(RbmModel {
        basis,
        theta: operator.theta().to_vec(),
        reduced_components,
        reduced_load: bt.matvec(load),
    })
}

/// Galerkin solve in the reduced space at one parameter.
pub fn rbm_online(model: &RbmModel, mu: &[f64]) -> Result<RbmSolution> {
    let m = model.basis.cols();
    let mut a = DenseMatrix::zeros(m, m);
    for (comp, th) in model.reduced_components.iter().zip(&model.theta) {
        a = a.add(&comp.scaled(th.eval(mu)?));
    }
    let coefficients = solve_spd_strict(&a, &model.reduced_load)
        .ok_or(Error::IllConditioned { jitter: 0.0 })?;
    let lifted = model.basis.matvec(&coefficients);
    let energy = dot(&coefficients, &model.reduced_load);
    Ok(RbmSolution {
        coefficients,
        lifted,
        energy,
    })
}

// ── low-rank tensor fit ─────────────────────────────────────────────────

/// Dense 3-way array over (parameter grid, first noise grid, second
/// noise grid), stored row-major as ((i * dim1) + j) * dim2 + k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let need = dims.0 * dims.1 * dims.2;
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::invalid("tensor dimensions must be positive"));
        }
        if data.len() != need {
            return Err(Error::dim(format!(
                "tensor data has {} entries, dims {:?} need {need}",
                data.len(),
                dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "tensor entry" });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.0 * dims.1 * dims.2])
    }

    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                for k in 0..dims.2 {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims.0 && j < self.dims.1 && k < self.dims.2);
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Serializes as indexed CSV rows under the header
    /// `i_mu,i_M,i_N,value`, in natural index order.
    pub fn to_indexed_csv(&self) -> String {
        let mut out = String::from("i_mu,i_M,i_N,value\n");
        for i in 0..self.dims.0 {
            for j in 0..self.dims.1 {
                for k in 0..self.dims.2 {
                    out.push_str(&format!("{i},{j},{k},{}\n", self.get(i, j, k)));
                }
            }
        }
        out
    }

    /// Parses the indexed CSV form. Dimensions are inferred from the
    /// largest index on each axis; absent entries default to zero and
    /// duplicate indices are rejected.
    pub fn from_indexed_csv(text: &str, path: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "i_mu,i_M,i_N,value" => {}
            Some((_, h)) => {
                return Err(parse_err(1, format!("expected header i_mu,i_M,i_N,value, got {h:?}")))
            }
            None => return Err(parse_err(1, "empty tensor file".into())),
        }
        let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
        let mut dims = (0usize, 0usize, 0usize);
        for (ln, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(parse_err(ln + 1, format!("expected 4 fields, got {}", fields.len())));
            }
            let idx = |s: &str| -> Result<usize> {
                s.trim()
                    .parse()
                    .map_err(|e| parse_err(ln + 1, format!("bad index {s:?}: {e}")))
            };
            let (i, j, k) = (idx(fields[0])?, idx(fields[1])?, idx(fields[2])?);
            let v: f64 = fields[3]
                .trim()
                .parse()
                .map_err(|e| parse_err(ln + 1, format!("bad value {:?}: {e}", fields[3])))?;
            if !v.is_finite() {
                return Err(parse_err(ln + 1, format!("non-finite value {v}")));
            }
            dims.0 = dims.0.max(i + 1);
            dims.1 = dims.1.max(j + 1);
            dims.2 = dims.2.max(k + 1);
            entries.push((i, j, k, v));
        }
        if entries.is_empty() {
            return Err(parse_err(1, "tensor file has no data rows".into()));
        }
        let mut t = Self::zeros(dims)?;
        let mut seen = vec![false; t.data.len()];
        for (i, j, k, v) in entries {
            let o = t.offset(i, j, k);
            if seen[o] {
                return Err(parse_err(0, format!("duplicate index ({i},{j},{k})")));
            }
            seen[o] = true;
            t.data[o] = v;
        }
        Ok(t)
    }
}

/// One separable term: a vector per axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpTerm {
    pub mu: Vec<f64>,
    pub omega_m: Vec<f64>,
    pub omega_n: Vec<f64>,
}

impl CpTerm {
    fn zero(dims: (usize, usize, usize)) -> Self {
        Self {
            mu: vec![0.0; dims.0],
            omega_m: vec![0.0; dims.1],
            omega_n: vec![0.0; dims.2],
        }
    }
}

/// Sum of rank-one terms approximating a 3-way array. Each nonzero term
/// keeps its mu-factor and omega_N-factor at unit norm; the magnitude
/// rides on the omega_M factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorCP {
    pub rank: usize,
    pub factors: Vec<CpTerm>,
}

impl TensorCP {
    pub fn eval(&self, i: usize, j: usize, k: usize) -> f64 {
        self.factors
            .iter()
            .map(|t| (t.mu[i] * t.omega_m[j]) * t.omega_n[k])
            .sum()
    }

    pub fn reconstruct(&self) -> Result<Tensor3> {
        let first = self
            .factors
            .first()
            .ok_or_else(|| Error::invalid("empty tensor decomposition"))?;
        let dims = (first.mu.len(), first.omega_m.len(), first.omega_n.len());
        Tensor3::from_fn(dims, |i, j, k| self.eval(i, j, k))
    }
}

/// Trace of one greedy fit: the Frobenius objective after every exact
/// single-factor update, and how many degenerate factor resets happened.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlsReport {
    pub objective_history: Vec<f64>,
    pub resets: usize,
}

const ALS_DEGENERATE_REL: f64 = 1e-14;

/// Residual norm with one rank-one term removed. The same product
/// grouping is used when the term is finally subtracted, so the norm of
/// the next residual bitwise matches the last objective value.
fn residual_minus_term(r: &Tensor3, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..r.dims.0 {
        for j in 0..r.dims.1 {
            let ab = a[i] * b[j];
            for k in 0..r.dims.2 {
                let d = r.get(i, j, k) - ab * c[k];
                s += d * d;
            }
        }
    }
    s.sqrt()
}

fn random_unit(rng: &mut rand_chacha::ChaCha12Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v = standard_normal_vec(rng, n);
        let s = norm2(&v);
        if s > 1e-3 {
            for x in &mut v {
                *x /= s;
            }
            return v;
        }
    }
}

/// Greedy low-rank fit: terms are extracted one at a time, each fitted
/// to the current residual by alternating exact least-squares updates of
/// its three factors, then frozen and subtracted. A factor whose update
/// collapses to zero is reset once to a seeded random direction; if it
/// collapses again the term is recorded as zero. A zero residual makes
/// all remaining terms zero.
pub fn tensor_als(
    samples: &Tensor3,
    rank: usize,
    sweeps: usize,
    tol: f64,
) -> Result<(TensorCP, AlsReport)> {
    if rank == 0 {
        return Err(Error::invalid("tensor rank must be at least 1"));
    }
    if sweeps == 0 {
        return Err(Error::invalid("sweep budget must be at least 1"));
    }
    if !tol.is_finite() || tol < 0.0 {
        return Err(Error::invalid("stopping tolerance must be finite and nonnegative"));
    }
    let dims = samples.dims();
    let (ni, nj, nk) = dims;
    let mut residual = samples.clone();
    let mut history = Vec::new();
    let mut resets = 0usize;
    let mut terms: Vec<CpTerm> = Vec::with_capacity(rank);

    for term_index in 0..rank {
        let rnorm = residual.frobenius_norm();
        history.push(rnorm);
        if rnorm == 0.0 {
            terms.push(CpTerm::zero(dims));
            continue;
        }
        // b and c stay at unit norm during the sweeps; a carries the
        // term magnitude.
        let mut a = vec![0.0; ni];
        let mut b = vec![1.0 / (nj as f64).sqrt(); nj];
        let mut c = vec![1.0 / (nk as f64).sqrt(); nk];
        let mut reset_used = false;
        let mut abandoned = false;
        let mut term_rng = stream_rng(0, CH_ALS, term_index as u64);

        'sweeps: for _ in 0..sweeps {
            let before_sweep = *history.last().unwrap();
            for axis in 0..3 {
                // Exact least-squares update of one factor with the
                // other two held fixed.
                let update: Vec<f64> = match axis {
                    0 => {
                        let mut g = vec![0.0; ni];
                        for i in 0..ni {
                            for j in 0..nj {
                                for k in 0..nk {
                                    g[i] += residual.get(i, j, k) * b[j] * c[k];
                                }
                            }
                        }
                        g
                    }
                    1 => {
                        let na2 = dot(&a, &a);
                        let mut g = vec![0.0; nj];
                        for i in 0..ni {
                            for j in 0..nj {
                                for k in 0..nk {
                                    g[j] += residual.get(i, j, k) * a[i] * c[k];
                                }
                            }
                        }
                        for x in &mut g {
                            *x /= na2;
                        }
                        g
                    }
                    _ => {
                        let na2 = dot(&a, &a);
                        let mut g = vec![0.0; nk];
                        for i in 0..ni {
                            for j in 0..nj {
                                for k in 0..nk {
                                    g[k] += residual.get(i, j, k) * a[i] * b[j];
                                }
                            }
                        }
                        for x in &mut g {
                            *x /= na2;
                        }
                        g
                    }
                };
                let nu = norm2(&update);
                let degenerate = !nu.is_finite() || nu <= ALS_DEGENERATE_REL * rnorm;
                if degenerate {
                    if reset_used {
                        abandoned = true;
                        break 'sweeps;
                    }
                    reset_used = true;
                    resets += 1;
                    let n_axis = [ni, nj, nk][axis];
                    let fresh = random_unit(&mut term_rng, n_axis);
                    match axis {
                        0 => a = fresh,
                        1 => b = fresh,
                        _ => c = fresh,
                    }
                    // No objective record here: a reset is not a
                    // least-squares step, and the next one subsumes it.
                    continue;
                }
                match axis {
                    0 => a = update,
                    1 => {
                        // Renormalize and fold the scale into a so the
                        // rank-one product is unchanged.
                        for x in &mut a {
                            *x *= nu;
                        }
                        b = update.iter().map(|x| x / nu).collect();
                    }
                    _ => {
                        for x in &mut a {
                            *x *= nu;
                        }
                        c = update.iter().map(|x| x / nu).collect();
                    }
                }
                history.push(residual_minus_term(&residual, &a, &b, &c));
            }
            let after_sweep = *history.last().unwrap();
            if before_sweep > 0.0 && (before_sweep - after_sweep) / before_sweep < tol {
                break;
            }
        }

        if abandoned {
            terms.push(CpTerm::zero(dims));
            continue;
        }
        let na = norm2(&a);
        if na == 0.0 {
            terms.push(CpTerm::zero(dims));
            continue;
        }
        // Final normalization: mu-factor and omega_N-factor to unit
        // norm, magnitude on the omega_M factor.
        let term = CpTerm {
            mu: a.iter().map(|x| x / na).collect(),
            omega_m: b.iter().map(|x| x * na).collect(),
            omega_n: c.clone(),
        };
        for i in 0..ni {
            for j in 0..nj {
                let ab = a[i] * b[j];
                for k in 0..nk {
                    let v = residual.get(i, j, k) - ab * c[k];
                    residual.set(i, j, k, v);
                }
            }
        }
        terms.push(term);
    }
    history.push(residual.frobenius_norm());
    Ok((
        TensorCP {
            rank,
            factors: terms,
        },
        AlsReport {
            objective_history: history,
            resets,
        },
    ))
}
