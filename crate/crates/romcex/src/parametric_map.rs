//! The sampled parametric map and its spectral content.
//!
//! A solution map evaluated at m weighted parameter points, states stored
//! as columns r(mu_k), defines the scaled map R with rows
//! sqrt(rho_k) r(mu_k)^T. Its two correlations C_U = R^T R on state space
//! and C_Q = R R^T on parameter samples share every nonzero eigenvalue, and
//! the singular value decomposition of R yields the Karhunen-Loeve
//! expansion r(mu) = sum_j sigma_j s_j(mu) v_j: `modes` v_j orthonormal in
//! state space, `param_functions` s_j orthonormal against the weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, sym_eigen, DenseMatrix};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Snapshots of a parametric map: parameter points, state columns, and
/// normalized nonnegative weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotSet {
    params: Vec<Vec<f64>>,
    states: DenseMatrix,
    weights: Vec<f64>,
}

impl SnapshotSet {
    pub fn new(params: Vec<Vec<f64>>, states: DenseMatrix, weights: Vec<f64>) -> Result<Self> {
        let m = params.len();
        if states.cols() != m || weights.len() != m {
            return Err(Error::dim(format!(
                "snapshot counts disagree: {} params, {} state columns, {} weights",
                m,
                states.cols(),
                weights.len()
            )));
        }
        if m > 0 {
            let d = params[0].len();
            if params.iter().any(|p| p.len() != d) {
                return Err(Error::dim("parameter points of unequal dimension".to_string()));
            }
            if params.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: "snapshot parameters" });
            }
        }
        if !states.is_finite() {
            return Err(Error::NonFinite { context: "snapshot states" });
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("weights must be nonnegative".to_string()));
        }
        if m > 0 {
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::invalid(format!(
                    "weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL:e}"
                )));
            }
        }
        Ok(SnapshotSet {
            params,
            states,
            weights,
        })
    }

    /// Uniform weights 1/m.
    pub fn uniform(params: Vec<Vec<f64>>, states: DenseMatrix) -> Result<Self> {
        let m = params.len();
        let w = if m == 0 {
            vec![]
        } else {
            vec![1.0 / m as f64; m]
        };
        SnapshotSet::new(params, states, w)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.rows()
    }

    pub fn param_dim(&self) -> usize {
        self.params.first().map_or(0, |p| p.len())
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn states(&self) -> &DenseMatrix {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn state_col(&self, k: usize) -> Vec<f64> {
        self.states.col(k)
    }
}

/// Correlation on state space (c_u, n x n) and on the parameter samples
/// (c_q, m x m). Both are PSD and share their nonzero spectrum.
#[derive(Clone, Debug)]
pub struct CorrelationPair {
    pub c_u: DenseMatrix,
    pub c_q: DenseMatrix,
}

/// Truncated Karhunen-Loeve expansion of a snapshot set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KleBasis {
    /// Singular values, descending, strictly above the build tolerance.
    pub sigmas: Vec<f64>,
    /// State-space modes v_j, orthonormal columns, n x rank.
    pub modes: DenseMatrix,
    /// Sampled parameter functions s_j(mu_k), m x rank, weight-orthonormal.
    pub param_functions: DenseMatrix,
    /// Snapshot weights rho_k, carried for energy accounting.
    pub weights: Vec<f64>,
}

impl KleBasis {
    pub fn rank(&self) -> usize {
        self.sigmas.len()
    }
}

/// Scaled snapshot map R, m x n, row k = sqrt(rho_k) r(mu_k)^T.
pub fn build_map(set: &SnapshotSet) -> DenseMatrix {
    let (m, n) = (set.len(), set.state_dim());
    DenseMatrix::from_fn(m, n, |k, i| set.weights[k].sqrt() * set.states.get(i, k))
}

/// Both correlations of the scaled map. c_u accumulates weighted outer
/// products of the states; c_q holds the weighted pairwise inner products.
pub fn correlation_u(set: &SnapshotSet) -> CorrelationPair {
    let (m, n) = (set.len(), set.state_dim());
    let mut c_u = DenseMatrix::zeros(n, n);
    let cols: Vec<Vec<f64>> = (0..m).map(|k| set.state_col(k)).collect();
    for k in 0..m {
        c_u.add_outer(&cols[k], &cols[k], set.weights[k]);
    }
    let mut c_q = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = (set.weights[i] * set.weights[j]).sqrt() * dot(&cols[i], &cols[j]);
            c_q.set(i, j, v);
            c_q.set(j, i, v);
        }
    }
    CorrelationPair { c_u, c_q }
}

/// Unweighted kernel Gram matrix of snapshot inner products
/// <r(mu_i), r(mu_j)>.
pub fn gram_kernel(set: &SnapshotSet) -> DenseMatrix {
    let m = set.len();
    let cols: Vec<Vec<f64>> = (0..m).map(|k| set.state_col(k)).collect();
    let mut g = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = dot(&cols[i], &cols[j]);
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

const KLE_EIGEN_TOL: f64 = 1e-13;

/// Karhunen-Loeve expansion of the snapshot set.
///
/// The spectrum comes from the smaller of the two correlations; modes are
/// recovered on the other side and sign-fixed so the first component of
/// largest magnitude in each mode is positive. Singular values at or below
/// `tol` times the largest are dropped.
pub fn kle(set: &SnapshotSet, tol: f64) -> Result<KleBasis> {
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("tol must be nonnegative, got {tol}")));
    }
    let (m, n) = (set.len(), set.state_dim());
    if m == 0 || n == 0 {
        return Ok(KleBasis {
            sigmas: vec![],
            modes: DenseMatrix::zeros(n, 0),
            param_functions: DenseMatrix::zeros(m, 0),
            weights: set.weights.clone(),
        });
    }

    let r = build_map(set);
    let k_max = m.min(n);

    // Eigen-solve the smaller correlation; both paths produce the modes v_j
    // up to rounding, the small side merely determines the cheap solve.
    let (mut sigmas, mut mode_cols): (Vec<f64>, Vec<Vec<f64>>) = if m <= n {
        let c_q = r.matmul(&r.transpose());
        let eig = sym_eigen(&c_q, KLE_EIGEN_TOL)?;
        let mut sig = Vec::new();
        let mut cols = Vec::new();
        for j in (0..k_max).rev() {
            let s = eig.values[j].max(0.0).sqrt();
            sig.push(s);
            if s > 0.0 {
                let w = eig.vectors.col(j);
                cols.push(r.transpose().matvec(&w).iter().map(|v| v / s).collect());
            }
        }
        (sig, cols)
    } else {
        let c_u = r.transpose().matmul(&r);
        let eig = sym_eigen(&c_u, KLE_EIGEN_TOL)?;
        let mut sig = Vec::new();
        let mut cols = Vec::new();
        for j in (0..n).rev() {
            if sig.len() == k_max {
                break;
            }
            let s = eig.values[j].max(0.0).sqrt();
            sig.push(s);
            cols.push(eig.vectors.col(j));
        }
        (sig, cols)
    };

    // Truncate: strictly above tol * sigma_1 and positive.
    let cutoff = tol * sigmas.first().copied().unwrap_or(0.0);
    let rank = sigmas
        .iter()
        .take(mode_cols.len())
        .take_while(|&&s| s > cutoff && s > 0.0)
        .count();
    sigmas.truncate(rank);
    mode_cols.truncate(rank);

    // Orthonormalize recovered modes (one Gram-Schmidt pass absorbs the
    // rounding from division by small singular values) and fix signs.
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(rank);
    for mut v in mode_cols {
        for c in &kept {
            let p = dot(c, &v);
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= p * ci;
            }
        }
        let nrm = norm2(&v);
        if nrm <= 0.5 {
            break;
        }
        for vi in v.iter_mut() {
            *vi /= nrm;
        }
        let mut pivot = 0.0f64;
        let mut best = 0.0f64;
        for &x in &v {
            if x.abs() > best {
                best = x.abs();
                pivot = x;
            }
        }
        if pivot < 0.0 {
            for vi in v.iter_mut() {
                *vi = -*vi;
            }
        }
        kept.push(v);
    }
    sigmas.truncate(kept.len());
    let rank = kept.len();

    let modes = DenseMatrix::from_fn(n, rank, |i, j| kept[j][i]);
    // s_j(mu_k) = <r(mu_k), v_j> / sigma_j, well defined also at zero-weight
    // snapshots.
    let param_functions = DenseMatrix::from_fn(m, rank, |k, j| {
        dot(&set.state_col(k), &kept[j]) / sigmas[j]
    });

    Ok(KleBasis {
        sigmas,
        modes,
        param_functions,
        weights: set.weights.clone(),
    })
}

/// Rank-M reconstruction of snapshot k: sum_{j<M} sigma_j s_j(mu_k) v_j.
pub fn reconstruct(basis: &KleBasis, rank: usize, k: usize) -> Result<Vec<f64>> {
    if rank > basis.rank() {
        return Err(Error::invalid(format!(
            "rank {rank} exceeds available {}",
            basis.rank()
        )));
    }
    let m = basis.param_functions.rows();
    if k >= m {
        return Err(Error::IndexOutOfRange {
            what: "snapshot",
            index: k,
            bound: m,
        });
    }
    let n = basis.modes.rows();
    let mut out = vec![0.0; n];
    for j in 0..rank {
        let c = basis.sigmas[j] * basis.param_functions.get(k, j);
        for i in 0..n {
            out[i] += c * basis.modes.get(i, j);
        }
    }
    Ok(out)
}

/// Retain exactly the singular values >= a.
pub fn truncate_by_threshold(basis: &KleBasis, a: f64) -> Result<KleBasis> {
    if !(a >= 0.0) {
        return Err(Error::invalid(format!("threshold must be nonnegative, got {a}")));
    }
    let rank = basis.sigmas.iter().take_while(|&&s| s >= a).count();
    Ok(KleBasis {
        sigmas: basis.sigmas[..rank].to_vec(),
        modes: DenseMatrix::from_fn(basis.modes.rows(), rank, |i, j| basis.modes.get(i, j)),
        param_functions: DenseMatrix::from_fn(basis.param_functions.rows(), rank, |i, j| {
            basis.param_functions.get(i, j)
        }),
        weights: basis.weights.clone(),
    })
}

/// Weighted squared reconstruction error at rank M over the whole set:
/// sum_k rho_k |r_k - rec_M(k)|^2. Equals the tail sum_{j>M} sigma_j^2.
pub fn reconstruction_energy_error(set: &SnapshotSet, basis: &KleBasis, rank: usize) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..set.len() {
        let rec = reconstruct(basis, rank, k)?;
        let r = set.state_col(k);
        let d2: f64 = r.iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum();
        total += set.weights()[k] * d2;
    }
    Ok(total)
}
