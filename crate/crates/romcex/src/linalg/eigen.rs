use crate::error::{Error, Result};
use crate::linalg::matrix::DenseMatrix;

/// Eigendecomposition of a symmetric matrix.
///
/// `values` are ascending; column j of `vectors` is the eigenvector of
/// `values[j]`, scaled so its first component of largest magnitude is
/// positive.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

const MAX_SWEEPS: usize = 100;

/// Default relative gap separating distinct eigenvalue clusters.
pub const DEFAULT_GAP_REL: f64 = 1e-8;

/// Relative threshold below which a clamped eigenvalue still counts as PSD.
const PSD_TOL_REL: f64 = 1e-10;

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = a.get(i, j);
                s += v * v;
            }
        }
    }
    s.sqrt()
}

/// Scale eigenvector columns so the first component of largest magnitude is
/// positive. Keeps output comparable across runs and platforms.
pub(crate) fn fix_column_signs(m: &mut DenseMatrix) {
    for j in 0..m.cols() {
        if column_needs_flip(m, j) {
            for i in 0..m.rows() {
                let v = m.get(i, j);
                m.set(i, j, -v);
            }
        }
    }
}

pub(crate) fn column_needs_flip(m: &DenseMatrix, j: usize) -> bool {
    let mut best = 0.0f64;
    let mut sign = 0.0f64;
    for i in 0..m.rows() {
        let v = m.get(i, j);
        if v.abs() > best {
            best = v.abs();
            sign = v;
        }
    }
    sign < 0.0
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Rotations are applied in row-cyclic order until the off-diagonal
/// Frobenius norm falls below `tol` times the Frobenius norm of the input.
/// Inputs asymmetric beyond that same relative threshold are rejected;
/// asymmetry below it is symmetrized away before iterating.
pub fn sym_eigen(a: &DenseMatrix, tol: f64) -> Result<SymEigen> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tol must be positive, got {tol}")));
    }
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite { context: "sym_eigen input" });
    }
    let n = a.rows();
    let scale = a.frobenius_norm();
    let asym = a.max_asymmetry();
    if asym > tol * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: tol * scale,
        });
    }

    // Work on the symmetrized copy; the threshold below is fixed by the
    // input scale, not updated as the iteration shrinks entries.
    let mut w = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    let mut v = DenseMatrix::identity(n);
    let target = tol * scale;

    let mut converged = n < 2 || off_diagonal_norm(&w) <= target;
    if !converged {
        for _sweep in 0..MAX_SWEEPS {
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = w.get(p, q);
                    if apq == 0.0 {
                        continue;
                    }
                    let app = w.get(p, p);
                    let aqq = w.get(q, q);
                    // Stable rotation choice, Golub & Van Loan convention.
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (1.0 + theta * theta).sqrt())
                    } else {
                        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;

                    for k in 0..n {
                        let wkp = w.get(k, p);
                        let wkq = w.get(k, q);
                        w.set(k, p, c * wkp - s * wkq);
                        w.set(k, q, s * wkp + c * wkq);
                    }
                    for k in 0..n {
                        let wpk = w.get(p, k);
                        let wqk = w.get(q, k);
                        w.set(p, k, c * wpk - s * wqk);
                        w.set(q, k, s * wpk + c * wqk);
                    }
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
            if off_diagonal_norm(&w) <= target {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "jacobi eigenvalue iteration",
            residual: off_diagonal_norm(&w),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w.get(i, i).partial_cmp(&w.get(j, j)).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| w.get(i, i)).collect();
    let mut vectors = DenseMatrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    fix_column_signs(&mut vectors);

    Ok(SymEigen { values, vectors })
}

/// Group ascending eigenvalues into clusters separated by more than `gap`.
/// Returns (start, end) index ranges, end exclusive.
fn clusters(values: &[f64], gap: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..values.len() {
        if values[i] - values[i - 1] > gap {
            out.push((start, i));
            start = i;
        }
    }
    if !values.is_empty() {
        out.push((start, values.len()));
    }
    out
}

/// Spectral projector onto the eigenspace of the `which`-th distinct
/// eigenvalue (ascending), evaluated as the Lagrange polynomial of the
/// matrix itself over the distinct eigenvalues.
///
/// Eigenvalues within `gap` of each other form one cluster; `gap` defaults
/// to 1e-8 times the Frobenius norm of `a`. A chain of near-coincident
/// values whose total spread still exceeds the gap is refused rather than
/// split arbitrarily.
pub fn spectral_projector(
    a: &DenseMatrix,
    eig: &SymEigen,
    which: usize,
    gap: Option<f64>,
) -> Result<DenseMatrix> {
    let n = a.rows();
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if eig.values.len() != n || eig.vectors.rows() != n {
        return Err(Error::dim(format!(
            "eigendecomposition of size {} does not match {}x{} matrix",
            eig.values.len(),
            n,
            n
        )));
    }
    let gap = gap.unwrap_or(DEFAULT_GAP_REL * a.frobenius_norm()).max(f64::MIN_POSITIVE);
    let groups = clusters(&eig.values, gap);
    if which >= groups.len() {
        return Err(Error::IndexOutOfRange {
            what: "distinct eigenvalue",
            index: which,
            bound: groups.len(),
        });
    }
    let (s, e) = groups[which];
    if eig.values[e - 1] - eig.values[s] > gap {
        return Err(Error::Degenerate { index: which, gap });
    }

    let rep = |range: (usize, usize)| -> f64 {
        eig.values[range.0..range.1].iter().sum::<f64>() / (range.1 - range.0) as f64
    };
    let lm = rep((s, e));
    let mut proj = DenseMatrix::identity(n);
    for (gi, &g) in groups.iter().enumerate() {
        if gi == which {
            continue;
        }
        let lk = rep(g);
        // proj <- proj * (A - lk I) / (lm - lk)
        let mut shifted = a.clone();
        for i in 0..n {
            shifted.set(i, i, shifted.get(i, i) - lk);
        }
        proj = proj.matmul(&shifted).scaled(1.0 / (lm - lk));
    }
    Ok(proj)
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in [-tol, 0) are clamped to zero; anything below -tol is a
/// genuine negative direction and rejected. The tolerance is relative,
/// 1e-10 times max(1, Frobenius norm).
pub fn matrix_sqrt_psd(c: &DenseMatrix) -> Result<DenseMatrix> {
    let eig = sym_eigen(c, 1e-12)?;
    let n = c.rows();
    let tol = PSD_TOL_REL * c.frobenius_norm().max(1.0);
    let mut roots = Vec::with_capacity(n);
    for &l in &eig.values {
        if l < -tol {
            return Err(Error::NotPsd { eigenvalue: l });
        }
        roots.push(l.max(0.0).sqrt());
    }
    // S = V diag(sqrt(l)) V^T, built column-scaled then symmetrized.
    let mut scaled = eig.vectors.clone();
    for j in 0..n {
        for i in 0..n {
            scaled.set(i, j, scaled.get(i, j) * roots[j]);
        }
    }
    let s = scaled.matmul(&eig.vectors.transpose());
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        0.5 * (s.get(i, j) + s.get(j, i))
    }))
}
