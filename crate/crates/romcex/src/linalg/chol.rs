use crate::error::{Error, Result};
use crate::linalg::matrix::DenseMatrix;

/// Lower-triangular Cholesky factor of c + jitter_used * I.
#[derive(Clone, Debug)]
pub struct CholFactor {
    pub lower: DenseMatrix,
    pub jitter_used: f64,
}

const JITTER_BASE_REL: f64 = 1e-12;
const JITTER_CAP_REL: f64 = 1e-4;

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solve (L L^T) x = b by forward and back substitution.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length mismatch");
        let l = &self.lower;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l.get(k, i) * x[k];
            }
            x[i] = s / l.get(i, i);
        }
        x
    }

    /// Solve against every column of b.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.rows(), self.dim(), "rhs rows mismatch");
        let mut out = DenseMatrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            out.set_col(j, &self.solve_vec(&b.col(j)));
        }
        out
    }
}

/// Plain lower Cholesky; None when a pivot is non-positive or non-finite.
pub(crate) fn try_cholesky(c: &DenseMatrix, jitter: f64) -> Option<DenseMatrix> {
    let n = c.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = c.get(j, j) + jitter;
        for k in 0..j {
            let v = l.get(j, k);
            pivot -= v * v;
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        let d = pivot.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = c.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            let v = s / d;
            if !v.is_finite() {
                return None;
            }
            l.set(i, j, v);
        }
    }
    Some(l)
}

/// Cholesky factorization with geometric jitter escalation.
///
/// The matrix is tried as-is first; on failure a multiple of the identity
/// is added, starting at `base_jitter` (or 1e-12 times the mean diagonal
/// when zero) and growing tenfold per retry up to 1e-4 times the mean
/// diagonal. Exceeding the cap is a conditioning error: the input is then
/// too indefinite to pass off as PSD noise.
pub fn chol_psd(c: &DenseMatrix, base_jitter: f64) -> Result<CholFactor> {
    if !c.is_square() {
        return Err(Error::NotSquare {
            rows: c.rows(),
            cols: c.cols(),
        });
    }
    if !c.is_finite() {
        return Err(Error::NonFinite { context: "chol_psd input" });
    }
    if !(base_jitter >= 0.0) {
        return Err(Error::invalid(format!(
            "base_jitter must be nonnegative, got {base_jitter}"
        )));
    }
    let scale = c.frobenius_norm().max(f64::MIN_POSITIVE);
    let asym = c.max_asymmetry();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: 1e-12 * scale,
        });
    }

    let n = c.rows();
    if n == 0 {
        return Ok(CholFactor {
            lower: DenseMatrix::zeros(0, 0),
            jitter_used: 0.0,
        });
    }
    let mean_diag = c.trace() / n as f64;
    let diag_scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let base = if base_jitter > 0.0 {
        base_jitter
    } else {
        JITTER_BASE_REL * diag_scale
    };
    let cap = JITTER_CAP_REL * diag_scale;

    if let Some(lower) = try_cholesky(c, 0.0) {
        return Ok(CholFactor {
            lower,
            jitter_used: 0.0,
        });
    }
    let mut jitter = base;
    loop {
        if let Some(lower) = try_cholesky(c, jitter) {
            return Ok(CholFactor {
                lower,
                jitter_used: jitter,
            });
        }
        if jitter > cap {
            return Err(Error::IllConditioned { jitter });
        }
        jitter *= 10.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_needs_no_jitter() {
        let f = chol_psd(&DenseMatrix::identity(3), 0.0).unwrap();
        assert_eq!(f.jitter_used, 0.0);
        assert_eq!(f.lower, DenseMatrix::identity(3));
    }

    #[test]
    fn hand_checked_factor() {
        let c = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let f = chol_psd(&c, 0.0).unwrap();
        let expect = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(f.lower.sub(&expect).max_abs() <= 1e-14);
        assert_eq!(f.jitter_used, 0.0);
    }

    #[test]
    fn rank_deficient_succeeds_with_jitter() {
        let c = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let f = chol_psd(&c, 0.0).unwrap();
        assert!(f.jitter_used > 0.0);
        let llt = f.lower.matmul(&f.lower.transpose());
        assert!(llt.sub(&c).max_abs() <= 10.0 * f.jitter_used);
    }

    #[test]
    fn indefinite_exhausts_jitter_cap() {
        let c = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        match chol_psd(&c, 0.0) {
            Err(Error::IllConditioned { jitter }) => assert!(jitter > 0.0),
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn solve_round_trips() {
        let c = DenseMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap();
        let f = chol_psd(&c, 0.0).unwrap();
        let x_true = vec![1.0, -2.0, 0.5];
        let b = c.matvec(&x_true);
        let x = f.solve_vec(&b);
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() <= 1e-12);
        }
        let xm = f.solve_matrix(&DenseMatrix::identity(3));
        let should_be_i = c.matmul(&xm);
        assert!(should_be_i.sub(&DenseMatrix::identity(3)).max_abs() <= 1e-12);
    }

    #[test]
    fn rejects_asymmetric() {
        let c = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(chol_psd(&c, 0.0), Err(Error::NotSymmetric { .. })));
    }
}
