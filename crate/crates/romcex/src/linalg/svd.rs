use crate::error::{Error, Result};
use crate::linalg::eigen::{column_needs_flip, sym_eigen};
use crate::linalg::matrix::{dot, norm2, DenseMatrix};

/// Full singular value decomposition A = U diag(s) V^T.
///
/// `left` is rows x rows, `right` is cols x cols, `singular_values` has
/// length min(rows, cols) in descending order. Pairs are sign-canonical:
/// each right singular vector has its first component of largest magnitude
/// positive, with the matching left vector flipped in tandem.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub left: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub right: DenseMatrix,
}

/// Internal convergence target for the Jacobi solves backing the SVD.
const EIGEN_TOL: f64 = 1e-13;

impl SvdResult {
    /// Rank-k truncation sum_{j<k} s_j u_j v_j^T.
    pub fn truncated(&self, k: usize) -> DenseMatrix {
        let k = k.min(self.singular_values.len());
        let mut out = DenseMatrix::zeros(self.left.rows(), self.right.rows());
        for j in 0..k {
            out.add_outer(
                &self.left.col(j),
                &self.right.col(j),
                self.singular_values[j],
            );
        }
        out
    }

    /// U diag(s) V^T over all retained singular values.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.truncated(self.singular_values.len())
    }
}

/// Subtract from `v` its projection onto each of `basis`, twice for
/// numerical safety.
fn orthogonalize_against(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for c in basis {
            let p = dot(c, v);
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= p * ci;
            }
        }
    }
}

/// Extend orthonormal `cols` to an orthonormal basis of R^n using canonical
/// basis candidates, deterministically.
fn complete_basis(cols: &mut Vec<Vec<f64>>, n: usize) {
    let mut candidate = 0;
    while cols.len() < n {
        assert!(candidate < n, "basis completion exhausted candidates");
        let mut v = vec![0.0; n];
        v[candidate] = 1.0;
        candidate += 1;
        orthogonalize_against(&mut v, cols);
        let nrm = norm2(&v);
        // A candidate nearly inside the span is skipped; with fewer than n
        // columns, at least one canonical vector keeps norm >= 1/sqrt(n).
        if nrm > 0.5 / (n as f64).sqrt() {
            for vi in v.iter_mut() {
                *vi /= nrm;
            }
            cols.push(v);
        }
    }
}

fn flip_column(m: &mut DenseMatrix, j: usize) {
    for i in 0..m.rows() {
        let v = m.get(i, j);
        m.set(i, j, -v);
    }
}

/// Full SVD computed from the eigendecomposition of the smaller Gram
/// matrix, A^T A or A A^T. Singular values at or below `tol` times the
/// largest are treated as zero: their partner vectors are not recovered by
/// division but completed to an orthonormal basis by Gram-Schmidt.
pub fn svd(a: &DenseMatrix, tol: f64) -> Result<SvdResult> {
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("tol must be nonnegative, got {tol}")));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite { context: "svd input" });
    }
    let (m, n) = (a.rows(), a.cols());
    let k = m.min(n);
    if k == 0 {
        return Ok(SvdResult {
            left: DenseMatrix::identity(m),
            singular_values: vec![],
            right: DenseMatrix::identity(n),
        });
    }

    // Eigen-solve the smaller Gram matrix; its eigenvectors give one factor
    // complete, the other is recovered column by column.
    let tall = m >= n;
    let gram = if tall {
        a.transpose().matmul(a)
    } else {
        a.matmul(&a.transpose())
    };
    let eig = sym_eigen(&gram, EIGEN_TOL)?;

    // Eigenvalues arrive ascending; singular values leave descending.
    let mut sigma = Vec::with_capacity(k);
    let mut small: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in (0..k).rev() {
        sigma.push(eig.values[j].max(0.0).sqrt());
        small.push(eig.vectors.col(j));
    }
    let cutoff = tol * sigma[0];

    let other_dim = if tall { m } else { n };
    let mut other: Vec<Vec<f64>> = Vec::with_capacity(other_dim);
    for j in 0..k {
        if !(sigma[j] > cutoff && sigma[j] > 0.0) {
            break;
        }
        let prod = if tall {
            a.matvec(&small[j])
        } else {
            a.transpose().matvec(&small[j])
        };
        let mut u: Vec<f64> = prod.iter().map(|v| v / sigma[j]).collect();
        orthogonalize_against(&mut u, &other);
        let nrm = norm2(&u);
        if nrm <= 0.5 {
            // Numerically dependent despite passing the cutoff; treat this
            // and all smaller singular values as zero.
            break;
        }
        for ui in u.iter_mut() {
            *ui /= nrm;
        }
        other.push(u);
    }
    complete_basis(&mut other, other_dim);

    let small_dim = if tall { n } else { m };
    let small_m = DenseMatrix::from_fn(small_dim, small_dim, |i, j| small[j][i]);
    let other_m = DenseMatrix::from_fn(other_dim, other_dim, |i, j| other[j][i]);
    let (mut left, mut right) = if tall {
        (other_m, small_m)
    } else {
        (small_m, other_m)
    };

    // Canonical signs: pivot on the right vector of each (u_j, v_j) pair and
    // flip both together; columns beyond the pairs are fixed independently.
    for j in 0..k {
        if column_needs_flip(&right, j) {
            flip_column(&mut right, j);
            flip_column(&mut left, j);
        }
    }
    for j in k..m {
        if column_needs_flip(&left, j) {
            flip_column(&mut left, j);
        }
    }
    for j in k..n {
        if column_needs_flip(&right, j) {
            flip_column(&mut right, j);
        }
    }

    Ok(SvdResult {
        left,
        singular_values: sigma,
        right,
    })
}

/// k-th s-number (singular value) of a, 1-based. For k = min(m, n) + 1 the
/// value is zero, matching the distance-to-rank-(k-1) characterization.
pub fn s_number(a: &DenseMatrix, k: usize) -> Result<f64> {
    let bound = a.rows().min(a.cols()) + 1;
    if k == 0 || k > bound {
        return Err(Error::IndexOutOfRange {
            what: "s-number",
            index: k,
            bound,
        });
    }
    if k == bound {
        return Ok(0.0);
    }
    let dec = svd(a, 1e-12)?;
    Ok(dec.singular_values[k - 1])
}

/// Spectral norm, the first s-number.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(0.0);
    }
    s_number(a, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_matrix;

    fn assert_orthonormal(m: &DenseMatrix, tol: f64) {
        let g = m.transpose().matmul(m);
        let err = g.sub(&DenseMatrix::identity(m.cols())).max_abs();
        assert!(err <= tol, "not orthonormal: {err}");
    }

    #[test]
    fn zero_matrix_svd() {
        let a = DenseMatrix::zeros(2, 3);
        let d = svd(&a, 1e-12).unwrap();
        assert_eq!(d.singular_values, vec![0.0, 0.0]);
        assert_orthonormal(&d.left, 1e-14);
        assert_orthonormal(&d.right, 1e-14);
        assert!(d.reconstruct().max_abs() == 0.0);
    }

    #[test]
    fn diagonal_svd() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = svd(&a, 1e-12).unwrap();
        assert!((d.singular_values[0] - 2.0).abs() <= 1e-12);
        assert!((d.singular_values[1] - 1.0).abs() <= 1e-12);
        assert!(d.reconstruct().sub(&a).max_abs() <= 1e-12);
    }

    #[test]
    fn seeded_svd_matches_gram_eigenvalues() {
        let a = random_matrix(6, 4, 7);
        let d = svd(&a, 1e-12).unwrap();
        let gram = a.transpose().matmul(&a);
        let eig = sym_eigen(&gram, 1e-13).unwrap();
        for (j, s) in d.singular_values.iter().enumerate() {
            let lam = eig.values[eig.values.len() - 1 - j];
            assert!((s * s - lam).abs() <= 1e-9 * lam.max(1.0), "sigma^2 vs eigenvalue");
        }
        assert_orthonormal(&d.left, 1e-10);
        assert_orthonormal(&d.right, 1e-10);
        assert!(d.reconstruct().sub(&a).max_abs() <= 1e-10);
        for w in d.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn rank_deficient_svd_completes_basis() {
        // Rank-1 matrix 3x4: outer product.
        let u = [1.0, -2.0, 0.5];
        let v = [0.5, 1.0, -1.0, 2.0];
        let mut a = DenseMatrix::zeros(3, 4);
        a.add_outer(&u, &v, 1.0);
        let d = svd(&a, 1e-12).unwrap();
        assert!(d.singular_values[0] > 1.0);
        assert!(d.singular_values[1] <= 1e-7 * d.singular_values[0]);
        assert_orthonormal(&d.left, 1e-10);
        assert_orthonormal(&d.right, 1e-10);
        assert!(d.reconstruct().sub(&a).max_abs() <= 1e-8);
    }

    #[test]
    fn transpose_shares_s_numbers() {
        for seed in [3u64, 4, 5] {
            let a = random_matrix(5, 3, seed);
            let at = a.transpose();
            for k in 1..=4 {
                let sa = s_number(&a, k).unwrap();
                let sat = s_number(&at, k).unwrap();
                assert!(
                    (sa - sat).abs() <= 1e-8 * sa.max(1.0),
                    "s-number {k}: {sa} vs {sat}"
                );
            }
        }
    }

    #[test]
    fn s_number_bounds_and_tail() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(s_number(&a, 2).unwrap(), 1.0);
        assert_eq!(s_number(&a, 3).unwrap(), 0.0);
        assert!(s_number(&a, 0).is_err());
        assert!(s_number(&a, 4).is_err());
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        // Independent check of the norm through a different algorithm.
        let a = random_matrix(5, 4, 11);
        let mut x = vec![1.0; 4];
        let nrm = norm2(&x);
        for xi in x.iter_mut() {
            *xi /= nrm;
        }
        let ata = a.transpose().matmul(&a);
        for _ in 0..200 {
            let y = ata.matvec(&x);
            let ny = norm2(&y);
            x = y.iter().map(|v| v / ny).collect();
        }
        let rayleigh = dot(&x, &ata.matvec(&x)).sqrt();
        let s1 = spectral_norm(&a).unwrap();
        assert!((s1 - rayleigh).abs() <= 1e-8 * rayleigh, "{s1} vs {rayleigh}");
    }

    #[test]
    fn eckart_young_truncation_error() {
        // Best rank-k error in the spectral norm equals the next s-number,
        // and random low-rank competitors never do better.
        for seed in [21u64, 22] {
            let a = random_matrix(5, 4, seed);
            let d = svd(&a, 1e-12).unwrap();
            for k in 0..=4usize {
                let err = spectral_norm(&a.sub(&d.truncated(k))).unwrap();
                let zeta = s_number(&a, k + 1).unwrap();
                assert!((err - zeta).abs() <= 1e-8, "rank {k}: {err} vs {zeta}");
            }
            for k in 1..=4usize {
                let zeta = s_number(&a, k).unwrap();
                for trial in 0..200 {
                    let b = {
                        let f = random_matrix(5, k - 1, 1000 + trial);
                        let g = random_matrix(k - 1, 4, 2000 + trial);
                        f.matmul(&g)
                    };
                    let err = spectral_norm(&a.sub(&b)).unwrap();
                    assert!(
                        err >= zeta - 1e-8,
                        "rank-{} competitor beat s-number {k}",
                        k - 1
                    );
                }
            }
        }
    }

    #[test]
    fn svd_is_deterministic() {
        let a = random_matrix(4, 6, 31);
        let d1 = svd(&a, 1e-12).unwrap();
        let d2 = svd(&a, 1e-12).unwrap();
        assert_eq!(d1.left, d2.left);
        assert_eq!(d1.right, d2.right);
        assert_eq!(d1.singular_values, d2.singular_values);
    }
}
