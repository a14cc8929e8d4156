//! Self-contained dense linear algebra: symmetric eigensolves by cyclic
//! Jacobi rotations, SVD through the smaller Gram matrix, spectral
//! projectors as matrix Lagrange polynomials, PSD square roots, jittered
//! Cholesky, and s-numbers.
//!
//! Everything here is deterministic: fixed sweep orders, canonical sign
//! conventions, no randomized pivoting. The spectral routines back the
//! correlation and reduced-basis machinery in the rest of the crate.

mod chol;
mod eigen;
mod matrix;
mod svd;

pub use chol::{chol_psd, CholFactor};
pub use eigen::{matrix_sqrt_psd, spectral_projector, sym_eigen, SymEigen, DEFAULT_GAP_REL};
pub use matrix::{dot, norm2, DenseMatrix};
pub use svd::{s_number, spectral_norm, svd, SvdResult};

pub(crate) use chol::try_cholesky;
