//! Small dense complex-matrix helpers shared by the receive chains.

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

/// Projects onto the Hermitian part, (A + A^H) / 2.
pub fn hermitianize(a: &CMat) -> CMat {
    let ah = a.adjoint();
    (a + ah).scale(0.5)
}

/// Solves A X = B for Hermitian positive (semi-)definite A via Cholesky.
/// Falls back to a small ridge when the factorization fails.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    debug_assert_eq!(a.nrows(), a.ncols());
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol.solve(b));
    }
    let scale = a.diagonal().iter().map(|d| d.re.abs()).fold(0.0f64, f64::max).max(1.0);
    let ridge = 1e-12 * scale;
    log::warn!("Cholesky failed; retrying with ridge {ridge:.3e}");
    let mut reg = a.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += Complex64::new(ridge, 0.0);
    }
    Cholesky::new(reg)
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::numerical("Hermitian solve failed even with ridge"))
}

/// Cached Cholesky factor for repeated solves against one matrix.
pub fn factor_hpd(a: &CMat) -> Result<Cholesky<Complex64, Dyn>> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol);
    }
    let scale = a.diagonal().iter().map(|d| d.re.abs()).fold(0.0f64, f64::max).max(1.0);
    let ridge = 1e-12 * scale;
    log::warn!("Cholesky failed; retrying with ridge {ridge:.3e}");
    let mut reg = a.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += Complex64::new(ridge, 0.0);
    }
    Cholesky::new(reg).ok_or_else(|| Error::numerical("Hermitian factorization failed"))
}

/// Eigenvalue range of a Hermitian matrix.
pub fn hermitian_eig_range(a: &CMat) -> (f64, f64) {
    let eig = a.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Checks Hermitian symmetry and eigenvalues >= -tol * max_eig.
pub fn is_hermitian_psd(a: &CMat, rel_tol: f64) -> bool {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..=i {
            let d = a[(i, j)] - a[(j, i)].conj();
            if d.norm() > 1e-9 * (1.0 + a[(i, j)].norm()) {
                return false;
            }
        }
    }
    let (lo, hi) = hermitian_eig_range(a);
    lo >= -rel_tol * hi.max(1e-30)
}

/// Square root of a Hermitian PSD matrix (eigenvalue clipping at zero).
pub fn psd_sqrt(a: &CMat) -> CMat {
    let eig = a.clone().symmetric_eigen();
    let n = a.nrows();
    let mut scaled = eig.eigenvectors.clone();
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        let s = Complex64::new(v.max(0.0).sqrt(), 0.0);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    &scaled * eig.eigenvectors.adjoint()
}
