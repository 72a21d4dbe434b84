//! Independent reference implementations used only by tests and the
//! acceptance suite. Nothing here is called by the receive chains; each
//! function evaluates its quantity from first principles so it can serve as
//! an oracle for the production path.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::CMat;

/// Summed-MSE objective of a grouped equalizer candidate W over the REs of a
/// group: sum_re tr((I - W H)(I - W H)^H) + tr(W (E + sigma^2 I) W^H),
/// evaluated directly from the error covariance expansion.
pub fn group_mse_objective(w: &CMat, h: &[CMat], e: &[CMat], sigma2: f64) -> f64 {
    let n_k = w.nrows();
    let n_m = w.ncols();
    let eye = CMat::identity(n_k, n_k);
    let mut total = 0.0;
    for (h_re, e_re) in h.iter().zip(e.iter()) {
        let a = &eye - w * h_re;
        total += (&a * a.adjoint()).trace().re;
        let mut c = e_re.clone();
        for i in 0..n_m {
            c[(i, i)] += Complex64::new(sigma2, 0.0);
        }
        total += (w * c * w.adjoint()).trace().re;
    }
    total
}

/// Gradient of [`group_mse_objective`] with respect to conj(W), derived from
/// the objective itself (never from the closed-form solution).
fn group_mse_gradient(w: &CMat, h: &[CMat], e: &[CMat], sigma2: f64) -> CMat {
    let n_k = w.nrows();
    let n_m = w.ncols();
    let eye = CMat::identity(n_k, n_k);
    let mut g = CMat::zeros(n_k, n_m);
    for (h_re, e_re) in h.iter().zip(e.iter()) {
        let a = &eye - w * h_re;
        g -= a * h_re.adjoint();
        let mut c = e_re.clone();
        for i in 0..n_m {
            c[(i, i)] += Complex64::new(sigma2, 0.0);
        }
        g += w * c;
    }
    g
}

/// Minimizes the summed-MSE objective by conjugate-gradient descent with an
/// exact quadratic line search. Returns the minimizing W.
pub fn minimize_group_mse(
    h: &[CMat],
    e: &[CMat],
    sigma2: f64,
    n_k: usize,
    n_m: usize,
    grad_tol: f64,
) -> CMat {
    let mut w = CMat::zeros(n_k, n_m);
    let mut g = group_mse_gradient(&w, h, e, sigma2);
    let mut dir = -g.clone();
    let dims = 2 * n_k * n_m;
    for it in 0..200 * dims {
        let gnorm = g.norm();
        if gnorm < grad_tol {
            break;
        }
        // Exact line search on the quadratic: phi(a) = L(w + a d).
        let phi0 = group_mse_objective(&w, h, e, sigma2);
        let phi_p = group_mse_objective(&(&w + &dir), h, e, sigma2);
        let phi_m = group_mse_objective(&(&w - &dir), h, e, sigma2);
        let second = phi_p + phi_m - 2.0 * phi0;
        let first = (phi_p - phi_m) / 2.0;
        if second <= 0.0 {
            break;
        }
        let alpha = -first / second;
        w += dir.scale(alpha);

        let g_new = group_mse_gradient(&w, h, e, sigma2);
        // Polak-Ribiere with periodic restart.
        let num = (g_new.adjoint() * (&g_new - &g)).trace().re;
        let den = (g.adjoint() * &g).trace().re;
        let beta = if it % dims == dims - 1 { 0.0 } else { (num / den).max(0.0) };
        dir = -g_new.clone() + dir.scale(beta);
        g = g_new;
    }
    w
}

/// Textbook per-RE LMMSE equalizer via an explicit matrix inverse,
/// independent of the Cholesky-solve production path.
pub fn per_re_lmmse(h: &CMat, e: &CMat, sigma2: f64) -> CMat {
    let n_m = h.nrows();
    let mut b = h * h.adjoint() + e;
    for i in 0..n_m {
        b[(i, i)] += Complex64::new(sigma2, 0.0);
    }
    let binv = b.try_inverse().expect("invertible");
    h.adjoint() * binv
}

/// Exact LLR by direct (unshifted) enumeration of the constellation.
pub fn llr_direct(
    x: Complex64,
    nu2: f64,
    constellation: &crate::grid::Constellation,
) -> Vec<f64> {
    let m = constellation.bits_per_symbol;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut s = [0.0f64; 2];
        for b in 0..2 {
            for &p in &constellation.bit_subsets[i][b] {
                s[b] += (-(x - constellation.points[p]).norm_sqr() / nu2).exp();
            }
        }
        out.push(s[1].ln() - s[0].ln());
    }
    out
}

/// Complementary error function (rational Chebyshev fit, |rel err| < 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Gaussian tail probability Q(x).
pub fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Largest entry magnitude of a complex matrix.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Random complex matrix with i.i.d. CN(0, 1) entries.
pub fn random_cmat(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> CMat {
    use rand_distr::{Distribution, StandardNormal};
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Random Hermitian PSD matrix A A^H / n.
pub fn random_psd(rng: &mut impl rand::Rng, n: usize, scale: f64) -> CMat {
    let a = random_cmat(rng, n, n);
    (&a * a.adjoint()).scale(scale / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfc_reference_values() {
        // Against high-precision tabulated values.
        let cases = [
            (0.0, 1.0),
            (0.5, 0.479500122186953),
            (1.0, 0.157299207050285),
            (2.0, 0.004677734981063),
        ];
        for (x, want) in cases {
            assert!((erfc(x) - want).abs() < 3e-7 * want.max(1e-3), "erfc({x})");
        }
    }

    #[test]
    fn minimizer_recovers_scalar_case() {
        let h = vec![CMat::from_element(1, 1, Complex64::new(1.0, 0.0))];
        let e = vec![CMat::zeros(1, 1)];
        let w = minimize_group_mse(&h, &e, 1.0, 1, 1, 1e-12);
        assert!((w[(0, 0)] - Complex64::new(0.5, 0.0)).norm() < 1e-9);
    }
}
