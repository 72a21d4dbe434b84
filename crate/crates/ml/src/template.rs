//! Power-decay parametrization of the predicted error covariance:
//! T[m, n] = exp(-gamma |m - n|) * exp(j theta_p (m - n)).
//!
//! T is Hermitian and positive semi-definite for every gamma >= 0 (it is a
//! phase-similarity transform of the exponential-correlation matrix).

use mulink_autodiff::complex::{pack, CPair};
use mulink_autodiff::ops::{cos, exp, neg, sin, smul, softplus};
use mulink_autodiff::Tensor;
use ndarray::Array2;
use num_complex::Complex64;

/// Builds the packed [N_m, N_m, 2] template from the unconstrained decay
/// parameter and the phase slope.
pub fn decay_template(gamma_raw: &Tensor, theta_p: &Tensor, n_m: usize) -> Tensor {
    let gamma = softplus(gamma_raw);
    let mut dist = vec![0.0; n_m * n_m];
    let mut sign = vec![0.0; n_m * n_m];
    for m in 0..n_m {
        for n in 0..n_m {
            dist[m * n_m + n] = (m as f64 - n as f64).abs();
            sign[m * n_m + n] = m as f64 - n as f64;
        }
    }
    let dist = Tensor::constant(vec![n_m, n_m], dist);
    let sign = Tensor::constant(vec![n_m, n_m], sign);
    let mag = exp(&neg(&smul(&gamma, &dist)));
    let phase = smul(theta_p, &sign);
    let re = mulink_autodiff::ops::mul(&mag, &cos(&phase));
    let im = mulink_autodiff::ops::mul(&mag, &sin(&phase));
    pack(&CPair { re, im })
}

/// Plain-value evaluation of the template (tests, exports).
pub fn decay_template_values(gamma: f64, theta_p: f64, n_m: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((n_m, n_m), |(m, n)| {
        let d = m as f64 - n as f64;
        Complex64::from_polar((-gamma * d.abs()).exp(), theta_p * d)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mulink_core::linalg::hermitian_eig_range;
    use nalgebra::DMatrix;

    fn to_dmatrix(a: &Array2<Complex64>) -> DMatrix<Complex64> {
        DMatrix::from_fn(a.dim().0, a.dim().1, |i, j| a[(i, j)])
    }

    #[test]
    fn large_gamma_gives_identity() {
        let t = decay_template_values(60.0, 0.4, 8);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((t[(i, j)].norm() - want).abs() < 1e-20 + 1e-12);
            }
        }
    }

    #[test]
    fn zero_gamma_zero_phase_rank_one() {
        let t = decay_template_values(0.0, 0.0, 6);
        for v in t.iter() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let (lo, hi) = hermitian_eig_range(&to_dmatrix(&t));
        assert!(lo >= -1e-10);
        assert!((hi - 6.0).abs() < 1e-9);
    }

    #[test]
    fn psd_over_parameter_sweep() {
        for gamma in [0.05, 0.5, 1.5, 4.0] {
            for theta in [-1.2, -0.3, 0.0, 0.3, 1.2] {
                let t = decay_template_values(gamma, theta, 16);
                let m = to_dmatrix(&t);
                assert!(
                    mulink_core::linalg::is_hermitian_psd(&m, 1e-10),
                    "gamma {gamma} theta {theta}"
                );
                let (lo, _) = hermitian_eig_range(&m);
                assert!(lo >= -1e-10, "min eig {lo} at gamma {gamma} theta {theta}");
            }
        }
    }

    #[test]
    fn graph_template_matches_values() {
        let gamma_raw = Tensor::param(vec![1], vec![crate::params::gamma_raw_for_pi()]);
        let theta = Tensor::param(vec![1], vec![0.3]);
        let t = decay_template(&gamma_raw, &theta, 4);
        let vals = t.value();
        let reference = decay_template_values(std::f64::consts::PI, 0.3, 4);
        for i in 0..4 {
            for j in 0..4 {
                let got = Complex64::new(vals[(i * 4 + j) * 2], vals[(i * 4 + j) * 2 + 1]);
                assert!((got - reference[(i, j)]).norm() < 1e-12);
            }
        }
    }
}
