//! Grouped-LMMSE equalization, unbiasing, effective-noise computation and
//! exact LLR demapping for the uplink.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array3, Array4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimator::ErrorStats;
use crate::grid::{Constellation, GridConfig, PilotKind, RB_SIZE};
use crate::linalg::{solve_hpd, CMat};

/// Inclusive RE index ranges sharing one equalization matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupRange {
    pub f: (usize, usize),
    pub t: (usize, usize),
}

impl GroupRange {
    pub fn res(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (f0, f1) = self.f;
        let (t0, t1) = self.t;
        (f0..=f1).flat_map(move |f| (t0..=t1).map(move |t| (f, t)))
    }

    pub fn len(&self) -> usize {
        (self.f.1 - self.f.0 + 1) * (self.t.1 - self.t.0 + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Default group geometry over one slot (t indices are slot-relative):
/// full-grid for the one-pilot pattern, resource-block by half-slot for the
/// two-pilot pattern.
pub fn equalizer_groups(grid: &GridConfig) -> Vec<GroupRange> {
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    match grid.pilot_kind {
        PilotKind::OneP => vec![GroupRange { f: (0, n_f - 1), t: (0, n_t - 1) }],
        PilotKind::TwoP => {
            let half = n_t / 2;
            let mut groups = Vec::new();
            for rb in 0..n_f / RB_SIZE {
                for (t0, t1) in [(0, half - 1), (half, n_t - 1)] {
                    groups.push(GroupRange {
                        f: (rb * RB_SIZE, rb * RB_SIZE + RB_SIZE - 1),
                        t: (t0, t1),
                    });
                }
            }
            groups
        }
    }
}

/// One grouped-LMMSE equalization matrix:
/// W = (sum H_hat^H) (sum (H_hat H_hat^H + E + sigma^2 I))^{-1},
/// with the sums running over every RE of the group.
pub fn grouped_lmmse_weights(h_hat: &[CMat], e: Option<&[CMat]>, sigma2: f64) -> Result<CMat> {
    if h_hat.is_empty() {
        return Err(Error::config("empty equalizer group"));
    }
    if sigma2 < 0.0 {
        return Err(Error::config("sigma2 must be >= 0"));
    }
    let n_m = h_hat[0].nrows();
    let n_k = h_hat[0].ncols();
    let mut a = CMat::zeros(n_k, n_m);
    let mut b = CMat::zeros(n_m, n_m);
    for (idx, h) in h_hat.iter().enumerate() {
        a += h.adjoint();
        b += h * h.adjoint();
        if let Some(e) = e {
            b += &e[idx];
        }
        for i in 0..n_m {
            b[(i, i)] += Complex64::new(sigma2, 0.0);
        }
    }
    // W = A B^{-1}; solve the Hermitian system for W^H = B^{-1} A^H.
    let wh = solve_hpd(&b, &a.adjoint())?;
    Ok(wh.adjoint())
}

/// Per-RE unbiasing matrix D = ((W H_hat) (.) I)^{-1}. Zero diagonal entries
/// mark the user stream as erased (None).
pub fn unbias(w: &CMat, h_hat: &CMat) -> Vec<Option<Complex64>> {
    let wh = w * h_hat;
    (0..wh.nrows())
        .map(|k| {
            let d = wh[(k, k)];
            if d.norm() == 0.0 {
                None
            } else {
                Some(Complex64::new(1.0, 0.0) / d)
            }
        })
        .collect()
}

/// Unbiased equalized vector x_hat = D W y (erased streams yield zero).
pub fn equalize(d: &[Option<Complex64>], w: &CMat, y: &DVector<Complex64>) -> DVector<Complex64> {
    let wy = w * y;
    DVector::from_fn(d.len(), |k, _| match d[k] {
        Some(dk) => dk * wy[k],
        None => Complex64::new(0.0, 0.0),
    })
}

/// Post-equalization effective noise variance for user k:
/// nu^2 = w^H (H_-k H_-k^H + E + sigma^2 I) w / |w^H h_k|^2,
/// where w is the conjugated k-th row of W.
pub fn post_eq_noise_var(
    w: &CMat,
    h_hat: &CMat,
    e: Option<&CMat>,
    sigma2: f64,
    k: usize,
) -> f64 {
    let n_m = w.ncols();
    let n_k = h_hat.ncols();
    // w_k as a column vector: conj of row k.
    let wk = DVector::from_fn(n_m, |m, _| w[(k, m)].conj());
    // z_i = h_i^H w_k; interference power = ||z||^2 - |z_k|^2.
    let z = h_hat.adjoint() * &wk;
    let mut num = 0.0;
    for i in 0..n_k {
        if i != k {
            num += z[i].norm_sqr();
        }
    }
    if let Some(e) = e {
        num += (wk.adjoint() * e * &wk)[(0, 0)].re;
    }
    num += sigma2 * wk.norm_squared();
    let den = z[k].norm_sqr();
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Exact max-log-stable LLRs, convention LLR = ln(P(b=1)/P(b=0)).
/// An erased stream (non-finite nu2) yields all-zero LLRs.
pub fn demap_llr(x: Complex64, nu2: f64, constellation: &Constellation) -> Result<Vec<f64>> {
    if !x.re.is_finite() || !x.im.is_finite() {
        return Err(Error::numerical("non-finite equalized symbol"));
    }
    let m = constellation.bits_per_symbol;
    if !nu2.is_finite() {
        return Ok(vec![0.0; m]);
    }
    if nu2 <= 0.0 {
        return Err(Error::numerical("nu2 must be positive"));
    }
    let metrics: Vec<f64> =
        constellation.points.iter().map(|c| -(x - c).norm_sqr() / nu2).collect();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut lse = [0.0f64; 2];
        for b in 0..2 {
            let subset = &constellation.bit_subsets[i][b];
            let max = subset.iter().map(|&p| metrics[p]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = subset.iter().map(|&p| (metrics[p] - max).exp()).sum();
            lse[b] = max + sum.ln();
        }
        out.push(lse[1] - lse[0]);
    }
    Ok(out)
}

/// Equalized symbols and effective noise variances over one uplink slot.
#[derive(Debug, Clone)]
pub struct EqualizedGrid {
    /// (N_f, N_t, N_k)
    pub x_hat: Array3<Complex64>,
    /// (N_f, N_t, N_k); +inf marks an erased stream.
    pub nu2: Array3<f64>,
}

/// Per-RE, per-user, per-bit LLRs, convention ln(P(1)/P(0)).
pub type LlrGrid = Array4<f64>;

fn h_hat_at(h_hat: &Array4<Complex64>, f: usize, t: usize) -> CMat {
    let (_, _, n_m, n_k) = h_hat.dim();
    DMatrix::from_fn(n_m, n_k, |m, k| h_hat[(f, t, m, k)])
}

/// Full uplink receive chain over a slot: grouped-LMMSE equalization with
/// per-RE unbiasing and noise variances. `t_offset` selects the slot within
/// the channel estimate (0 for uplink, N_t for the downlink precoder reuse).
pub fn equalize_slot(
    y: &Array3<Complex64>,
    h_hat: &Array4<Complex64>,
    e: Option<&ErrorStats>,
    sigma2: f64,
    grid: &GridConfig,
    t_offset: usize,
) -> Result<EqualizedGrid> {
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    let n_m = grid.n_bs_antennas;
    let n_k = grid.n_users;
    if y.dim() != (n_f, n_t, n_m) {
        return Err(Error::shape(format!("received grid {:?}", y.dim())));
    }
    let mut out = EqualizedGrid {
        x_hat: Array3::zeros((n_f, n_t, n_k)),
        nu2: Array3::zeros((n_f, n_t, n_k)),
    };
    for range in equalizer_groups(grid) {
        let hs: Vec<CMat> =
            range.res().map(|(f, t)| h_hat_at(h_hat, f, t + t_offset)).collect();
        let es: Option<Vec<CMat>> =
            e.map(|e| range.res().map(|(f, t)| e.at(f, t + t_offset)).collect());
        let w = grouped_lmmse_weights(&hs, es.as_deref(), sigma2)?;
        for (idx, (f, t)) in range.res().enumerate() {
            let h_re = &hs[idx];
            let e_re = es.as_ref().map(|es| &es[idx]);
            let d = unbias(&w, h_re);
            let yv = DVector::from_fn(n_m, |m, _| y[(f, t, m)]);
            let xh = equalize(&d, &w, &yv);
            for k in 0..n_k {
                out.x_hat[(f, t, k)] = xh[k];
                out.nu2[(f, t, k)] = if d[k].is_none() {
                    f64::INFINITY
                } else {
                    post_eq_noise_var(&w, h_re, e_re, sigma2, k)
                };
            }
        }
    }
    Ok(out)
}

/// Demaps an equalized slot to LLRs for every RE and user.
pub fn demap_grid(eq: &EqualizedGrid, constellation: &Constellation) -> Result<LlrGrid> {
    let (n_f, n_t, n_k) = eq.x_hat.dim();
    let m = constellation.bits_per_symbol;
    let mut llr = Array4::zeros((n_f, n_t, n_k, m));
    for f in 0..n_f {
        for t in 0..n_t {
            for k in 0..n_k {
                let v = demap_llr(eq.x_hat[(f, t, k)], eq.nu2[(f, t, k)], constellation)?;
                for (i, l) in v.into_iter().enumerate() {
                    llr[(f, t, k, i)] = l;
                }
            }
        }
    }
    Ok(llr)
}
