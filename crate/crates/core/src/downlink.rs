//! TDD downlink: precoding by uplink-downlink duality, equivalent-channel
//! formation, UE-side scalar estimation and downlink demapping inputs.
//!
//! The BS reuses the uplink grouped-LMMSE matrix W (computed from uplink
//! pilots, with downlink estimates inherited from the last uplink pilot
//! group) and transmits s = W^H N u. Each UE sees one row of the equivalent
//! channel G = H^H W^H N and only estimates its own diagonal entry.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{awgn_vector, generate_channel, trial_rng, ChannelModelConfig};
use crate::error::{Error, Result};
use crate::estimator::{estimate_channel, EstimatorKind};
use crate::grid::{GridConfig, PilotPattern};
use crate::linalg::{hermitianize, solve_hpd, CMat};
use crate::uplink::{equalizer_groups, grouped_lmmse_weights, GroupRange};

/// Diagonal of N = ((W W^H) (.) I)^{-1}, stored as real entries.
pub fn precoding_normalizer(w: &CMat) -> Result<Vec<f64>> {
    let n_k = w.nrows();
    let mut out = Vec::with_capacity(n_k);
    for k in 0..n_k {
        let mut d = 0.0;
        for m in 0..w.ncols() {
            d += w[(k, m)].norm_sqr();
        }
        if d <= 0.0 {
            return Err(Error::numerical(format!("degenerate user {k}: zero precoder row")));
        }
        out.push(1.0 / d);
    }
    Ok(out)
}

/// Precoded transmit vector s = W^H N u.
pub fn precode(w: &CMat, n_mat: &[f64], u: &DVector<Complex64>) -> DVector<Complex64> {
    let scaled = DVector::from_fn(u.len(), |k, _| u[k] * n_mat[k]);
    w.adjoint() * scaled
}

/// Equivalent downlink channel G = H^H W^H N for one RE.
pub fn equivalent_channel(h: &CMat, w: &CMat, n_mat: &[f64]) -> CMat {
    let mut g = h.adjoint() * w.adjoint();
    for (k, &nk) in n_mat.iter().enumerate() {
        for i in 0..g.nrows() {
            g[(i, k)] *= nk;
        }
    }
    g
}

/// Scalar LMMSE estimate of a user's principal equivalent channel at its
/// downlink pilot REs, plus the per-pilot residual error variance
/// v = tr(Omega - Omega (Omega + sigma^2 I)^{-1} Omega) / n_pilots.
pub fn ue_estimate(
    obs: &[Complex64],
    omega: &CMat,
    sigma2: f64,
) -> Result<(Vec<Complex64>, f64)> {
    let n = omega.nrows();
    if obs.len() != n {
        return Err(Error::shape(format!("{} observations vs Omega dim {n}", obs.len())));
    }
    let mut b = omega.clone();
    for i in 0..n {
        b[(i, i)] += Complex64::new(sigma2, 0.0);
    }
    let filter = solve_hpd(&b, omega)?.adjoint();
    let est = &filter * DVector::from_column_slice(obs);
    let residual = omega - &filter * omega;
    let v = residual.trace().re / n as f64;
    Ok((est.iter().copied().collect(), v.max(0.0)))
}

/// Effective downlink noise variance tau^2 = (v + j + sigma^2) / |g_hat|^2.
pub fn dl_noise_var(g_hat: Complex64, v: f64, j: f64, sigma2: f64) -> f64 {
    let den = g_hat.norm_sqr();
    if den <= 0.0 {
        f64::INFINITY
    } else {
        (v + j + sigma2) / den
    }
}

/// Per-group precoders for the downlink slot.
#[derive(Debug, Clone)]
pub struct DlPrecoder {
    pub groups: Vec<GroupRange>,
    pub ws: Vec<CMat>,
    pub n_mats: Vec<Vec<f64>>,
}

impl DlPrecoder {
    pub fn group_index(&self, f: usize, t_rel: usize) -> usize {
        self.groups
            .iter()
            .position(|g| f >= g.f.0 && f <= g.f.1 && t_rel >= g.t.0 && t_rel <= g.t.1)
            .expect("RE covered by a group")
    }
}

/// Builds the downlink precoders from the (extended) uplink channel estimate.
/// Group geometry matches the uplink equalizer; t indices are relative to the
/// downlink slot.
pub fn build_precoder(
    h_hat: &Array4<Complex64>,
    e: Option<&crate::estimator::ErrorStats>,
    sigma2: f64,
    grid: &GridConfig,
) -> Result<DlPrecoder> {
    let n_t = grid.n_symbols;
    let groups = equalizer_groups(grid);
    let mut ws = Vec::with_capacity(groups.len());
    let mut n_mats = Vec::with_capacity(groups.len());
    for range in &groups {
        let hs: Vec<CMat> = range
            .res()
            .map(|(f, t)| {
                DMatrix::from_fn(grid.n_bs_antennas, grid.n_users, |m, k| {
                    h_hat[(f, t + n_t, m, k)]
                })
            })
            .collect();
        let es: Option<Vec<CMat>> =
            e.map(|e| range.res().map(|(f, t)| e.at(f, t + n_t)).collect());
        let w = grouped_lmmse_weights(&hs, es.as_deref(), sigma2)?;
        let n_mat = precoding_normalizer(&w)?;
        ws.push(w);
        n_mats.push(n_mat);
    }
    Ok(DlPrecoder { groups, ws, n_mats })
}

/// Precodes a downlink slot of user symbols (pilot REs already inserted in
/// `u`): S[(f, t, m)] = (W^H N u)_m.
pub fn precode_slot(
    u_grid: &Array3<Complex64>,
    precoder: &DlPrecoder,
    grid: &GridConfig,
) -> Result<Array3<Complex64>> {
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    let n_m = grid.n_bs_antennas;
    let n_k = grid.n_users;
    if u_grid.dim() != (n_f, n_t, n_k) {
        return Err(Error::shape(format!("downlink symbols {:?}", u_grid.dim())));
    }
    let mut s = Array3::zeros((n_f, n_t, n_m));
    for (gi, range) in precoder.groups.iter().enumerate() {
        for (f, t) in range.res() {
            let u = DVector::from_fn(n_k, |k, _| u_grid[(f, t, k)]);
            let sv = precode(&precoder.ws[gi], &precoder.n_mats[gi], &u);
            for m in 0..n_m {
                s[(f, t, m)] = sv[m];
            }
        }
    }
    Ok(s)
}

/// Inserts orthogonal unit pilots into a downlink user-symbol grid:
/// at user u's downlink pilot REs, u transmits 1 and everyone else 0.
pub fn insert_dl_pilots(u_grid: &mut Array3<Complex64>, pattern: &PilotPattern, grid: &GridConfig) {
    let n_t = grid.n_symbols;
    for u in 0..grid.n_users {
        for &(f, t_abs) in &pattern.dl_pilot_res[u] {
            let t = t_abs - n_t;
            for k in 0..grid.n_users {
                u_grid[(f, t, k)] = Complex64::new(0.0, 0.0);
            }
            u_grid[(f, t, u)] = Complex64::new(1.0, 0.0);
        }
    }
}

/// Mean transmit power per RE of a precoded slot (diagnostic; the paper's N
/// does not make it exactly one for general W).
pub fn mean_tx_power(s: &Array3<Complex64>) -> f64 {
    let (n_f, n_t, _) = s.dim();
    s.iter().map(|v| v.norm_sqr()).sum::<f64>() / (n_f * n_t) as f64
}

/// Downlink statistics acquired by Monte-Carlo over the full chain:
/// equivalent-channel covariance at pilots (Omega) and per-RE oracle error
/// variances / interference powers.
#[derive(Debug, Clone)]
pub struct DlStats {
    /// Per-user covariance of the principal channel at downlink pilot REs.
    pub omega: Vec<CMat>,
    /// Oracle E[|g - g_hat|^2] per RE when pilots are known perfectly.
    pub v_true: Array3<f64>,
    /// Oracle mean interference power E[||g_-k||^2] per RE.
    pub j_mean: Array3<f64>,
}

/// Samples the downlink equivalent channel through the conventional BS chain
/// (LMMSE uplink estimation, E = 0 precoding) and accumulates Omega, v and j.
#[allow(clippy::too_many_arguments)]
pub fn acquire_dl_stats(
    cfg: &ChannelModelConfig,
    grid: &GridConfig,
    pattern: &PilotPattern,
    ul_filters: &[CMat],
    sigma2: f64,
    speed_range_mps: (f64, f64),
    n_mc: usize,
    seed: u64,
) -> Result<DlStats> {
    if n_mc < 1000 {
        return Err(Error::config("downlink statistics need n_mc >= 1000"));
    }
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    let n_k = grid.n_users;
    let n_pil = pattern.dl_pilot_res[0].len();

    struct Partial {
        omega: Vec<CMat>,
        j: Array3<f64>,
        v_true: Array3<f64>,
    }

    let chunk = 16usize;
    let n_chunks = n_mc.div_ceil(chunk);
    let partials: Vec<Partial> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut p = Partial {
                omega: vec![CMat::zeros(n_pil, n_pil); n_k],
                j: Array3::zeros((n_f, n_t, n_k)),
                v_true: Array3::zeros((n_f, n_t, n_k)),
            };
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(n_mc);
            for t_idx in lo..hi {
                let mut rng = trial_rng(seed ^ 0x5851f42d4c957f2d, t_idx as u64);
                let mut local = cfg.clone();
                for sp in local.user_speeds.iter_mut() {
                    *sp = rand::Rng::random_range(&mut rng, speed_range_mps.0..=speed_range_mps.1);
                }
                let h = generate_channel(&local, grid, &mut rng).expect("validated");
                // Only the noisy pilot REs of the uplink slot feed the
                // conventional estimation chain behind the precoder.
                let mut y = Array3::<Complex64>::zeros((n_f, n_t, grid.n_bs_antennas));
                for u in 0..n_k {
                    for &(f, t) in &pattern.pilot_res[u] {
                        let noise = awgn_vector(&mut rng, grid.n_bs_antennas, sigma2);
                        for (m, nz) in noise.into_iter().enumerate() {
                            y[(f, t, m)] = h[(f, t, m, u)] + nz;
                        }
                    }
                }
                let h_hat =
                    estimate_channel(&h, &y, Some(ul_filters), EstimatorKind::Lmmse, pattern, grid)
                        .expect("estimation");
                let precoder = build_precoder(&h_hat, None, sigma2, grid).expect("precoder");

                // True-pilot UE estimates for the perfect-CSI variant.
                let mut g_true_pilot = vec![vec![Complex64::default(); n_pil]; n_k];
                let mut g_full = Array3::<Complex64>::zeros((n_f, n_t, n_k));
                for (gi, range) in precoder.groups.iter().enumerate() {
                    for (f, t) in range.res() {
                        let h_re = DMatrix::from_fn(grid.n_bs_antennas, n_k, |m, k| {
                            h[(f, t + n_t, m, k)]
                        });
                        let g = equivalent_channel(&h_re, &precoder.ws[gi], &precoder.n_mats[gi]);
                        for k in 0..n_k {
                            g_full[(f, t, k)] = g[(k, k)];
                            let mut j = 0.0;
                            for i in 0..n_k {
                                if i != k {
                                    j += g[(k, i)].norm_sqr();
                                }
                            }
                            p.j[(f, t, k)] += j;
                        }
                    }
                }
                for k in 0..n_k {
                    for (pi, &(f, t_abs)) in pattern.dl_pilot_res[k].iter().enumerate() {
                        g_true_pilot[k][pi] = g_full[(f, t_abs - n_t, k)];
                    }
                    // Omega accumulation over vectorized pilot observations.
                    for i in 0..n_pil {
                        for jj in 0..n_pil {
                            p.omega[k][(i, jj)] +=
                                g_true_pilot[k][i] * g_true_pilot[k][jj].conj();
                        }
                    }
                    // Perfect-pilot extension error.
                    for f in 0..n_f {
                        for t in 0..n_t {
                            let (pf, pt) = pattern.dl_group(k, f, t + n_t);
                            let pi = pattern.dl_pilot_res[k]
                                .iter()
                                .position(|&re| re == (pf, pt))
                                .expect("own pilot");
                            let err = g_full[(f, t, k)] - g_true_pilot[k][pi];
                            p.v_true[(f, t, k)] += err.norm_sqr();
                        }
                    }
                }
            }
            p
        })
        .collect();

    let mut omega = vec![CMat::zeros(n_pil, n_pil); n_k];
    let mut j_mean = Array3::zeros((n_f, n_t, n_k));
    let mut v_true = Array3::zeros((n_f, n_t, n_k));
    for p in partials {
        for k in 0..n_k {
            omega[k] += &p.omega[k];
        }
        j_mean += &p.j;
        v_true += &p.v_true;
    }
    let inv = 1.0 / n_mc as f64;
    for o in omega.iter_mut() {
        *o *= Complex64::new(inv, 0.0);
        *o = hermitianize(o);
    }
    j_mean.mapv_inplace(|v| v * inv);
    v_true.mapv_inplace(|v| v * inv);
    Ok(DlStats { omega, v_true, j_mean })
}
