//! LMMSE channel estimation at pilot REs, nearest-pilot extension over the
//! grid, and Monte-Carlo oracles for the estimation-error covariance E.

use nalgebra::DMatrix;
use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{awgn_vector, generate_channel, trial_rng, ChannelModelConfig};
use crate::error::{Error, Result};
use crate::grid::{GridConfig, PilotPattern};
use crate::linalg::{hermitianize, solve_hpd, CMat};

/// Per-RE channel estimation-error covariance, summed over users.
#[derive(Debug, Clone)]
pub struct ErrorStats {
    /// (N_f, 2N_t, N_m, N_m), Hermitian per RE.
    pub e: Array4<Complex64>,
}

impl ErrorStats {
    pub fn zeros(n_f: usize, n_t_total: usize, n_m: usize) -> Self {
        ErrorStats { e: Array4::zeros((n_f, n_t_total, n_m, n_m)) }
    }

    pub fn at(&self, f: usize, t: usize) -> CMat {
        let n_m = self.e.dim().2;
        CMat::from_fn(n_m, n_m, |i, j| self.e[(f, t, i, j)])
    }

    /// Frobenius norm map over the grid.
    pub fn frobenius_map(&self) -> ndarray::Array2<f64> {
        let (n_f, n_t, n_m, _) = self.e.dim();
        ndarray::Array2::from_shape_fn((n_f, n_t), |(f, t)| {
            let mut acc = 0.0;
            for i in 0..n_m {
                for j in 0..n_m {
                    acc += self.e[(f, t, i, j)].norm_sqr();
                }
            }
            acc.sqrt()
        })
    }
}

/// LMMSE filter Sigma (Sigma + sigma^2 I)^{-1} for unit pilots, solved as a
/// linear system rather than by explicit inversion.
pub fn lmmse_filter(sigma: &CMat, sigma2: f64) -> Result<CMat> {
    let dim = sigma.nrows();
    let mut b = sigma.clone();
    for i in 0..dim {
        b[(i, i)] += Complex64::new(sigma2, 0.0);
    }
    // filter = Sigma B^{-1} = (B^{-1} Sigma)^H since both are Hermitian.
    Ok(solve_hpd(&b, sigma)?.adjoint())
}

/// Applies a prefactored LMMSE filter to vectorized pilot observations.
pub fn lmmse_pilot_estimate(obs: &[Complex64], filter: &CMat) -> Result<Vec<Complex64>> {
    if obs.len() != filter.ncols() {
        return Err(Error::shape(format!(
            "observation length {} vs filter dimension {}",
            obs.len(),
            filter.ncols()
        )));
    }
    let v = nalgebra::DVector::from_column_slice(obs);
    Ok((filter * v).iter().copied().collect())
}

/// Extracts a user's vectorized pilot observations from the received uplink
/// grid (pilots of the other users occupy disjoint REs).
pub fn pilot_obs_from_y(
    y: &Array3<Complex64>,
    pilots: &[(usize, usize)],
    n_m: usize,
) -> Vec<Complex64> {
    let mut obs = Vec::with_capacity(pilots.len() * n_m);
    for &(f, t) in pilots {
        for m in 0..n_m {
            obs.push(y[(f, t, m)]);
        }
    }
    obs
}

/// Index of pilot (f, t) in a user's (t, f)-sorted pilot list.
fn pilot_index(pattern: &PilotPattern, grid: &GridConfig, user: usize, f: usize, t: usize) -> usize {
    let syms = grid.pilot_kind.pilot_symbols();
    let sym_idx = syms.iter().position(|&s| s == t).expect("pilot symbol");
    sym_idx * pattern.n_pf + (f - user) / grid.n_users
}

/// Spreads per-user pilot estimates over the whole RG: every RE takes the
/// value of its governing pilot; the downlink half inherits the last uplink
/// pilot group.
pub fn extend_nearest_pilot(
    pilot_estimates: &[Vec<Complex64>],
    pattern: &PilotPattern,
    grid: &GridConfig,
) -> Array4<Complex64> {
    let n_f = grid.n_subcarriers;
    let n_t_total = grid.total_symbols();
    let n_m = grid.n_bs_antennas;
    let n_k = grid.n_users;
    let mut h_hat = Array4::<Complex64>::zeros((n_f, n_t_total, n_m, n_k));
    for u in 0..n_k {
        for f in 0..n_f {
            for t in 0..n_t_total {
                let (pf, pt) = pattern.group(u, f, t);
                let p = pilot_index(pattern, grid, u, pf, pt);
                for m in 0..n_m {
                    h_hat[(f, t, m, u)] = pilot_estimates[u][p * n_m + m];
                }
            }
        }
    }
    h_hat
}

/// How pilot-RE channel knowledge is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// LMMSE from noisy pilot observations.
    Lmmse,
    /// Genie: the true channel at pilot REs (perfect-CSI schemes).
    TruePilot,
}

/// Runs one estimation pass: pilot estimates for every user, extended over
/// the grid.
pub fn estimate_channel(
    h_true: &Array4<Complex64>,
    y_pilots: &Array3<Complex64>,
    filters: Option<&[CMat]>,
    kind: EstimatorKind,
    pattern: &PilotPattern,
    grid: &GridConfig,
) -> Result<Array4<Complex64>> {
    let n_m = grid.n_bs_antennas;
    let mut per_user = Vec::with_capacity(grid.n_users);
    for u in 0..grid.n_users {
        let est = match kind {
            EstimatorKind::TruePilot => {
                crate::channel::vec_pilot_obs(h_true, &pattern.pilot_res[u], n_m, u)
            }
            EstimatorKind::Lmmse => {
                let filters =
                    filters.ok_or_else(|| Error::config("LMMSE estimation needs filters"))?;
                let obs = pilot_obs_from_y(y_pilots, &pattern.pilot_res[u], n_m);
                lmmse_pilot_estimate(&obs, &filters[u])?
            }
        };
        per_user.push(est);
    }
    Ok(extend_nearest_pilot(&per_user, pattern, grid))
}

/// Monte-Carlo reference for the per-RE estimation-error covariance
/// E_{f,t} = E[(H - H_hat)(H - H_hat)^H] summed over users, assuming
/// knowledge of the true channel realizations.
#[allow(clippy::too_many_arguments)]
pub fn true_error_stats_oracle(
    cfg: &ChannelModelConfig,
    grid: &GridConfig,
    pattern: &PilotPattern,
    kind: EstimatorKind,
    filters: Option<&[CMat]>,
    sigma2: f64,
    speed_range_mps: (f64, f64),
    n_mc: usize,
    seed: u64,
) -> Result<ErrorStats> {
    if n_mc < 1000 {
        return Err(Error::config("error-statistics oracle needs n_mc >= 1000"));
    }
    let n_f = grid.n_subcarriers;
    let n_t_total = grid.total_symbols();
    let n_m = grid.n_bs_antennas;
    let n_k = grid.n_users;

    let chunk = 32usize;
    let n_chunks = n_mc.div_ceil(chunk);
    let partials: Vec<Array4<Complex64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Array4::<Complex64>::zeros((n_f, n_t_total, n_m, n_m));
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(n_mc);
            for s in lo..hi {
                let mut rng = trial_rng(seed ^ 0x9e3779b97f4a7c15, s as u64);
                let mut local = cfg.clone();
                for sp in local.user_speeds.iter_mut() {
                    *sp = rand::Rng::random_range(&mut rng, speed_range_mps.0..=speed_range_mps.1);
                }
                let h = generate_channel(&local, grid, &mut rng).expect("validated config");
                // Noisy pilot observations for the LMMSE path.
                let mut per_user = Vec::with_capacity(n_k);
                for u in 0..n_k {
                    let mut obs = crate::channel::vec_pilot_obs(&h, &pattern.pilot_res[u], n_m, u);
                    let est = match kind {
                        EstimatorKind::TruePilot => obs,
                        EstimatorKind::Lmmse => {
                            let noise = awgn_vector(&mut rng, obs.len(), sigma2);
                            for (o, n) in obs.iter_mut().zip(noise) {
                                *o += n;
                            }
                            lmmse_pilot_estimate(&obs, &filters.expect("filters")[u])
                                .expect("filter dims")
                        }
                    };
                    per_user.push(est);
                }
                let h_hat = extend_nearest_pilot(&per_user, pattern, grid);
                for f in 0..n_f {
                    for t in 0..n_t_total {
                        for u in 0..n_k {
                            for i in 0..n_m {
                                let ei = h[(f, t, i, u)] - h_hat[(f, t, i, u)];
                                for j in 0..n_m {
                                    let ej = h[(f, t, j, u)] - h_hat[(f, t, j, u)];
                                    acc[(f, t, i, j)] += ei * ej.conj();
                                }
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut e = Array4::<Complex64>::zeros((n_f, n_t_total, n_m, n_m));
    for p in partials {
        e += &p;
    }
    let inv = Complex64::new(1.0 / n_mc as f64, 0.0);
    e.mapv_inplace(|v| v * inv);
    // Hermitian-symmetrize each per-RE matrix.
    for f in 0..n_f {
        for t in 0..n_t_total {
            let m = DMatrix::from_fn(n_m, n_m, |i, j| e[(f, t, i, j)]);
            let hm = hermitianize(&m);
            for i in 0..n_m {
                for j in 0..n_m {
                    e[(f, t, i, j)] = hm[(i, j)];
                }
            }
        }
    }
    Ok(ErrorStats { e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::estimate_covariance;
    use crate::grid::{build_pilot_pattern, PilotKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> GridConfig {
        GridConfig {
            n_subcarriers: 12,
            n_symbols: 14,
            n_bs_antennas: 2,
            n_users: 2,
            bits_per_symbol: 4,
            pilot_kind: PilotKind::TwoP,
        }
    }

    #[test]
    fn identity_filter_at_zero_noise() {
        // Full-rank Sigma, sigma2 -> 0: the filter tends to identity.
        let mut sigma = CMat::identity(6, 6);
        sigma[(0, 1)] = Complex64::new(0.3, 0.1);
        sigma[(1, 0)] = Complex64::new(0.3, -0.1);
        let filter = lmmse_filter(&sigma, 1e-12).unwrap();
        let obs: Vec<Complex64> =
            (0..6).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let est = lmmse_pilot_estimate(&obs, &filter).unwrap();
        for (e, o) in est.iter().zip(obs.iter()) {
            assert!((e - o).norm() < 1e-8);
        }
    }

    #[test]
    fn scalar_shrinkage_identity_sigma() {
        let sigma = CMat::identity(4, 4);
        let filter = lmmse_filter(&sigma, 1.0).unwrap();
        let obs = vec![Complex64::new(2.0, -1.0); 4];
        let est = lmmse_pilot_estimate(&obs, &filter).unwrap();
        for (e, o) in est.iter().zip(obs.iter()) {
            assert!((e - o * 0.5).norm() < 1e-12);
        }
    }

    #[test]
    fn lmmse_beats_raw_and_scaled_raw() {
        // MC comparison at sigma2 = 1: strict MSE ordering with margin.
        let grid = small_grid();
        let cfg = ChannelModelConfig::default_tdl(2);
        let pattern = build_pilot_pattern(&grid).unwrap();
        let sigma = estimate_covariance(&cfg, &grid, &pattern, (0.0, 20.0), 4000, 51).unwrap();
        let sigma2 = 1.0;
        let filter = lmmse_filter(&sigma[0], sigma2).unwrap();

        let n_mc = 10_000usize;
        let mut mse = [0.0f64; 3]; // lmmse, scaled raw, raw
        let mut sq = [0.0f64; 3];
        for trial in 0..n_mc {
            let mut rng = trial_rng(4242, trial as u64);
            let mut local = cfg.clone();
            for sp in local.user_speeds.iter_mut() {
                *sp = rand::Rng::random_range(&mut rng, 0.0..=20.0);
            }
            let h = generate_channel(&local, &grid, &mut rng).unwrap();
            let truth = crate::channel::vec_pilot_obs(&h, &pattern.pilot_res[0], 2, 0);
            let mut obs = truth.clone();
            for (o, n) in obs.iter_mut().zip(awgn_vector(&mut rng, truth.len(), sigma2)) {
                *o += n;
            }
            let est = lmmse_pilot_estimate(&obs, &filter).unwrap();
            let errs = [
                est.iter().zip(&truth).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>(),
                obs.iter().zip(&truth).map(|(a, b)| (a * 0.5 - b).norm_sqr()).sum::<f64>(),
                obs.iter().zip(&truth).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>(),
            ];
            for i in 0..3 {
                mse[i] += errs[i];
                sq[i] += errs[i] * errs[i];
            }
        }
        let n = n_mc as f64;
        let mean: Vec<f64> = mse.iter().map(|m| m / n).collect();
        let se: Vec<f64> =
            mse.iter().zip(&sq).map(|(m, s)| ((s / n - (m / n) * (m / n)) / n).sqrt()).collect();
        assert!(
            mean[0] + 3.0 * (se[0] + se[1]) < mean[1],
            "LMMSE {} vs scaled raw {}",
            mean[0],
            mean[1]
        );
        assert!(
            mean[1] + 3.0 * (se[1] + se[2]) < mean[2],
            "scaled raw {} vs raw {}",
            mean[1],
            mean[2]
        );
    }

    #[test]
    fn extension_constant_within_groups() {
        let grid = GridConfig { pilot_kind: PilotKind::OneP, ..small_grid() };
        let pattern = build_pilot_pattern(&grid).unwrap();
        let n_m = grid.n_bs_antennas;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let per_user: Vec<Vec<Complex64>> = (0..grid.n_users)
            .map(|_| awgn_vector(&mut rng, pattern.pilot_res[0].len() * n_m, 1.0))
            .collect();
        let h_hat = extend_nearest_pilot(&per_user, &pattern, &grid);

        // Pilot REs carry their own estimates.
        for u in 0..grid.n_users {
            for (p, &(f, t)) in pattern.pilot_res[u].iter().enumerate() {
                for m in 0..n_m {
                    assert_eq!(h_hat[(f, t, m, u)], per_user[u][p * n_m + m]);
                }
            }
        }
        // OneP: constant along time within each slot region (and the
        // downlink half inherits the uplink values).
        for u in 0..grid.n_users {
            for f in 0..grid.n_subcarriers {
                let v = h_hat[(f, 0, 0, u)];
                for t in 1..grid.total_symbols() {
                    assert_eq!(h_hat[(f, t, 0, u)], v);
                }
            }
        }
    }

    #[test]
    fn perfect_estimator_zero_error() {
        // Flat channel (single tap) at zero speed: nearest-pilot extension of
        // the true pilot channel is exact everywhere, so E must vanish.
        let grid = small_grid();
        let cfg = ChannelModelConfig {
            tap_delays: vec![0.0],
            tap_powers: vec![1.0],
            ..ChannelModelConfig::default_tdl(2)
        };
        let pattern = build_pilot_pattern(&grid).unwrap();
        let stats = true_error_stats_oracle(
            &cfg,
            &grid,
            &pattern,
            EstimatorKind::TruePilot,
            None,
            0.0,
            (0.0, 0.0),
            1000,
            3,
        )
        .unwrap();
        let max = stats.frobenius_map().iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(max < 1e-9, "max Frobenius {max}");
    }

    #[test]
    fn oracle_hermitian_psd() {
        let grid = small_grid();
        let cfg = ChannelModelConfig::default_tdl(2);
        let pattern = build_pilot_pattern(&grid).unwrap();
        let stats = true_error_stats_oracle(
            &cfg,
            &grid,
            &pattern,
            EstimatorKind::TruePilot,
            None,
            0.1,
            (20.0, 40.0),
            1000,
            9,
        )
        .unwrap();
        for f in [0usize, 5, 11] {
            for t in [0usize, 6, 13, 20, 27] {
                assert!(crate::linalg::is_hermitian_psd(&stats.at(f, t), 1e-9));
            }
        }
    }

    #[test]
    fn error_grows_with_pilot_distance_at_high_doppler() {
        let grid = small_grid();
        let cfg = ChannelModelConfig::default_tdl(2);
        let pattern = build_pilot_pattern(&grid).unwrap();
        let speed = 120.0 / 3.6;
        let stats = true_error_stats_oracle(
            &grid_cfg_speeds(&cfg, speed),
            &grid,
            &pattern,
            EstimatorKind::TruePilot,
            None,
            0.0,
            (speed, speed),
            2000,
            17,
        )
        .unwrap();
        let fro = stats.frobenius_map();
        // At fixed subcarrier, moving away in time from the governing pilot
        // (symbol 2 towards symbol 6) must not decrease the error norm.
        let f = 0usize;
        let mut last = -1.0f64;
        for t in 2..=6 {
            let v = fro[(f, t)];
            assert!(
                v >= last - 0.02,
                "non-monotone error at t={t}: {v} after {last}"
            );
            last = v;
        }
        assert!(fro[(f, 6)] > fro[(f, 2)] + 0.05);
    }

    fn grid_cfg_speeds(cfg: &ChannelModelConfig, speed: f64) -> ChannelModelConfig {
        ChannelModelConfig { user_speeds: vec![speed; cfg.user_speeds.len()], ..cfg.clone() }
    }
}
