//! Time-varying frequency-selective MU-MIMO channel generation.
//!
//! The channel is a tapped-delay-line Rayleigh model: each (user, antenna,
//! tap) is an independent complex Gaussian process over symbol time with the
//! Jakes Doppler spectrum, realized as a Gaussian-weighted sum of sinusoids.
//! The frequency response at subcarrier f is the delay-domain sum
//! `sum_p a_p(t) * exp(-j 2 pi f df tau_p)`.

use nalgebra::DMatrix;
use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridConfig, PilotPattern};
use crate::linalg::{hermitianize, CMat};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Tapped-delay-line model parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ChannelModelConfig {
    /// Tap delays in seconds, strictly increasing, first >= 0.
    pub tap_delays: Vec<f64>,
    /// Linear tap powers, positive, summing to 1.
    pub tap_powers: Vec<f64>,
    /// Carrier frequency in Hz.
    pub carrier_freq: f64,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing: f64,
    /// OFDM symbol duration in seconds (including cyclic prefix).
    pub symbol_duration: f64,
    /// Per-user speeds in m/s.
    pub user_speeds: Vec<f64>,
    /// Scatterers per tap for the sum-of-sinusoids process.
    pub n_scatterers: usize,
    /// Base seed recorded with datasets generated from this config.
    pub seed: u64,
}

impl ChannelModelConfig {
    /// Four-tap exponential power-delay profile, 100 ns spacing.
    pub fn default_tdl(n_users: usize) -> Self {
        let raw: Vec<f64> = (0..4).map(|p| (-(p as f64)).exp()).collect();
        let sum: f64 = raw.iter().sum();
        ChannelModelConfig {
            tap_delays: vec![0.0, 100e-9, 200e-9, 300e-9],
            tap_powers: raw.iter().map(|p| p / sum).collect(),
            carrier_freq: 3.5e9,
            subcarrier_spacing: 15e3,
            symbol_duration: 1e-3 / 14.0,
            user_speeds: vec![0.0; n_users],
            n_scatterers: 32,
            seed: 0,
        }
    }

    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        if self.tap_delays.is_empty() || self.tap_delays.len() != self.tap_powers.len() {
            return Err(Error::config("tap delays and powers must be non-empty and equal-length"));
        }
        if self.tap_delays[0] < 0.0 || self.tap_delays.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("tap delays must be non-negative and strictly increasing"));
        }
        if self.tap_powers.iter().any(|&p| p <= 0.0) {
            return Err(Error::config("tap powers must be positive"));
        }
        let sum: f64 = self.tap_powers.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("tap powers must sum to 1, got {sum}")));
        }
        if self.user_speeds.len() != grid.n_users {
            return Err(Error::config(format!(
                "{} user speeds for {} users",
                self.user_speeds.len(),
                grid.n_users
            )));
        }
        if self.n_scatterers == 0 {
            return Err(Error::config("n_scatterers must be >= 1"));
        }
        Ok(())
    }

    pub fn doppler_hz(&self, user: usize) -> f64 {
        self.user_speeds[user] * self.carrier_freq / SPEED_OF_LIGHT
    }
}

/// Sample covariance matrices of the channel at pilot REs, per user.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    /// BS-side channel covariance over vec(pilot REs x antennas), per user.
    pub sigma: Vec<CMat>,
    /// UE-side equivalent-channel covariance over downlink pilot REs, per
    /// user (filled by the downlink statistics acquisition).
    pub omega: Vec<CMat>,
}

fn complex_gaussian(rng: &mut impl Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draws an i.i.d. circular complex Gaussian vector with variance `var` per
/// element.
pub fn awgn_vector(rng: &mut impl Rng, len: usize, var: f64) -> Vec<Complex64> {
    (0..len).map(|_| complex_gaussian(rng, var)).collect()
}

/// Generates the 4-D channel tensor H over (subcarrier, symbol, antenna,
/// user), normalized per user to average unit energy per antenna.
pub fn generate_channel(
    cfg: &ChannelModelConfig,
    grid: &GridConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array4<Complex64>> {
    grid.validate()?;
    cfg.validate(grid)?;
    let mut h = generate_channel_raw(cfg, grid, rng);
    normalize_rg(&mut h)?;
    Ok(h)
}

/// Same as [`generate_channel`] but without the per-RG normalization.
pub fn generate_channel_raw(
    cfg: &ChannelModelConfig,
    grid: &GridConfig,
    rng: &mut ChaCha8Rng,
) -> Array4<Complex64> {
    let n_f = grid.n_subcarriers;
    let n_t_total = grid.total_symbols();
    let n_m = grid.n_bs_antennas;
    let n_k = grid.n_users;
    let n_taps = cfg.tap_delays.len();
    let n_s = cfg.n_scatterers;

    // Twiddle factors exp(-j 2 pi f df tau_p).
    let mut twiddle = vec![Complex64::new(0.0, 0.0); n_f * n_taps];
    for f in 0..n_f {
        for p in 0..n_taps {
            let phase = -2.0 * std::f64::consts::PI
                * (f as f64)
                * cfg.subcarrier_spacing
                * cfg.tap_delays[p];
            twiddle[f * n_taps + p] = Complex64::from_polar(1.0, phase);
        }
    }

    let mut h = Array4::<Complex64>::zeros((n_f, n_t_total, n_m, n_k));
    let mut gains = vec![Complex64::new(0.0, 0.0); n_taps * n_t_total];
    for k in 0..n_k {
        let fd = cfg.doppler_hz(k);
        for m in 0..n_m {
            // Tap gains over symbol time via Gaussian-weighted sum of
            // sinusoids; each oscillator advances by a fixed rotation per
            // symbol.
            for p in 0..n_taps {
                let scale = (cfg.tap_powers[p] / (2.0 * n_s as f64)).sqrt();
                for g in gains[p * n_t_total..(p + 1) * n_t_total].iter_mut() {
                    *g = Complex64::new(0.0, 0.0);
                }
                for _ in 0..n_s {
                    let a = complex_gaussian(rng, 2.0);
                    let alpha: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let phi: f64 = rng.random_range(0.0..2.0 * std::f64::consts::PI);
                    let omega =
                        2.0 * std::f64::consts::PI * fd * alpha.cos() * cfg.symbol_duration;
                    let rot = Complex64::from_polar(1.0, omega);
                    let mut osc = a * Complex64::from_polar(scale, phi);
                    for t in 0..n_t_total {
                        gains[p * n_t_total + t] += osc;
                        osc *= rot;
                    }
                }
            }
            for f in 0..n_f {
                for t in 0..n_t_total {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for p in 0..n_taps {
                        acc += gains[p * n_t_total + t] * twiddle[f * n_taps + p];
                    }
                    h[(f, t, m, k)] = acc;
                }
            }
        }
    }
    h
}

/// Scales each user's channel so that the RG energy equals
/// `N_f * 2N_t * N_m` exactly (average of one per antenna).
pub fn normalize_rg(h: &mut Array4<Complex64>) -> Result<()> {
    let (n_f, n_t_total, n_m, n_k) = h.dim();
    let target = (n_f * n_t_total * n_m) as f64;
    for k in 0..n_k {
        let mut energy = 0.0;
        for f in 0..n_f {
            for t in 0..n_t_total {
                for m in 0..n_m {
                    energy += h[(f, t, m, k)].norm_sqr();
                }
            }
        }
        if energy == 0.0 {
            return Err(Error::numerical(format!("all-zero channel for user {k}")));
        }
        let scale = (target / energy).sqrt();
        for f in 0..n_f {
            for t in 0..n_t_total {
                for m in 0..n_m {
                    h[(f, t, m, k)] *= scale;
                }
            }
        }
    }
    Ok(())
}

/// Vectorization order of a user's pilot observations: pilots sorted by
/// (t, f), antennas fastest. Must match between covariance estimation and
/// LMMSE filtering.
pub fn vec_pilot_obs(
    h: &Array4<Complex64>,
    pilots: &[(usize, usize)],
    n_m: usize,
    user: usize,
) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(pilots.len() * n_m);
    for &(f, t) in pilots {
        for m in 0..n_m {
            v.push(h[(f, t, m, user)]);
        }
    }
    v
}

/// Monte-Carlo sample covariance of the channel at each user's pilot REs,
/// with per-user speeds redrawn uniformly from `speed_range_mps` per RG.
/// Deterministic for a fixed seed regardless of thread count.
pub fn estimate_covariance(
    cfg: &ChannelModelConfig,
    grid: &GridConfig,
    pattern: &PilotPattern,
    speed_range_mps: (f64, f64),
    n_samples: usize,
    seed: u64,
) -> Result<Vec<CMat>> {
    grid.validate()?;
    cfg.validate(grid)?;
    if n_samples < 1000 {
        return Err(Error::config("covariance estimation needs n_samples >= 1000"));
    }
    let n_m = grid.n_bs_antennas;
    let n_k = grid.n_users;
    let dim = pattern.pilot_res[0].len() * n_m;

    let chunk = 64usize;
    let n_chunks = n_samples.div_ceil(chunk);
    let partials: Vec<Vec<CMat>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![DMatrix::<Complex64>::zeros(dim, dim); n_k];
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(n_samples);
            for s in lo..hi {
                let mut rng = trial_rng(seed, s as u64);
                let mut local = cfg.clone();
                for sp in local.user_speeds.iter_mut() {
                    *sp = rng.random_range(speed_range_mps.0..=speed_range_mps.1);
                }
                let h = generate_channel(&local, grid, &mut rng).expect("validated config");
                for k in 0..n_k {
                    let v = vec_pilot_obs(&h, &pattern.pilot_res[k], n_m, k);
                    for i in 0..dim {
                        for j in 0..dim {
                            acc[k][(i, j)] += v[i] * v[j].conj();
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut sigma = vec![DMatrix::<Complex64>::zeros(dim, dim); n_k];
    for part in partials {
        for (k, p) in part.into_iter().enumerate() {
            sigma[k] += p;
        }
    }
    let inv = Complex64::new(1.0 / n_samples as f64, 0.0);
    for s in sigma.iter_mut() {
        *s *= inv;
        *s = hermitianize(s);
    }
    Ok(sigma)
}

/// Independent per-trial RNG stream derived from a base seed.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_add(1));
    rng
}

/// Uplink transfer function: y = H x + n over the first slot.
pub fn apply_uplink(
    h: &Array4<Complex64>,
    x: &Array3<Complex64>,
    sigma2: f64,
    rng: &mut impl Rng,
) -> Result<Array3<Complex64>> {
    let (n_f, n_t_total, n_m, n_k) = h.dim();
    let n_t = n_t_total / 2;
    if x.dim() != (n_f, n_t, n_k) {
        return Err(Error::shape(format!(
            "uplink symbols must be ({n_f}, {n_t}, {n_k}), got {:?}",
            x.dim()
        )));
    }
    if sigma2 < 0.0 {
        return Err(Error::config("noise variance must be >= 0"));
    }
    let mut y = Array3::<Complex64>::zeros((n_f, n_t, n_m));
    for f in 0..n_f {
        for t in 0..n_t {
            for m in 0..n_m {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n_k {
                    acc += h[(f, t, m, k)] * x[(f, t, k)];
                }
                if sigma2 > 0.0 {
                    acc += complex_gaussian(rng, sigma2);
                }
                y[(f, t, m)] = acc;
            }
        }
    }
    Ok(y)
}

/// Downlink transfer function: r = H^H s + q over the second slot.
/// `s` is indexed by (f, t - N_t, antenna).
pub fn apply_downlink(
    h: &Array4<Complex64>,
    s: &Array3<Complex64>,
    sigma2: f64,
    rng: &mut impl Rng,
) -> Result<Array3<Complex64>> {
    let (n_f, n_t_total, n_m, n_k) = h.dim();
    let n_t = n_t_total / 2;
    if s.dim() != (n_f, n_t, n_m) {
        return Err(Error::shape(format!(
            "downlink transmit grid must be ({n_f}, {n_t}, {n_m}), got {:?}",
            s.dim()
        )));
    }
    if sigma2 < 0.0 {
        return Err(Error::config("noise variance must be >= 0"));
    }
    let mut r = Array3::<Complex64>::zeros((n_f, n_t, n_k));
    for f in 0..n_f {
        for tau in 0..n_t {
            let t = n_t + tau;
            for k in 0..n_k {
                let mut acc = Complex64::new(0.0, 0.0);
                for m in 0..n_m {
                    acc += h[(f, t, m, k)].conj() * s[(f, tau, m)];
                }
                if sigma2 > 0.0 {
                    acc += complex_gaussian(rng, sigma2);
                }
                r[(f, tau, k)] = acc;
            }
        }
    }
    Ok(r)
}

/// Noise variance from SNR in dB under the unit-energy normalization.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn grid(n_m: usize, n_k: usize) -> GridConfig {
        GridConfig {
            n_subcarriers: 12,
            n_symbols: 14,
            n_bs_antennas: n_m,
            n_users: n_k,
            bits_per_symbol: 4,
            pilot_kind: crate::grid::PilotKind::TwoP,
        }
    }

    /// Bessel J0 via the Abramowitz-Stegun rational approximations.
    fn bessel_j0(x: f64) -> f64 {
        let ax = x.abs();
        if ax < 8.0 {
            let y = x * x;
            let p1 = 57568490574.0 + y * (-13362590354.0 + y * (651619640.7
                + y * (-11214424.18 + y * (77392.33017 + y * (-184.9052456)))));
            let p2 = 57568490411.0 + y * (1029532985.0 + y * (9494680.718
                + y * (59272.64853 + y * (267.8532712 + y))));
            p1 / p2
        } else {
            let z = 8.0 / ax;
            let y = z * z;
            let xx = ax - 0.785398164;
            let p1 = 1.0 + y * (-0.1098628627e-2 + y * (0.2734510407e-4
                + y * (-0.2073370639e-5 + y * 0.2093887211e-6)));
            let p2 = -0.1562499995e-1 + y * (0.1430488765e-3 + y * (-0.6911147651e-5
                + y * (0.7621095161e-6 + y * -0.934935152e-7)));
            (0.636619772 / ax).sqrt() * (xx.cos() * p1 - z * xx.sin() * p2)
        }
    }

    #[test]
    fn zero_speed_constant_in_time() {
        let g = grid(2, 1);
        let cfg = ChannelModelConfig::default_tdl(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = generate_channel(&cfg, &g, &mut rng).unwrap();
        for f in 0..12 {
            for m in 0..2 {
                let first = h[(f, 0, m, 0)];
                for t in 1..g.total_symbols() {
                    assert!((h[(f, t, m, 0)] - first).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_tap_flat_in_frequency() {
        let g = grid(2, 1);
        let cfg = ChannelModelConfig {
            tap_delays: vec![0.0],
            tap_powers: vec![1.0],
            user_speeds: vec![30.0],
            ..ChannelModelConfig::default_tdl(1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = generate_channel(&cfg, &g, &mut rng).unwrap();
        for t in 0..g.total_symbols() {
            for m in 0..2 {
                let first = h[(0, t, m, 0)];
                for f in 1..12 {
                    assert!((h[(f, t, m, 0)] - first).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn temporal_autocorrelation_matches_jakes() {
        // Empirical normalized autocorrelation at a few symbol lags vs
        // J0(2 pi f_D dt), pooled over many independent realizations.
        let g = GridConfig { n_symbols: 8, ..grid(1, 1) };
        let speed = 120.0 / 3.6;
        let cfg = ChannelModelConfig {
            tap_delays: vec![0.0],
            tap_powers: vec![1.0],
            user_speeds: vec![speed],
            ..ChannelModelConfig::default_tdl(1)
        };
        let fd = cfg.doppler_hz(0);
        let n_mc = 10_000usize;
        let lags = [1usize, 4, 8, 12];
        let mut num = vec![Complex64::new(0.0, 0.0); lags.len()];
        let mut den = 0.0f64;
        for trial in 0..n_mc {
            let mut rng = trial_rng(901, trial as u64);
            let h = generate_channel_raw(&cfg, &g, &mut rng);
            for t in 0..g.total_symbols() {
                den += h[(0, t, 0, 0)].norm_sqr();
            }
            for (li, &lag) in lags.iter().enumerate() {
                for t in 0..(g.total_symbols() - lag) {
                    num[li] += h[(0, t + lag, 0, 0)] * h[(0, t, 0, 0)].conj();
                }
            }
        }
        den /= (n_mc * g.total_symbols()) as f64;
        for (li, &lag) in lags.iter().enumerate() {
            let pairs = (n_mc * (g.total_symbols() - lag)) as f64;
            let emp = (num[li] / pairs).re / den;
            let theory = bessel_j0(2.0 * std::f64::consts::PI * fd * lag as f64 * cfg.symbol_duration);
            assert!(
                (emp - theory).abs() < 0.05,
                "lag {lag}: empirical {emp:.4} vs J0 {theory:.4}"
            );
        }
    }

    #[test]
    fn frequency_correlation_matches_pdp() {
        let g = GridConfig { n_subcarriers: 24, n_symbols: 2, ..grid(1, 1) };
        let cfg = ChannelModelConfig {
            user_speeds: vec![0.0],
            ..ChannelModelConfig::default_tdl(1)
        };
        let n_mc = 10_000usize;
        let dfs = [4usize, 12, 23];
        let mut num = vec![Complex64::new(0.0, 0.0); dfs.len()];
        let mut den = 0.0f64;
        for trial in 0..n_mc {
            let mut rng = trial_rng(77, trial as u64);
            let h = generate_channel_raw(&cfg, &g, &mut rng);
            den += h[(0, 0, 0, 0)].norm_sqr();
            for (di, &df) in dfs.iter().enumerate() {
                num[di] += h[(df, 0, 0, 0)] * h[(0, 0, 0, 0)].conj();
            }
        }
        den /= n_mc as f64;
        for (di, &df) in dfs.iter().enumerate() {
            let emp = (num[di] / n_mc as f64).norm() / den;
            let mut theory = Complex64::new(0.0, 0.0);
            for (p, &tau) in cfg.tap_delays.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * df as f64 * cfg.subcarrier_spacing * tau;
                theory += cfg.tap_powers[p] * Complex64::from_polar(1.0, phase);
            }
            assert!(
                (emp - theory.norm()).abs() < 0.05,
                "df {df}: empirical {emp:.4} vs theory {:.4}",
                theory.norm()
            );
        }
    }

    #[test]
    fn normalization_postcondition_and_idempotence() {
        let g = grid(4, 2);
        let cfg = ChannelModelConfig {
            user_speeds: vec![10.0, 20.0],
            ..ChannelModelConfig::default_tdl(2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut h = generate_channel_raw(&cfg, &g, &mut rng);
        normalize_rg(&mut h).unwrap();
        let target = (12 * 28 * 4) as f64;
        for k in 0..2 {
            let e: f64 = (0..12)
                .flat_map(|f| (0..28).flat_map(move |t| (0..4).map(move |m| (f, t, m))))
                .map(|(f, t, m)| h[(f, t, m, k)].norm_sqr())
                .sum();
            assert_abs_diff_eq!(e, target, epsilon = 1e-6 * target);
        }
        let before = h.clone();
        normalize_rg(&mut h).unwrap();
        for (a, b) in h.iter().zip(before.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn known_scale_factor() {
        let g = grid(1, 1);
        let mut h = Array4::<Complex64>::zeros((12, 28, 1, 1));
        // Energy set to twice the target.
        let target = (12 * 28) as f64;
        let amp = (2.0 * target / (12.0 * 28.0)).sqrt();
        h.fill(Complex64::new(amp, 0.0));
        let _ = g;
        normalize_rg(&mut h).unwrap();
        let expected = amp / 2.0_f64.sqrt();
        assert_abs_diff_eq!(h[(0, 0, 0, 0)].re, expected, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_channel_rejected() {
        let mut h = Array4::<Complex64>::zeros((12, 28, 1, 1));
        assert!(normalize_rg(&mut h).is_err());
    }

    #[test]
    fn reproducible_from_seed() {
        let g = grid(2, 2);
        let cfg = ChannelModelConfig {
            user_speeds: vec![5.0, 15.0],
            ..ChannelModelConfig::default_tdl(2)
        };
        let h1 = generate_channel(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let h2 = generate_channel(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn identity_channel_passthrough() {
        let g = GridConfig { n_bs_antennas: 1, n_users: 1, ..grid(1, 1) };
        let mut h = Array4::<Complex64>::zeros((12, 28, 1, 1));
        h.fill(Complex64::new(1.0, 0.0));
        let mut x = Array3::<Complex64>::zeros((12, 14, 1));
        x.fill(Complex64::new(0.3, -0.7));
        let y = apply_uplink(&h, &x, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for f in 0..12 {
            for t in 0..14 {
                assert!((y[(f, t, 0)] - x[(f, t, 0)]).norm() < 1e-15);
            }
        }
        let _ = g;
    }

    #[test]
    fn noise_variance_empirical() {
        let mut h = Array4::<Complex64>::zeros((72, 28, 2, 1));
        let x = Array3::<Complex64>::zeros((72, 14, 1));
        h.fill(Complex64::new(1.0, 0.0));
        let sigma2 = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut acc = 0.0;
        let mut n = 0usize;
        for _ in 0..50 {
            let y = apply_uplink(&h, &x, sigma2, &mut rng).unwrap();
            acc += y.iter().map(|c| c.norm_sqr()).sum::<f64>();
            n += y.len();
        }
        let emp = acc / n as f64;
        // Var of |n|^2 for CN(0, s) is s^2; 3 standard errors.
        let se = sigma2 / (n as f64).sqrt();
        assert!((emp - sigma2).abs() < 3.0 * se, "empirical {emp} vs {sigma2}");
    }

    #[test]
    fn transfer_linearity() {
        let g = grid(3, 2);
        let cfg = ChannelModelConfig {
            user_speeds: vec![10.0, 40.0],
            ..ChannelModelConfig::default_tdl(2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = generate_channel(&cfg, &g, &mut rng).unwrap();
        let mut x1 = Array3::<Complex64>::zeros((12, 14, 2));
        let mut x2 = Array3::<Complex64>::zeros((12, 14, 2));
        for (i, v) in x1.iter_mut().enumerate() {
            *v = Complex64::new((i % 7) as f64 * 0.1, -((i % 5) as f64) * 0.2);
        }
        for (i, v) in x2.iter_mut().enumerate() {
            *v = Complex64::new(-((i % 3) as f64) * 0.3, (i % 11) as f64 * 0.05);
        }
        let sum = &x1 + &x2;
        let y1 = apply_uplink(&h, &x1, 0.0, &mut rng).unwrap();
        let y2 = apply_uplink(&h, &x2, 0.0, &mut rng).unwrap();
        let ysum = apply_uplink(&h, &sum, 0.0, &mut rng).unwrap();
        for ((a, b), s) in y1.iter().zip(y2.iter()).zip(ysum.iter()) {
            assert!((a + b - s).norm() < 1e-10);
        }
    }

    #[test]
    fn covariance_hermitian_psd_and_diagonal_power() {
        let g = GridConfig { n_bs_antennas: 2, n_users: 2, ..grid(2, 2) };
        let cfg = ChannelModelConfig::default_tdl(2);
        let pattern = crate::grid::build_pilot_pattern(&g).unwrap();
        let sigma = estimate_covariance(&cfg, &g, &pattern, (0.0, 10.0), 2000, 13).unwrap();
        for s in &sigma {
            assert!(crate::linalg::is_hermitian_psd(s, 1e-9));
            // Unit average energy per antenna after normalization.
            for i in 0..s.nrows() {
                let d = s[(i, i)].re;
                let se = 1.0 / (2000.0f64).sqrt();
                assert!((d - 1.0).abs() < 3.0 * se, "diag {d}");
            }
        }
    }

    #[test]
    fn covariance_time_constant_at_zero_speed() {
        let g = GridConfig { n_bs_antennas: 1, n_users: 1, ..grid(1, 1) };
        let cfg = ChannelModelConfig::default_tdl(1);
        let pattern = crate::grid::build_pilot_pattern(&g).unwrap();
        let sigma = estimate_covariance(&cfg, &g, &pattern, (0.0, 0.0), 2000, 14).unwrap();
        // With f_D = 0 the two pilot symbols see the same channel: the
        // cross-symbol block must equal the zero-lag block.
        let s = &sigma[0];
        let n_pf = pattern.n_pf;
        for i in 0..n_pf {
            let same = s[(i, i)].re;
            let cross = s[(i, n_pf + i)].norm();
            assert!((same - cross).abs() < 5.0 / (2000.0f64).sqrt());
        }
    }

    #[test]
    fn snr_conversion() {
        assert_abs_diff_eq!(snr_to_sigma2(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(snr_to_sigma2(10.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(snr_to_sigma2(3.0), 0.501187233627272, epsilon = 1e-12);
    }
}
