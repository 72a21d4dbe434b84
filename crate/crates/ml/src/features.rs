//! Constant feature planes fed to the component networks, and shared
//! graph-building helpers.

use mulink_autodiff::ops::{add_scalar, div, mul, sqrt};
use mulink_autodiff::Tensor;
use mulink_core::grid::{GridConfig, PilotPattern};
use ndarray::{Array3, Array4};
use num_complex::Complex64;

/// x / sqrt(1 + x^2): smooth, bounded input normalization.
pub fn soft_normalize(x: &Tensor) -> Tensor {
    let den = sqrt(&add_scalar(&mul(x, x), 1.0));
    div(x, &den)
}

/// Constant sigma^2 plane, shape [1, N_f, N_t].
pub fn sigma2_plane(sigma2: f64, n_f: usize, n_t: usize) -> Tensor {
    Tensor::constant(vec![1, n_f, n_t], vec![sigma2; n_f * n_t])
}

/// Normalized distance-to-governing-pilot planes (time, frequency) for one
/// user over one slot; `t_offset` selects the slot, `dl` switches to the
/// downlink pilot partition.
pub fn pilot_distance_planes(
    pattern: &PilotPattern,
    grid: &GridConfig,
    user: usize,
    t_offset: usize,
    dl: bool,
) -> (Tensor, Tensor) {
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    let mut dt = vec![0.0; n_f * n_t];
    let mut df = vec![0.0; n_f * n_t];
    for f in 0..n_f {
        for t in 0..n_t {
            let abs_t = t + t_offset;
            let (pf, pt) = if dl {
                pattern.dl_group(user, f, abs_t)
            } else {
                pattern.group(user, f, abs_t)
            };
            dt[f * n_t + t] = pt.abs_diff(abs_t) as f64 / n_t as f64;
            df[f * n_t + t] = pf.abs_diff(f) as f64 / mulink_core::grid::RB_SIZE as f64;
        }
    }
    (
        Tensor::constant(vec![1, n_f, n_t], dt),
        Tensor::constant(vec![1, n_f, n_t], df),
    )
}

/// Raw time-variability feature for one user: per-antenna-averaged squared
/// difference between the (extended) estimates at the slot's two pilot
/// symbols, per subcarrier. Zero for the one-pilot pattern.
pub fn doppler_raw_feature(
    h_hat: &Array4<Complex64>,
    grid: &GridConfig,
    user: usize,
    t_offset: usize,
) -> Vec<f64> {
    let n_f = grid.n_subcarriers;
    let n_m = grid.n_bs_antennas;
    let syms = grid.pilot_kind.pilot_symbols();
    if syms.len() < 2 {
        return vec![0.0; n_f];
    }
    let (p1, p2) = (syms[0] + t_offset, syms[1] + t_offset);
    (0..n_f)
        .map(|f| {
            let mut acc = 0.0;
            for m in 0..n_m {
                acc += (h_hat[(f, p2, m, user)] - h_hat[(f, p1, m, user)]).norm_sqr();
            }
            acc / n_m as f64
        })
        .collect()
}

/// Downlink variant over the scalar equivalent-channel estimates.
pub fn doppler_raw_feature_dl(
    g_hat: &Array3<Complex64>,
    grid: &GridConfig,
    user: usize,
) -> Vec<f64> {
    let n_f = grid.n_subcarriers;
    let syms = grid.pilot_kind.pilot_symbols();
    if syms.len() < 2 {
        return vec![0.0; n_f];
    }
    (0..n_f)
        .map(|f| (g_hat[(f, syms[1], user)] - g_hat[(f, syms[0], user)]).norm_sqr())
        .collect()
}

/// 0/1 mask of data REs over one slot, shape [N_f, N_t].
pub fn data_mask(grid: &GridConfig) -> Tensor {
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    let pilots = grid.pilot_kind.pilot_symbols();
    let mut mask = vec![1.0; n_f * n_t];
    for f in 0..n_f {
        for &t in pilots {
            mask[f * n_t + t] = 0.0;
        }
    }
    Tensor::constant(vec![n_f, n_t], mask)
}

/// Transmitted bit plane for (user, bit index), shape [N_f, N_t].
pub fn bit_plane(bits: &Array4<u8>, user: usize, bit: usize) -> Tensor {
    let (n_f, n_t, _, _) = bits.dim();
    let mut v = vec![0.0; n_f * n_t];
    for f in 0..n_f {
        for t in 0..n_t {
            v[f * n_t + t] = bits[(f, t, user, bit)] as f64;
        }
    }
    Tensor::constant(vec![n_f, n_t], v)
}
