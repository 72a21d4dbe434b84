//! Differentiable uplink receive chain: learned error-covariance prediction
//! feeding the grouped-LMMSE equalizer, per-RE unbiasing and noise
//! variances, exact demapping and the learned grid-wide correction.
//!
//! The same graph serves training (loss vs transmitted bits) and inference
//! (LLR values), so there is no train/eval skew.

use mulink_autodiff::complex::{cadjoint, cmatmul, cpair_abs2, cpair_conj, cpair_div, hermitian_solve, unpack, CPair};
use mulink_autodiff::ops::{
    add, broadcast_scalar, concat, div, mean_all, mul_scalar, reshape, slice, smul, softplus,
    sub, sum_all, sum_axis,
};
use mulink_autodiff::Tensor;
use mulink_core::grid::{Constellation, GridConfig, PilotPattern};
use mulink_core::uplink::{equalizer_groups, GroupRange};
use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;

use crate::features::{
    bit_plane, data_mask, doppler_raw_feature, pilot_distance_planes, sigma2_plane,
    soft_normalize,
};
use crate::graph_demap::{correct_llrs, llr_planes, masked_bce};
use crate::params::UplinkParams;
use crate::template::decay_template;

/// Which learned components participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlScheme {
    /// Learned channel-estimation statistics, conventional demapper.
    ChestOnly,
    /// Learned statistics plus the demapper correction.
    Full,
}

/// One resource grid as seen by the uplink receiver.
#[derive(Debug, Clone)]
pub struct UlRgInput {
    /// Extended channel estimate (N_f, 2N_t, N_m, N_k).
    pub h_hat: Array4<Complex64>,
    /// Received uplink slot (N_f, N_t, N_m).
    pub y: Array3<Complex64>,
    pub sigma2: f64,
    /// Transmitted data bits (N_f, N_t, N_k, M); pilot-symbol entries are
    /// ignored. Present when a training loss is wanted.
    pub bits: Option<Array4<u8>>,
}

pub struct UlMlOutput {
    /// (N_f, N_t, N_k, M), convention ln(P(1)/P(0)).
    pub llr: Array4<f64>,
    /// Masked-mean BCE if bits were provided.
    pub loss: Option<Tensor>,
    /// Predicted covariance scale s_{f,t} summed over users.
    pub s_plane: Array2<f64>,
    /// Frobenius norm of the decay template (||E_hat|| = s * ||T||).
    pub template_fro: f64,
}

fn pack_const_mat(values: Vec<Complex64>, rows: usize, cols: usize) -> Tensor {
    let mut v = Vec::with_capacity(rows * cols * 2);
    for c in values {
        v.push(c.re);
        v.push(c.im);
    }
    Tensor::constant(vec![rows, cols, 2], v)
}

fn pack_const_batch(values: Vec<Complex64>, batch: usize, rows: usize, cols: usize) -> Tensor {
    let mut v = Vec::with_capacity(batch * rows * cols * 2);
    for c in values {
        v.push(c.re);
        v.push(c.im);
    }
    Tensor::constant(vec![batch, rows, cols, 2], v)
}

fn slice_grid(plane: &Tensor, range: &GroupRange) -> Tensor {
    let f_len = range.f.1 - range.f.0 + 1;
    let t_len = range.t.1 - range.t.0 + 1;
    let f = slice(plane, 0, range.f.0, f_len);
    slice(&f, 1, range.t.0, t_len)
}

/// Reassembles per-group planes (f-major within each group) into a full
/// [N_f, N_t] plane. Groups must tile the slot.
fn assemble(groups: &[GroupRange], planes: &[Tensor]) -> Tensor {
    let mut by_f: Vec<(usize, Vec<(usize, Tensor)>)> = Vec::new();
    for (range, plane) in groups.iter().zip(planes) {
        let f_len = range.f.1 - range.f.0 + 1;
        let t_len = range.t.1 - range.t.0 + 1;
        let shaped = reshape(plane, vec![f_len, t_len]);
        match by_f.iter_mut().find(|(f0, _)| *f0 == range.f.0) {
            Some((_, list)) => list.push((range.t.0, shaped)),
            None => by_f.push((range.f.0, vec![(range.t.0, shaped)])),
        }
    }
    by_f.sort_by_key(|(f0, _)| *f0);
    let rows: Vec<Tensor> = by_f
        .into_iter()
        .map(|(_, mut list)| {
            list.sort_by_key(|(t0, _)| *t0);
            let parts: Vec<Tensor> = list.into_iter().map(|(_, t)| t).collect();
            concat(&parts, 1)
        })
        .collect();
    concat(&rows, 0)
}

/// Scalar time-variability estimate per user from the pilot-difference
/// feature (bypassed to zero for the one-pilot pattern).
fn cnn_l_feature(
    input: &UlRgInput,
    grid: &GridConfig,
    user: usize,
    params: &UplinkParams,
) -> Tensor {
    let raw = doppler_raw_feature(&input.h_hat, grid, user, 0);
    if raw.iter().all(|&v| v == 0.0) {
        return Tensor::scalar(0.0);
    }
    let n_f = grid.n_subcarriers;
    let feat = soft_normalize(&Tensor::constant(vec![1, 1, n_f], raw));
    let out = params.cnn_l.forward(&feat);
    softplus(&mean_all(&out))
}

/// Predicted covariance scale plane for one user.
fn predict_scale(
    input: &UlRgInput,
    grid: &GridConfig,
    pattern: &PilotPattern,
    user: usize,
    params: &UplinkParams,
) -> Tensor {
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    let l_u = cnn_l_feature(input, grid, user, params);
    let (dist_t, dist_f) = pilot_distance_planes(pattern, grid, user, 0, false);
    let features = concat(
        &[
            sigma2_plane(input.sigma2, n_f, n_t),
            dist_t,
            dist_f,
            broadcast_scalar(&l_u, vec![1, n_f, n_t]),
        ],
        0,
    );
    let out = params.cnn_e.forward(&features);
    softplus(&reshape(&out, vec![n_f, n_t]))
}

/// Full forward pass over one RG.
pub fn uplink_forward(
    input: &UlRgInput,
    grid: &GridConfig,
    pattern: &PilotPattern,
    constellation: &Constellation,
    params: &UplinkParams,
    scheme: MlScheme,
) -> UlMlOutput {
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    let n_m = grid.n_bs_antennas;
    let n_k = grid.n_users;
    let m_bits = constellation.bits_per_symbol;

    // Predicted error statistics: per-user scale planes share one template.
    let mut s_total: Option<Tensor> = None;
    for u in 0..n_k {
        let s_u = predict_scale(input, grid, pattern, u, params);
        s_total = Some(match s_total {
            Some(acc) => add(&acc, &s_u),
            None => s_u,
        });
    }
    let s_total = s_total.expect("at least one user");
    let template = decay_template(&params.gamma_raw, &params.theta_p, n_m);
    #[cfg(debug_assertions)]
    {
        // The equalizer must never see a non-PSD covariance: s >= 0 by
        // construction, and the template must be Hermitian PSD.
        let tv = template.value();
        let tm = nalgebra::DMatrix::from_fn(n_m, n_m, |i, j| {
            Complex64::new(tv[(i * n_m + j) * 2], tv[(i * n_m + j) * 2 + 1])
        });
        debug_assert!(mulink_core::linalg::is_hermitian_psd(&tm, 1e-9));
        debug_assert!(s_total.value().iter().all(|&v| v >= 0.0));
    }

    let groups = equalizer_groups(grid);
    let mut xhat_re_parts: Vec<Vec<Tensor>> = vec![Vec::new(); n_k];
    let mut xhat_im_parts: Vec<Vec<Tensor>> = vec![Vec::new(); n_k];
    let mut nu2_parts: Vec<Vec<Tensor>> = vec![Vec::new(); n_k];

    for range in &groups {
        let n_re = range.len();
        // Constant per-group aggregates.
        let mut b0 = vec![Complex64::new(0.0, 0.0); n_m * n_m];
        let mut a_adj = vec![Complex64::new(0.0, 0.0); n_m * n_k];
        let mut h_adj_stack = vec![Complex64::new(0.0, 0.0); n_re * n_k * n_m];
        let mut y_adj_stack = vec![Complex64::new(0.0, 0.0); n_re * n_m];
        for (idx, (f, t)) in range.res().enumerate() {
            for mm in 0..n_m {
                for kk in 0..n_k {
                    let h = input.h_hat[(f, t, mm, kk)];
                    a_adj[mm * n_k + kk] += h;
                    h_adj_stack[idx * n_k * n_m + kk * n_m + mm] = h.conj();
                }
                y_adj_stack[idx * n_m + mm] = input.y[(f, t, mm)].conj();
                for m2 in 0..n_m {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for kk in 0..n_k {
                        acc += input.h_hat[(f, t, mm, kk)] * input.h_hat[(f, t, m2, kk)].conj();
                    }
                    b0[mm * n_m + m2] += acc;
                }
            }
        }
        for i in 0..n_m {
            b0[i * n_m + i] += Complex64::new(n_re as f64 * input.sigma2, 0.0);
        }
        let b0 = pack_const_mat(b0, n_m, n_m);
        let a_adj = pack_const_mat(a_adj, n_m, n_k);
        let h_adj = pack_const_batch(h_adj_stack, n_re, n_k, n_m);
        let y_adj = pack_const_batch(y_adj_stack, n_re, 1, n_m);

        let s_group = slice_grid(&s_total, range);
        let s_flat = reshape(&s_group, vec![n_re]);
        let s_sum = sum_all(&s_group);
        let b = add(&b0, &smul(&s_sum, &template));
        // W^H: columns are the conjugated equalizer rows w_k.
        let wh = hermitian_solve(&b, &a_adj);

        let z = cmatmul(&h_adj, &wh); // [n_re, N_k, N_k, 2]: h_i^H w_k
        let yw = cmatmul(&y_adj, &wh); // [n_re, 1, N_k, 2]: y^H w_k

        for k in 0..n_k {
            let z_col = reshape(&slice(&z, 2, k, 1), vec![n_re, n_k, 2]);
            let z_pair = unpack(&z_col);
            let abs2 = cpair_abs2(&z_pair); // [n_re, N_k]
            let norm_z = sum_axis(&abs2, 1); // [n_re]
            let d = unpack(&reshape(&slice(&z_col, 1, k, 1), vec![n_re, 2]));
            let abs_d = cpair_abs2(&d);
            let y_k = unpack(&reshape(&slice(&yw, 2, k, 1), vec![n_re, 2]));
            // x_hat = conj((y^H w) / (h_k^H w)) = (w^H y) / (w^H h_k).
            let x_hat = cpair_conj(&cpair_div(&y_k, &d));

            let wk = slice(&wh, 1, k, 1); // [N_m, 1, 2]
            let q_t = unpack(&reshape(&cmatmul(&cadjoint(&wk), &cmatmul(&template, &wk)), vec![1, 2]));
            let w_norm = unpack(&reshape(&cmatmul(&cadjoint(&wk), &wk), vec![1, 2]));
            let interference = sub(&norm_z, &abs_d);
            let num = add(
                &add(&interference, &smul(&reshape(&q_t.re, vec![1]), &s_flat)),
                &broadcast_scalar(&mul_scalar(&reshape(&w_norm.re, vec![1]), input.sigma2), vec![n_re]),
            );
            let nu2 = div(&num, &abs_d);

            xhat_re_parts[k].push(x_hat.re);
            xhat_im_parts[k].push(x_hat.im);
            nu2_parts[k].push(nu2);
        }
    }

    // Assemble planes and demap.
    let mask = data_mask(grid);
    let n_data_re = n_f * grid.data_symbols().len();
    let mut llr_values = Array4::<f64>::zeros((n_f, n_t, n_k, m_bits));
    let mut llr_tensors: Vec<Vec<Tensor>> = Vec::with_capacity(n_k);
    for k in 0..n_k {
        let xhat = CPair {
            re: assemble(&groups, &xhat_re_parts[k]),
            im: assemble(&groups, &xhat_im_parts[k]),
        };
        let nu2 = assemble(&groups, &nu2_parts[k]);
        let mut llr = llr_planes(&xhat, &nu2, constellation);
        if scheme == MlScheme::Full {
            llr = correct_llrs(&xhat, &nu2, &llr, &params.cnn_demap);
        }
        for (i, plane) in llr.iter().enumerate() {
            let v = plane.value();
            for f in 0..n_f {
                for t in 0..n_t {
                    llr_values[(f, t, k, i)] = v[f * n_t + t];
                }
            }
        }
        llr_tensors.push(llr);
    }

    let loss = input.bits.as_ref().map(|bits| {
        let bit_tensors: Vec<Vec<Tensor>> = (0..n_k)
            .map(|k| (0..m_bits).map(|i| bit_plane(bits, k, i)).collect())
            .collect();
        masked_bce(&llr_tensors, &bit_tensors, &mask, n_data_re)
    });

    let s_values = s_total.value();
    let s_plane = Array2::from_shape_vec((n_f, n_t), s_values).expect("plane shape");
    let tv = template.value();
    let template_fro = tv
        .chunks_exact(2)
        .map(|c| c[0] * c[0] + c[1] * c[1])
        .sum::<f64>()
        .sqrt();

    UlMlOutput { llr: llr_values, loss, s_plane, template_fro }
}

/// Dense predicted error covariance E_hat over the uplink slot (values).
pub fn predicted_error_stats(s_plane: &Array2<f64>, gamma: f64, theta_p: f64, n_m: usize) -> Array4<Complex64> {
    let (n_f, n_t) = s_plane.dim();
    let template = crate::template::decay_template_values(gamma, theta_p, n_m);
    Array4::from_shape_fn((n_f, n_t, n_m, n_m), |(f, t, i, j)| {
        template[(i, j)] * s_plane[(f, t)]
    })
}
