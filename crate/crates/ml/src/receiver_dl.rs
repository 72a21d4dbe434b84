//! Differentiable downlink UE chain: learned per-RE variance prediction
//! (estimation error and interference power) and the grid-wide demapper
//! correction on top of the conventional scalar equalizer.

use mulink_autodiff::complex::CPair;
use mulink_autodiff::ops::{add, add_scalar, broadcast_scalar, concat, div, mean_all, reshape, slice, softplus};
use mulink_autodiff::Tensor;
use mulink_core::grid::{Constellation, GridConfig, PilotPattern};
use ndarray::{Array3, Array4};
use num_complex::Complex64;

use crate::features::{bit_plane, data_mask, doppler_raw_feature_dl, pilot_distance_planes, sigma2_plane, soft_normalize};
use crate::graph_demap::{correct_llrs, llr_planes, masked_bce};
use crate::params::DownlinkParams;
use crate::receiver_ul::MlScheme;

/// One downlink RG as seen by the UEs.
#[derive(Debug, Clone)]
pub struct DlRgInput {
    /// UE-side extended estimates of the principal equivalent channel
    /// (N_f, N_t, N_k), t relative to the downlink slot.
    pub g_hat: Array3<Complex64>,
    /// Received downlink slot (N_f, N_t, N_k).
    pub r: Array3<Complex64>,
    pub sigma2: f64,
    /// Transmitted bits (N_f, N_t, N_k, M_dl) for training.
    pub bits: Option<Array4<u8>>,
}

pub struct DlMlOutput {
    pub llr: Array4<f64>,
    pub loss: Option<Tensor>,
    /// Predicted per-RE estimation-error variances (N_f, N_t, N_k).
    pub v_planes: Array3<f64>,
    /// Predicted per-RE interference powers (N_f, N_t, N_k).
    pub j_planes: Array3<f64>,
}

pub fn downlink_forward(
    input: &DlRgInput,
    grid: &GridConfig,
    pattern: &PilotPattern,
    constellation: &Constellation,
    params: &DownlinkParams,
    scheme: MlScheme,
) -> DlMlOutput {
    let n_f = grid.n_subcarriers;
    let n_t = grid.n_symbols;
    let n_k = grid.n_users;
    let m_bits = constellation.bits_per_symbol;

    let mask = data_mask(grid);
    let n_data_re = n_f * grid.data_symbols().len();
    let mut llr_values = Array4::<f64>::zeros((n_f, n_t, n_k, m_bits));
    let mut v_planes = Array3::<f64>::zeros((n_f, n_t, n_k));
    let mut j_planes = Array3::<f64>::zeros((n_f, n_t, n_k));
    let mut llr_tensors: Vec<Vec<Tensor>> = Vec::with_capacity(n_k);

    for k in 0..n_k {
        // Doppler feature from the two pilot-symbol estimates.
        let raw = doppler_raw_feature_dl(&input.g_hat, grid, k);
        let l_u = if raw.iter().all(|&v| v == 0.0) {
            Tensor::scalar(0.0)
        } else {
            let feat = soft_normalize(&Tensor::constant(vec![1, 1, n_f], raw));
            softplus(&mean_all(&params.cnn_l.forward(&feat)))
        };
        let (dist_t, dist_f) = pilot_distance_planes(pattern, grid, k, n_t, true);
        let features = concat(
            &[
                sigma2_plane(input.sigma2, n_f, n_t),
                dist_t,
                dist_f,
                broadcast_scalar(&l_u, vec![1, n_f, n_t]),
            ],
            0,
        );
        let vj = params.cnn_v.forward(&features); // [2, N_f, N_t]
        let v = softplus(&reshape(&slice(&vj, 0, 0, 1), vec![n_f, n_t]));
        let j = softplus(&reshape(&slice(&vj, 0, 1, 1), vec![n_f, n_t]));

        // Constant scalar equalization u_hat = r / g_hat and |g_hat|^2.
        let mut u_re = vec![0.0; n_f * n_t];
        let mut u_im = vec![0.0; n_f * n_t];
        let mut g_abs2 = vec![0.0; n_f * n_t];
        for f in 0..n_f {
            for t in 0..n_t {
                let g = input.g_hat[(f, t, k)];
                let u = input.r[(f, t, k)] / g;
                u_re[f * n_t + t] = u.re;
                u_im[f * n_t + t] = u.im;
                g_abs2[f * n_t + t] = g.norm_sqr();
            }
        }
        let u_hat = CPair {
            re: Tensor::constant(vec![n_f, n_t], u_re),
            im: Tensor::constant(vec![n_f, n_t], u_im),
        };
        let g_abs2 = Tensor::constant(vec![n_f, n_t], g_abs2);
        let tau2 = div(&add_scalar(&add(&v, &j), input.sigma2), &g_abs2);

        let mut llr = llr_planes(&u_hat, &tau2, constellation);
        if scheme == MlScheme::Full {
            llr = correct_llrs(&u_hat, &tau2, &llr, &params.cnn_demap);
        }
        let vv = v.value();
        let jv = j.value();
        for f in 0..n_f {
            for t in 0..n_t {
                v_planes[(f, t, k)] = vv[f * n_t + t];
                j_planes[(f, t, k)] = jv[f * n_t + t];
            }
        }
        for (i, plane) in llr.iter().enumerate() {
            let pv = plane.value();
            for f in 0..n_f {
                for t in 0..n_t {
                    llr_values[(f, t, k, i)] = pv[f * n_t + t];
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

    DlMlOutput { llr: llr_values, loss, v_planes, j_planes }
}
