//! Differentiable exact demapper over whole grid planes, plus the learned
//! grid-wide correction.

use mulink_autodiff::complex::CPair;
use mulink_autodiff::ops::{
    add, add_scalar, concat, detached_max, div, exp, ln, mul, mul_scalar, neg, reshape, slice,
    sub, sum_all,
};
use mulink_autodiff::Tensor;
use mulink_core::grid::Constellation;

use crate::cnn::ConvNet;
use crate::features::soft_normalize;

/// Exact LLR planes ln(P(1)/P(0)) per bit, max-shift stabilized; the shift
/// constant is detached (the log-sum-exp gradient is shift-free).
pub fn llr_planes(xhat: &CPair, nu2: &Tensor, constellation: &Constellation) -> Vec<Tensor> {
    let m = constellation.bits_per_symbol;
    let metrics: Vec<Tensor> = constellation
        .points
        .iter()
        .map(|c| {
            let dre = add_scalar(&xhat.re, -c.re);
            let dim = add_scalar(&xhat.im, -c.im);
            let dist = add(&mul(&dre, &dre), &mul(&dim, &dim));
            neg(&div(&dist, nu2))
        })
        .collect();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut lse = Vec::with_capacity(2);
        for b in 0..2 {
            let subset: Vec<&Tensor> =
                constellation.bit_subsets[i][b].iter().map(|&p| &metrics[p]).collect();
            let shift = detached_max(&subset);
            let mut total = exp(&sub(subset[0], &shift));
            for t in &subset[1..] {
                total = add(&total, &exp(&sub(t, &shift)));
            }
            lse.push(add(&ln(&total), &shift));
        }
        out.push(sub(&lse[1], &lse[0]));
    }
    out
}

/// Additive correction from the grid-wide CNN: consumes normalized planes
/// (Re, Im, noise variance, conventional LLRs) and emits one correction
/// plane per bit. Zero weights reproduce the conventional demapper exactly.
pub fn correct_llrs(
    xhat: &CPair,
    nu2: &Tensor,
    llr: &[Tensor],
    net: &ConvNet,
) -> Vec<Tensor> {
    let shape = xhat.re.shape().to_vec();
    let (n_f, n_t) = (shape[0], shape[1]);
    let chan = |t: &Tensor| reshape(&soft_normalize(t), vec![1, n_f, n_t]);
    let mut channels = vec![chan(&xhat.re), chan(&xhat.im), chan(nu2)];
    for l in llr {
        channels.push(chan(l));
    }
    let input = concat(&channels, 0);
    let corr = net.forward(&input);
    llr.iter()
        .enumerate()
        .map(|(i, base)| add(base, &reshape(&slice(&corr, 0, i, 1), vec![n_f, n_t])))
        .collect()
}

/// Masked-mean binary cross-entropy of LLR planes against bit planes.
pub fn masked_bce(
    llr: &[Vec<Tensor>],
    bits: &[Vec<Tensor>],
    mask: &Tensor,
    n_data_re: usize,
) -> Tensor {
    let mut total: Option<Tensor> = None;
    let mut terms = 0usize;
    for (user_llr, user_bits) in llr.iter().zip(bits) {
        for (l, b) in user_llr.iter().zip(user_bits) {
            let sp = mulink_autodiff::ops::softplus(l);
            let term = sub(&sp, &mul(l, b));
            let masked = sum_all(&mul(&term, mask));
            total = Some(match total {
                Some(t) => add(&t, &masked),
                None => masked,
            });
            terms += 1;
        }
    }
    mul_scalar(&total.expect("at least one plane"), 1.0 / (terms * n_data_re) as f64)
}
