//! Small convolutional stacks used by the learned receiver components.

use mulink_autodiff::ops::{conv2d, relu};
use mulink_autodiff::Tensor;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stack of same-padded 3x3 (or 1xk) conv layers with ReLU between them and
/// a linear final layer.
#[derive(Clone, Debug)]
pub struct ConvNet {
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// Layer plan: (in_ch, out_ch, kh, kw) per layer.
pub fn conv_plan(
    in_ch: usize,
    hidden: usize,
    out_ch: usize,
    n_layers: usize,
    kh: usize,
    kw: usize,
) -> Vec<(usize, usize, usize, usize)> {
    let mut plan = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let ci = if l == 0 { in_ch } else { hidden };
        let co = if l == n_layers - 1 { out_ch } else { hidden };
        plan.push((ci, co, kh, kw));
    }
    plan
}

impl ConvNet {
    /// He-style initialization; `zero_last` zeroes the final layer so the net
    /// starts as an exact no-op correction.
    pub fn init(
        plan: &[(usize, usize, usize, usize)],
        zero_last: bool,
        rng: &mut ChaCha8Rng,
    ) -> ConvNet {
        let mut kernels = Vec::with_capacity(plan.len());
        let mut biases = Vec::with_capacity(plan.len());
        for (l, &(ci, co, kh, kw)) in plan.iter().enumerate() {
            let n = co * ci * kh * kw;
            let last = l == plan.len() - 1;
            let std = (2.0 / (ci * kh * kw) as f64).sqrt();
            let values: Vec<f64> = (0..n)
                .map(|_| {
                    if last && zero_last {
                        0.0
                    } else {
                        let z: f64 = StandardNormal.sample(rng);
                        z * std
                    }
                })
                .collect();
            kernels.push(Tensor::param(vec![co, ci, kh, kw], values));
            biases.push(Tensor::param(vec![co], vec![0.0; co]));
        }
        ConvNet { kernels, biases }
    }

    /// Rebuilds the net from flat value vectors (kernel, bias alternating).
    pub fn from_values(
        plan: &[(usize, usize, usize, usize)],
        values: &mut impl Iterator<Item = Vec<f64>>,
    ) -> ConvNet {
        let mut kernels = Vec::with_capacity(plan.len());
        let mut biases = Vec::with_capacity(plan.len());
        for &(ci, co, kh, kw) in plan {
            kernels.push(Tensor::param(vec![co, ci, kh, kw], values.next().expect("kernel values")));
            biases.push(Tensor::param(vec![co], values.next().expect("bias values")));
        }
        ConvNet { kernels, biases }
    }

    /// x: [C_in, H, W] -> [C_out, H, W].
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let n = self.kernels.len();
        for (l, (k, b)) in self.kernels.iter().zip(&self.biases).enumerate() {
            h = conv2d(&h, k, b);
            if l + 1 < n {
                h = relu(&h);
            }
        }
        h
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(2 * self.kernels.len());
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            out.push(k.clone());
            out.push(b.clone());
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}
