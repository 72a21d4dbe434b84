//! Primitive differentiable operators.
//!
//! Shape mismatches are programming errors and panic with context, matching
//! the dense-tensor idiom. Every primitive here is covered by the central
//! finite-difference suite in tests/gradcheck.rs.

use crate::tensor::{numel, BackCtx, Tensor};

fn assert_same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

fn map2(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    back: impl Fn(&BackCtx) -> Vec<Option<Vec<f64>>> + 'static,
    op: &str,
) -> Tensor {
    assert_same_shape(a, b, op);
    let av = a.value();
    let bv = b.value();
    let out: Vec<f64> = av.iter().zip(&bv).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_op(a.shape().to_vec(), out, vec![a.clone(), b.clone()], Box::new(back))
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    map2(
        a,
        b,
        |x, y| x + y,
        |ctx| vec![Some(ctx.grad_out.to_vec()), Some(ctx.grad_out.to_vec())],
        "add",
    )
}

pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    map2(
        a,
        b,
        |x, y| x - y,
        |ctx| {
            vec![
                Some(ctx.grad_out.to_vec()),
                Some(ctx.grad_out.iter().map(|g| -g).collect()),
            ]
        },
        "sub",
    )
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    map2(
        a,
        b,
        |x, y| x * y,
        |ctx| {
            let av = ctx.parent_value(0);
            let bv = ctx.parent_value(1);
            vec![
                Some(ctx.grad_out.iter().zip(bv.iter()).map(|(g, y)| g * y).collect()),
                Some(ctx.grad_out.iter().zip(av.iter()).map(|(g, x)| g * x).collect()),
            ]
        },
        "mul",
    )
}

pub fn div(a: &Tensor, b: &Tensor) -> Tensor {
    map2(
        a,
        b,
        |x, y| x / y,
        |ctx| {
            let bv = ctx.parent_value(1);
            let ga: Vec<f64> = ctx.grad_out.iter().zip(bv.iter()).map(|(g, y)| g / y).collect();
            let gb: Vec<f64> = ctx
                .grad_out
                .iter()
                .zip(bv.iter())
                .zip(ctx.out_value)
                .map(|((g, y), o)| -g * o / y)
                .collect();
            vec![Some(ga), Some(gb)]
        },
        "div",
    )
}

fn map1(
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    back: impl Fn(&BackCtx) -> Vec<Option<Vec<f64>>> + 'static,
) -> Tensor {
    let out: Vec<f64> = a.value().iter().map(|&x| f(x)).collect();
    Tensor::from_op(a.shape().to_vec(), out, vec![a.clone()], Box::new(back))
}

pub fn neg(a: &Tensor) -> Tensor {
    map1(a, |x| -x, |ctx| vec![Some(ctx.grad_out.iter().map(|g| -g).collect())])
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    map1(a, move |x| x + c, |ctx| vec![Some(ctx.grad_out.to_vec())])
}

pub fn mul_scalar(a: &Tensor, c: f64) -> Tensor {
    map1(a, move |x| x * c, move |ctx| {
        vec![Some(ctx.grad_out.iter().map(|g| g * c).collect())]
    })
}

pub fn exp(a: &Tensor) -> Tensor {
    map1(a, f64::exp, |ctx| {
        vec![Some(ctx.grad_out.iter().zip(ctx.out_value).map(|(g, o)| g * o).collect())]
    })
}

pub fn ln(a: &Tensor) -> Tensor {
    map1(a, f64::ln, |ctx| {
        let av = ctx.parent_value(0);
        vec![Some(ctx.grad_out.iter().zip(av.iter()).map(|(g, x)| g / x).collect())]
    })
}

pub fn sqrt(a: &Tensor) -> Tensor {
    map1(a, f64::sqrt, |ctx| {
        vec![Some(
            ctx.grad_out.iter().zip(ctx.out_value).map(|(g, o)| 0.5 * g / o).collect(),
        )]
    })
}

pub fn sin(a: &Tensor) -> Tensor {
    map1(a, f64::sin, |ctx| {
        let av = ctx.parent_value(0);
        vec![Some(ctx.grad_out.iter().zip(av.iter()).map(|(g, x)| g * x.cos()).collect())]
    })
}

pub fn cos(a: &Tensor) -> Tensor {
    map1(a, f64::cos, |ctx| {
        let av = ctx.parent_value(0);
        vec![Some(ctx.grad_out.iter().zip(av.iter()).map(|(g, x)| -g * x.sin()).collect())]
    })
}

pub fn tanh(a: &Tensor) -> Tensor {
    map1(a, f64::tanh, |ctx| {
        vec![Some(
            ctx.grad_out.iter().zip(ctx.out_value).map(|(g, o)| g * (1.0 - o * o)).collect(),
        )]
    })
}

pub fn relu(a: &Tensor) -> Tensor {
    map1(a, |x| x.max(0.0), |ctx| {
        let av = ctx.parent_value(0);
        vec![Some(
            ctx.grad_out
                .iter()
                .zip(av.iter())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect(),
        )]
    })
}

/// Overflow-safe softplus ln(1 + e^x).
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(a: &Tensor) -> Tensor {
    map1(a, softplus_scalar, |ctx| {
        let av = ctx.parent_value(0);
        vec![Some(
            ctx.grad_out
                .iter()
                .zip(av.iter())
                .map(|(g, x)| g * sigmoid_scalar(*x))
                .collect(),
        )]
    })
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map1(a, sigmoid_scalar, |ctx| {
        vec![Some(
            ctx.grad_out
                .iter()
                .zip(ctx.out_value)
                .map(|(g, o)| g * o * (1.0 - o))
                .collect(),
        )]
    })
}

pub fn sum_all(a: &Tensor) -> Tensor {
    let total: f64 = a.value().iter().sum();
    let n = a.numel();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![a.clone()],
        Box::new(move |ctx| vec![Some(vec![ctx.grad_out[0]; n])]),
    )
}

pub fn mean_all(a: &Tensor) -> Tensor {
    let n = a.numel();
    let total: f64 = a.value().iter().sum();
    Tensor::from_op(
        vec![1],
        vec![total / n as f64],
        vec![a.clone()],
        Box::new(move |ctx| vec![Some(vec![ctx.grad_out[0] / n as f64; n])]),
    )
}

/// Sums over one axis, dropping it.
pub fn sum_axis(a: &Tensor, axis: usize) -> Tensor {
    let shape = a.shape().to_vec();
    assert!(axis < shape.len(), "sum_axis: axis {axis} out of range");
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.clone();
    out_shape.remove(axis);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let av = a.value();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for m in 0..mid {
            let base = (o * mid + m) * inner;
            for i in 0..inner {
                out[o * inner + i] += av[base + i];
            }
        }
    }
    Tensor::from_op(
        out_shape,
        out,
        vec![a.clone()],
        Box::new(move |ctx| {
            let mut g = vec![0.0; outer * mid * inner];
            for o in 0..outer {
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    for i in 0..inner {
                        g[base + i] = ctx.grad_out[o * inner + i];
                    }
                }
            }
            vec![Some(g)]
        }),
    )
}

/// Scalar tensor times tensor, broadcasting the scalar.
pub fn smul(s: &Tensor, a: &Tensor) -> Tensor {
    assert_eq!(s.numel(), 1, "smul: first argument must be scalar");
    let sv = s.item();
    let out: Vec<f64> = a.value().iter().map(|x| x * sv).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![s.clone(), a.clone()],
        Box::new(|ctx| {
            let sv = ctx.parent_value(0)[0];
            let av = ctx.parent_value(1);
            let gs: f64 = ctx.grad_out.iter().zip(av.iter()).map(|(g, x)| g * x).sum();
            let ga: Vec<f64> = ctx.grad_out.iter().map(|g| g * sv).collect();
            vec![Some(vec![gs]), Some(ga)]
        }),
    )
}

/// Broadcasts a scalar tensor to a full shape.
pub fn broadcast_scalar(s: &Tensor, shape: Vec<usize>) -> Tensor {
    assert_eq!(s.numel(), 1, "broadcast_scalar: source must be scalar");
    let n = numel(&shape);
    Tensor::from_op(
        shape,
        vec![s.item(); n],
        vec![s.clone()],
        Box::new(|ctx| vec![Some(vec![ctx.grad_out.iter().sum()])]),
    )
}

/// 2-D matrix product [m,k] x [k,n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(a.shape().len(), 2, "matmul: a must be 2-D");
    assert_eq!(b.shape().len(), 2, "matmul: b must be 2-D");
    assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
    let av = a.value();
    let bv = b.value();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let x = av[i * k + kk];
            if x == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += x * bv[kk * n + j];
            }
        }
    }
    Tensor::from_op(
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |ctx| {
            let av = ctx.parent_value(0);
            let bv = ctx.parent_value(1);
            let g = ctx.grad_out;
            // ga = g . b^T
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                for j in 0..n {
                    let gv = g[i * n + j];
                    if gv == 0.0 {
                        continue;
                    }
                    for kk in 0..k {
                        ga[i * k + kk] += gv * bv[kk * n + j];
                    }
                }
            }
            // gb = a^T . g
            let mut gb = vec![0.0; k * n];
            for kk in 0..k {
                for i in 0..m {
                    let xv = av[i * k + kk];
                    if xv == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        gb[kk * n + j] += xv * g[i * n + j];
                    }
                }
            }
            vec![Some(ga), Some(gb)]
        }),
    )
}

/// Adds a bias vector over the last dimension.
pub fn add_bias(a: &Tensor, bias: &Tensor) -> Tensor {
    let n = *a.shape().last().expect("add_bias: empty shape");
    assert_eq!(bias.shape(), [n], "add_bias: bias must match last dim");
    let lead = a.numel() / n;
    let av = a.value();
    let bv = bias.value();
    let out: Vec<f64> = av.iter().enumerate().map(|(i, x)| x + bv[i % n]).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), bias.clone()],
        Box::new(move |ctx| {
            let gb: Vec<f64> = (0..n)
                .map(|j| (0..lead).map(|l| ctx.grad_out[l * n + j]).sum())
                .collect();
            vec![Some(ctx.grad_out.to_vec()), Some(gb)]
        }),
    )
}

/// Dense layer x[.., k] . w[k, n] + b[n] for 1-D or 2-D x.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let x2 = if x.shape().len() == 1 { reshape(x, vec![1, x.shape()[0]]) } else { x.clone() };
    let y = matmul(&x2, w);
    let y = add_bias(&y, b);
    if x.shape().len() == 1 {
        reshape(&y, vec![w.shape()[1]])
    } else {
        y
    }
}

/// Same-padding stride-1 2-D convolution with bias:
/// x[C_in, H, W], kernel[C_out, C_in, kh, kw] (odd kh, kw), bias[C_out].
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, ci2, kh, kw) =
        (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]);
    assert_eq!(ci, ci2, "conv2d: channel mismatch");
    assert_eq!(bias.shape(), [co], "conv2d: bias shape");
    assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernels must be odd-sized");
    let (ph, pw) = (kh / 2, kw / 2);
    let xv = x.value();
    let kv = kernel.value();
    let bv = bias.value();
    let mut out = vec![0.0; co * h * w];
    for c_out in 0..co {
        let out_base = c_out * h * w;
        for i in 0..h {
            for j in 0..w {
                out[out_base + i * w + j] = bv[c_out];
            }
        }
        for c_in in 0..ci {
            let x_base = c_in * h * w;
            let k_base = (c_out * ci + c_in) * kh * kw;
            for u in 0..kh {
                for v in 0..kw {
                    let kval = kv[k_base + u * kw + v];
                    if kval == 0.0 {
                        continue;
                    }
                    let di = u as isize - ph as isize;
                    let dj = v as isize - pw as isize;
                    let i0 = (-di).max(0) as usize;
                    let i1 = (h as isize - di).min(h as isize) as usize;
                    let j0 = (-dj).max(0) as usize;
                    let j1 = (w as isize - dj).min(w as isize) as usize;
                    for i in i0..i1 {
                        let src = x_base + (i as isize + di) as usize * w;
                        let dst = out_base + i * w;
                        for j in j0..j1 {
                            out[dst + j] += kval * xv[src + (j as isize + dj) as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op(
        vec![co, h, w],
        out,
        vec![x.clone(), kernel.clone(), bias.clone()],
        Box::new(move |ctx| {
            let xv = ctx.parent_value(0);
            let kv = ctx.parent_value(1);
            let g = ctx.grad_out;
            let mut gx = vec![0.0; ci * h * w];
            let mut gk = vec![0.0; co * ci * kh * kw];
            let mut gb = vec![0.0; co];
            for c_out in 0..co {
                let out_base = c_out * h * w;
                for i in 0..h {
                    for j in 0..w {
                        gb[c_out] += g[out_base + i * w + j];
                    }
                }
                for c_in in 0..ci {
                    let x_base = c_in * h * w;
                    let k_base = (c_out * ci + c_in) * kh * kw;
                    for u in 0..kh {
                        for v in 0..kw {
                            let di = u as isize - ph as isize;
                            let dj = v as isize - pw as isize;
                            let i0 = (-di).max(0) as usize;
                            let i1 = (h as isize - di).min(h as isize) as usize;
                            let j0 = (-dj).max(0) as usize;
                            let j1 = (w as isize - dj).min(w as isize) as usize;
                            let kval = kv[k_base + u * kw + v];
                            let mut acc = 0.0;
                            for i in i0..i1 {
                                let src = x_base + (i as isize + di) as usize * w;
                                let dst = out_base + i * w;
                                for j in j0..j1 {
                                    let xs = src + (j as isize + dj) as usize;
                                    let gv = g[dst + j];
                                    acc += gv * xv[xs];
                                    gx[xs] += gv * kval;
                                }
                            }
                            gk[k_base + u * kw + v] += acc;
                        }
                    }
                }
            }
            vec![Some(gx), Some(gk), Some(gb)]
        }),
    )
}

/// Concatenates along an axis.
pub fn concat(tensors: &[Tensor], axis: usize) -> Tensor {
    assert!(!tensors.is_empty(), "concat: no inputs");
    let first = tensors[0].shape().to_vec();
    assert!(axis < first.len(), "concat: axis out of range");
    let mut axis_total = 0usize;
    for t in tensors {
        assert_eq!(t.shape().len(), first.len(), "concat: rank mismatch");
        for (d, (&a, &b)) in t.shape().iter().zip(&first).enumerate() {
            if d != axis {
                assert_eq!(a, b, "concat: shape mismatch on dim {d}");
            }
        }
        axis_total += t.shape()[axis];
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut out_shape = first.clone();
    out_shape[axis] = axis_total;
    let mut out = vec![0.0; outer * axis_total * inner];
    let mut offset = 0usize;
    let mut sizes = Vec::with_capacity(tensors.len());
    for t in tensors {
        let ax = t.shape()[axis];
        let tv = t.value();
        for o in 0..outer {
            let dst = (o * axis_total + offset) * inner;
            let src = o * ax * inner;
            out[dst..dst + ax * inner].copy_from_slice(&tv[src..src + ax * inner]);
        }
        sizes.push(ax);
        offset += ax;
    }
    Tensor::from_op(
        out_shape,
        out,
        tensors.to_vec(),
        Box::new(move |ctx| {
            let mut grads = Vec::with_capacity(sizes.len());
            let mut offset = 0usize;
            for &ax in &sizes {
                let mut g = vec![0.0; outer * ax * inner];
                for o in 0..outer {
                    let src = (o * axis_total + offset) * inner;
                    let dst = o * ax * inner;
                    g[dst..dst + ax * inner].copy_from_slice(&ctx.grad_out[src..src + ax * inner]);
                }
                grads.push(Some(g));
                offset += ax;
            }
            grads
        }),
    )
}

/// Contiguous slice along one axis.
pub fn slice(a: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let shape = a.shape().to_vec();
    assert!(axis < shape.len(), "slice: axis out of range");
    assert!(start + len <= shape[axis], "slice: out of bounds");
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let av = a.value();
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        let src = (o * mid + start) * inner;
        let dst = o * len * inner;
        out[dst..dst + len * inner].copy_from_slice(&av[src..src + len * inner]);
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    Tensor::from_op(
        out_shape,
        out,
        vec![a.clone()],
        Box::new(move |ctx| {
            let mut g = vec![0.0; outer * mid * inner];
            for o in 0..outer {
                let dst = (o * mid + start) * inner;
                let src = o * len * inner;
                g[dst..dst + len * inner].copy_from_slice(&ctx.grad_out[src..src + len * inner]);
            }
            vec![Some(g)]
        }),
    )
}

/// Shape change over the same data.
pub fn reshape(a: &Tensor, new_shape: Vec<usize>) -> Tensor {
    assert_eq!(numel(&new_shape), a.numel(), "reshape: element count mismatch");
    Tensor::from_op(
        new_shape,
        a.value(),
        vec![a.clone()],
        Box::new(|ctx| vec![Some(ctx.grad_out.to_vec())]),
    )
}

/// Elementwise maximum over tensors, detached from the graph (used as the
/// shift constant in stable log-sum-exp; the LSE gradient is shift-free).
pub fn detached_max(tensors: &[&Tensor]) -> Tensor {
    assert!(!tensors.is_empty());
    let mut out = tensors[0].value();
    for t in &tensors[1..] {
        for (o, v) in out.iter_mut().zip(t.value()) {
            *o = o.max(v);
        }
    }
    Tensor::constant(tensors[0].shape().to_vec(), out)
}

/// Stable binary cross-entropy with logits against constant targets:
/// mean(softplus(l) - b * l).
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Tensor {
    assert_same_shape(logits, targets, "bce_with_logits");
    let bl = mul(logits, targets);
    let sp = softplus(logits);
    mean_all(&sub(&sp, &bl))
}

/// Masked mean: sum(x * mask) / count, with `mask` a constant 0/1 tensor.
pub fn masked_mean(x: &Tensor, mask: &Tensor, count: usize) -> Tensor {
    let masked = mul(x, mask);
    mul_scalar(&sum_all(&masked), 1.0 / count as f64)
}
