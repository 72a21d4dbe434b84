//! Complex tensors over the real engine.
//!
//! Matrix-valued quantities use the packed layout [..., 2] (re, im in the
//! last axis) with dedicated primitives; elementwise chains use (re, im)
//! tensor pairs built from the real primitives.

use num_complex::Complex64;

use crate::ops::{add, concat, div, mul, neg, reshape, slice, sub};
use crate::tensor::Tensor;

fn cpx(v: &[f64], i: usize) -> Complex64 {
    Complex64::new(v[2 * i], v[2 * i + 1])
}

fn put(v: &mut [f64], i: usize, c: Complex64) {
    v[2 * i] = c.re;
    v[2 * i + 1] = c.im;
}

fn add_assign(v: &mut [f64], i: usize, c: Complex64) {
    v[2 * i] += c.re;
    v[2 * i + 1] += c.im;
}

/// C += A B on packed buffers; A is [m,k], B is [k,n].
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for l in 0..k {
            let av = cpx(a, i * k + l);
            if av.re == 0.0 && av.im == 0.0 {
                continue;
            }
            for j in 0..n {
                add_assign(out, i * n + j, av * cpx(b, l * n + j));
            }
        }
    }
}

/// C += A B^H; A is [m,k], B is [n,k].
fn mm_nh(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in 0..k {
                acc += cpx(a, i * k + l) * cpx(b, j * k + l).conj();
            }
            add_assign(out, i * n + j, acc);
        }
    }
}

/// C += A^H B; A is [k,m], B is [k,n].
fn mm_hn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for l in 0..k {
        for i in 0..m {
            let av = cpx(a, l * m + i).conj();
            if av.re == 0.0 && av.im == 0.0 {
                continue;
            }
            for j in 0..n {
                add_assign(out, i * n + j, av * cpx(b, l * n + j));
            }
        }
    }
}

struct MatShape {
    batch: usize,
    rows: usize,
    cols: usize,
    batched: bool,
}

fn parse_packed(shape: &[usize], name: &str) -> MatShape {
    assert!(
        shape.len() == 3 || shape.len() == 4,
        "{name}: expected [m,k,2] or [B,m,k,2], got {shape:?}"
    );
    assert_eq!(*shape.last().unwrap(), 2, "{name}: last axis must be 2 (re, im)");
    if shape.len() == 3 {
        MatShape { batch: 1, rows: shape[0], cols: shape[1], batched: false }
    } else {
        MatShape { batch: shape[0], rows: shape[1], cols: shape[2], batched: true }
    }
}

/// Batched complex matrix product on packed tensors. Either operand may omit
/// the batch axis, in which case it is broadcast.
pub fn cmatmul(a: &Tensor, b: &Tensor) -> Tensor {
    let sa = parse_packed(a.shape(), "cmatmul lhs");
    let sb = parse_packed(b.shape(), "cmatmul rhs");
    assert_eq!(sa.cols, sb.rows, "cmatmul: inner dims {} vs {}", sa.cols, sb.rows);
    let batch = match (sa.batched, sb.batched) {
        (true, true) => {
            assert_eq!(sa.batch, sb.batch, "cmatmul: batch mismatch");
            sa.batch
        }
        (true, false) => sa.batch,
        (false, true) => sb.batch,
        (false, false) => 1,
    };
    let (m, k, n) = (sa.rows, sa.cols, sb.cols);
    let av = a.value();
    let bv = b.value();
    let a_stride = if sa.batched { m * k * 2 } else { 0 };
    let b_stride = if sb.batched { k * n * 2 } else { 0 };
    let mut out = vec![0.0; batch * m * n * 2];
    for bi in 0..batch {
        mm_nn(
            &av[bi * a_stride..bi * a_stride + m * k * 2],
            &bv[bi * b_stride..bi * b_stride + k * n * 2],
            m,
            k,
            n,
            &mut out[bi * m * n * 2..(bi + 1) * m * n * 2],
        );
    }
    let out_shape = if sa.batched || sb.batched {
        vec![batch, m, n, 2]
    } else {
        vec![m, n, 2]
    };
    let (ab, bb) = (sa.batched, sb.batched);
    Tensor::from_op(
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |ctx| {
            let av = ctx.parent_value(0);
            let bv = ctx.parent_value(1);
            let g = ctx.grad_out;
            // G_A = G_C B^H, summed over the batch when A is broadcast.
            let ga_len = if ab { batch * m * k * 2 } else { m * k * 2 };
            let mut ga = vec![0.0; ga_len];
            let gb_len = if bb { batch * k * n * 2 } else { k * n * 2 };
            let mut gb = vec![0.0; gb_len];
            for bi in 0..batch {
                let gslice = &g[bi * m * n * 2..(bi + 1) * m * n * 2];
                let a_off = bi * if ab { m * k * 2 } else { 0 };
                let b_off = bi * if bb { k * n * 2 } else { 0 };
                mm_nh(
                    gslice,
                    &bv[b_off..b_off + k * n * 2],
                    m,
                    n,
                    k,
                    &mut ga[a_off..a_off + m * k * 2],
                );
                // G_B = A^H G_C.
                mm_hn(
                    &av[a_off..a_off + m * k * 2],
                    gslice,
                    k,
                    m,
                    n,
                    &mut gb[b_off..b_off + k * n * 2],
                );
            }
            vec![Some(ga), Some(gb)]
        }),
    )
}

/// Complex conjugate of a packed tensor.
pub fn cconj(a: &Tensor) -> Tensor {
    assert_eq!(*a.shape().last().unwrap(), 2, "cconj: packed tensor expected");
    let out: Vec<f64> =
        a.value().iter().enumerate().map(|(i, v)| if i % 2 == 1 { -v } else { *v }).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(|ctx| {
            vec![Some(
                ctx.grad_out
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i % 2 == 1 { -v } else { *v })
                    .collect(),
            )]
        }),
    )
}

/// Conjugate transpose of a packed matrix (optionally batched).
pub fn cadjoint(a: &Tensor) -> Tensor {
    let s = parse_packed(a.shape(), "cadjoint");
    let (m, n) = (s.rows, s.cols);
    let av = a.value();
    let mut out = vec![0.0; av.len()];
    for b in 0..s.batch {
        let base = b * m * n * 2;
        for i in 0..m {
            for j in 0..n {
                let c = cpx(&av[base..], i * n + j).conj();
                put(&mut out[base..], j * m + i, c);
            }
        }
    }
    let out_shape = if s.batched { vec![s.batch, n, m, 2] } else { vec![n, m, 2] };
    let (batch, batched) = (s.batch, s.batched);
    let _ = batched;
    Tensor::from_op(
        out_shape,
        out,
        vec![a.clone()],
        Box::new(move |ctx| {
            let mut g = vec![0.0; ctx.grad_out.len()];
            for b in 0..batch {
                let base = b * m * n * 2;
                for i in 0..m {
                    for j in 0..n {
                        let c = cpx(&ctx.grad_out[base..], j * m + i).conj();
                        put(&mut g[base..], i * n + j, c);
                    }
                }
            }
            vec![Some(g)]
        }),
    )
}

fn chol_solve_packed(
    b: &[f64],
    rhs: &[f64],
    n: usize,
    m: usize,
) -> Result<Vec<f64>, crate::Error> {
    let mut mat: Vec<Complex64> = (0..n * n).map(|i| cpx(b, i)).collect();
    let ridge_used;
    // Cholesky with a single ridge retry.
    let factor = |mat: &mut Vec<Complex64>| -> bool {
        for j in 0..n {
            let mut d = mat[j * n + j].re;
            for l in 0..j {
                d -= mat[j * n + l].norm_sqr();
            }
            if d <= 0.0 || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            mat[j * n + j] = Complex64::new(d, 0.0);
            for i in (j + 1)..n {
                let mut s = mat[i * n + j];
                for l in 0..j {
                    s -= mat[i * n + l] * mat[j * n + l].conj();
                }
                mat[i * n + j] = s / d;
            }
        }
        true
    };
    let mut work = mat.clone();
    if !factor(&mut work) {
        let scale = (0..n).map(|i| mat[i * n + i].re.abs()).fold(1.0f64, f64::max);
        ridge_used = 1e-12 * scale;
        log::warn!("hermitian_solve: Cholesky failed, ridge {ridge_used:.3e}");
        for i in 0..n {
            mat[i * n + i] += Complex64::new(ridge_used, 0.0);
        }
        work = mat.clone();
        if !factor(&mut work) {
            return Err(crate::Error::SingularSystem);
        }
    }
    // work holds L in its lower triangle: solve L Z = RHS, then L^H X = Z.
    let mut x: Vec<Complex64> = (0..n * m).map(|i| cpx(rhs, i)).collect();
    for col in 0..m {
        for i in 0..n {
            let mut s = x[i * m + col];
            for l in 0..i {
                s -= work[i * n + l] * x[l * m + col];
            }
            x[i * m + col] = s / work[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = x[i * m + col];
            for l in (i + 1)..n {
                s -= work[l * n + i].conj() * x[l * m + col];
            }
            x[i * m + col] = s / work[i * n + i].re;
        }
    }
    let mut out = vec![0.0; n * m * 2];
    for i in 0..n * m {
        put(&mut out, i, x[i]);
    }
    Ok(out)
}

/// Solves B X = C for Hermitian positive-definite packed B [n,n,2] and
/// packed C [n,m,2]. The backward pass uses the implicit-function rule
/// (two extra solves), never an explicit inverse.
pub fn hermitian_solve(b: &Tensor, c: &Tensor) -> Tensor {
    let sb = parse_packed(b.shape(), "hermitian_solve lhs");
    let sc = parse_packed(c.shape(), "hermitian_solve rhs");
    assert!(!sb.batched && !sc.batched, "hermitian_solve: unbatched only");
    assert_eq!(sb.rows, sb.cols, "hermitian_solve: B must be square");
    assert_eq!(sb.rows, sc.rows, "hermitian_solve: dim mismatch");
    let (n, m) = (sb.rows, sc.cols);
    let out = chol_solve_packed(&b.value(), &c.value(), n, m).expect("solvable system");
    Tensor::from_op(
        vec![n, m, 2],
        out,
        vec![b.clone(), c.clone()],
        Box::new(move |ctx| {
            let bv = ctx.parent_value(0);
            // G_C = B^{-1} G_X (B Hermitian), G_B = -G_C X^H.
            let gc = chol_solve_packed(&bv, ctx.grad_out, n, m).expect("solvable system");
            let mut gb = vec![0.0; n * n * 2];
            mm_nh(&gc, ctx.out_value, n, m, n, &mut gb);
            for v in gb.iter_mut() {
                *v = -*v;
            }
            vec![Some(gb), Some(gc)]
        }),
    )
}

/// Elementwise complex values as (re, im) tensor pairs.
#[derive(Clone, Debug)]
pub struct CPair {
    pub re: Tensor,
    pub im: Tensor,
}

impl CPair {
    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }
}

/// Splits a packed tensor into an elementwise pair (dropping the pack axis).
pub fn unpack(a: &Tensor) -> CPair {
    let shape = a.shape().to_vec();
    assert_eq!(*shape.last().unwrap(), 2, "unpack: packed tensor expected");
    let axis = shape.len() - 1;
    let base: Vec<usize> = shape[..axis].to_vec();
    let re = reshape(&slice(a, axis, 0, 1), base.clone());
    let im = reshape(&slice(a, axis, 1, 1), base);
    CPair { re, im }
}

/// Packs an elementwise pair into [..., 2].
pub fn pack(p: &CPair) -> Tensor {
    let mut shape = p.re.shape().to_vec();
    shape.push(1);
    let re = reshape(&p.re, shape.clone());
    let im = reshape(&p.im, shape);
    concat(&[re, im], p.re.shape().len())
}

pub fn cpair_conj(a: &CPair) -> CPair {
    CPair { re: a.re.clone(), im: neg(&a.im) }
}

pub fn cpair_add(a: &CPair, b: &CPair) -> CPair {
    CPair { re: add(&a.re, &b.re), im: add(&a.im, &b.im) }
}

pub fn cpair_sub(a: &CPair, b: &CPair) -> CPair {
    CPair { re: sub(&a.re, &b.re), im: sub(&a.im, &b.im) }
}

pub fn cpair_mul(a: &CPair, b: &CPair) -> CPair {
    CPair {
        re: sub(&mul(&a.re, &b.re), &mul(&a.im, &b.im)),
        im: add(&mul(&a.re, &b.im), &mul(&a.im, &b.re)),
    }
}

/// |a|^2 elementwise.
pub fn cpair_abs2(a: &CPair) -> Tensor {
    add(&mul(&a.re, &a.re), &mul(&a.im, &a.im))
}

/// a / b elementwise.
pub fn cpair_div(a: &CPair, b: &CPair) -> CPair {
    let den = cpair_abs2(b);
    let num = cpair_mul(a, &cpair_conj(b));
    CPair { re: div(&num.re, &den), im: div(&num.im, &den) }
}
