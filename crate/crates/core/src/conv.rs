//! Zero-padded stride-1 convolution, ReLU and weight initialization.
//!
//! Convolution is cross-correlation: output `(co, y, x)` is
//! `bias[co] + sum_{ci, ky, kx} w[co, ci, ky, kx] * in[ci, y + ky - pad, x + kx - pad]`
//! with out-of-range input reads treated as zero. Each sample is lowered to
//! a column matrix and multiplied by the weight matrix.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{GunError, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Weights `[c_out, c_in, k, k]` and one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros([c_out, c_in, k, k]),
            bias: vec![T::zero(); c_out],
        }
    }

    /// He-initialized weights drawn from `rng`, zero bias.
    pub fn he<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Self {
        ConvParams {
            weight: he_init_with([c_out, c_in, k, k].into(), rng),
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    fn validate(&self) -> Result<()> {
        let s = self.weight.shape();
        if s.h != s.w || s.h.is_multiple_of(2) {
            return Err(GunError::shape("conv2d", "odd square kernel", s));
        }
        if self.bias.len() != s.n {
            return Err(GunError::shape("conv2d bias", s.n, self.bias.len()));
        }
        Ok(())
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

fn check_conv_input<T: Scalar>(input: Shape, params: &ConvParams<T>, zero_pad: usize) -> Result<()> {
    params.validate()?;
    if input.c != params.c_in() {
        return Err(GunError::shape(
            "conv2d input channels",
            params.c_in(),
            format!("{} (input {})", input.c, input),
        ));
    }
    if zero_pad != params.kernel() / 2 {
        return Err(GunError::shape("conv2d zero padding", params.kernel() / 2, zero_pad));
    }
    Ok(())
}

/// Lowers one `[c, h, w]` sample into a `[c*k*k, h*w]` column matrix.
fn im2col<T: Scalar>(sample: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &sample[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                // valid x range for this tap
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Scatters a `[c*k*k, h*w]` column gradient back onto a `[c, h, w]` sample.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, sample: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    sample.fill(T::zero());
    for ci in 0..c {
        let plane = &mut sample[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..][..x1 - x0];
                    for (d, &g) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d = *d + g;
                    }
                }
            }
        }
    }
}

/// Zero-padded convolution plus bias; spatial size is preserved.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>, zero_pad: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    check_conv_input(s, params, zero_pad)?;
    let (c_out, k) = (params.c_out(), params.kernel());
    let hw = s.plane();
    let inner = s.c * k * k;
    let mut out = Tensor::zeros([s.n, c_out, s.h, s.w]);
    if out.is_empty() {
        return Ok(out);
    }
    let w = params.weight.data();
    out.data_mut()
        .par_chunks_mut(c_out * hw)
        .zip(input.data().par_chunks(s.sample()))
        .for_each_init(
            || if k == 1 { Vec::new() } else { vec![T::zero(); inner * hw] },
            |cols, (dst, src)| {
                for (co, plane) in dst.chunks_mut(hw).enumerate() {
                    plane.fill(params.bias[co]);
                }
                let rhs: &[T] = if k == 1 {
                    src
                } else {
                    im2col(src, s.c, s.h, s.w, k, cols);
                    cols
                };
                T::gemm(c_out, inner, hw, T::one(), w, inner as isize, 1, rhs, hw as isize, 1, T::one(), dst, hw as isize, 1);
            },
        );
    Ok(out)
}

/// Exact adjoint of [`conv2d_forward`].
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let g = conv2d_backward_with(input, params, grad_out, true)?;
    Ok((g.input.expect("input gradient requested"), g.weight, g.bias))
}

/// Like [`conv2d_backward`], optionally skipping the input gradient.
pub fn conv2d_backward_with<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    let k = params.kernel();
    check_conv_input(s, params, k / 2)?;
    let c_out = params.c_out();
    let expected = Shape::new(s.n, c_out, s.h, s.w);
    if grad_out.shape() != expected {
        return Err(GunError::shape("conv2d_backward grad_out", expected, grad_out.shape()));
    }
    let hw = s.plane();
    let inner = s.c * k * k;
    let w = params.weight.data();

    let mut grad_input = need_input.then(|| Tensor::zeros(s));

    // Per-sample weight gradients, reduced below in sample order so the
    // result does not depend on scheduling.
    let per_sample: Vec<Vec<T>> = {
        let work = |n: usize, gin: Option<&mut [T]>, cols: &mut Vec<T>, gcols: &mut Vec<T>| -> Vec<T> {
            let src = input.sample(n);
            let gout = grad_out.sample(n);
            let rhs: &[T] = if k == 1 {
                src
            } else {
                im2col(src, s.c, s.h, s.w, k, cols);
                cols
            };
            let mut gw = vec![T::zero(); c_out * inner];
            // gw[co, j] = sum_p gout[co, p] * cols[j, p]
            T::gemm(c_out, hw, inner, T::one(), gout, hw as isize, 1, rhs, 1, hw as isize, T::zero(), &mut gw, inner as isize, 1);
            if let Some(gin) = gin {
                if k == 1 {
                    // gin[ci, p] = sum_co w[co, ci] * gout[co, p]
                    T::gemm(inner, c_out, hw, T::one(), w, 1, inner as isize, gout, hw as isize, 1, T::zero(), gin, hw as isize, 1);
                } else {
                    gcols.resize(inner * hw, T::zero());
                    T::gemm(inner, c_out, hw, T::one(), w, 1, inner as isize, gout, hw as isize, 1, T::zero(), gcols, hw as isize, 1);
                    col2im(gcols, s.c, s.h, s.w, k, gin);
                }
            }
            gw
        };
        let init = || {
            let cols = if k == 1 { Vec::new() } else { vec![T::zero(); inner * hw] };
            (cols, Vec::new())
        };
        match grad_input.as_mut() {
            Some(gi) if s.n > 0 => gi
                .data_mut()
                .par_chunks_mut(s.sample())
                .enumerate()
                .map_init(init, |(cols, gcols), (n, gin)| work(n, Some(gin), cols, gcols))
                .collect(),
            _ => (0..s.n)
                .into_par_iter()
                .map_init(init, |(cols, gcols), n| work(n, None, cols, gcols))
                .collect(),
        }
    };

    let mut grad_w = vec![T::zero(); c_out * inner];
    for gw in &per_sample {
        for (acc, &v) in grad_w.iter_mut().zip(gw) {
            *acc = *acc + v;
        }
    }
    let mut grad_b = vec![T::zero(); c_out];
    for n in 0..s.n {
        for (co, gb) in grad_b.iter_mut().enumerate() {
            let plane = &grad_out.sample(n)[co * hw..(co + 1) * hw];
            *gb = plane.iter().fold(*gb, |acc, &v| acc + v);
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: Tensor::from_vec(params.weight.shape(), grad_w)?,
        bias: grad_b,
    })
}

/// Elementwise `max(0, v)`.
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where `input > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(GunError::shape("relu_backward", input.shape(), grad_out.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Zero-mean Gaussian weights with variance `2 / (c_in * k * k)` for a
/// `[c_out, c_in, k, k]` shape, deterministic in `seed`.
pub fn he_init<T: Scalar>(shape: impl Into<Shape>, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    he_init_with(shape.into(), &mut rng)
}

pub fn he_init_with<T: Scalar, R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Tensor<T> {
    let fan_in = (shape.c * shape.h * shape.w).max(1);
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let data = (0..shape.len()).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
