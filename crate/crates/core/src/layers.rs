//! Batch normalization, the bicubic upsampling layer, and the layer
//! vocabulary the network is built from.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{GunError, Result};
use crate::resample::ResamplePlan;
use crate::tensor::{Scalar, Shape, Tensor};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    /// Retention of the running statistics: `run <- m * run + (1 - m) * batch`.
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM)
    }

    pub fn with_hyper(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_f64_lossy(eps),
            momentum: T::from_f64_lossy(momentum),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running averages.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let keep = self.momentum.as_f64();
        for ch in 0..self.channels() {
            self.running_mean[ch] = T::from_f64_lossy(keep * self.running_mean[ch].as_f64() + (1.0 - keep) * stats.mean[ch]);
            self.running_var[ch] = T::from_f64_lossy(keep * self.running_var[ch].as_f64() + (1.0 - keep) * stats.unbiased_var[ch]);
        }
    }
}

/// Per-channel statistics of one train-mode batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

/// Values saved by [`bn_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    mode: Mode,
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
    gamma: Vec<T>,
}

fn channel_sums<T: Scalar>(t: &Tensor<T>, f: impl Fn(usize, T) -> f64 + Sync) -> Vec<f64> {
    let s = t.shape();
    (0..s.c)
        .map(|c| {
            let mut acc = 0.0;
            for n in 0..s.n {
                for &v in t.plane(n, c) {
                    acc += f(c, v);
                }
            }
            acc
        })
        .collect()
}

/// Normalizes per channel over `(n, h, w)` then applies `gamma * x + beta`.
///
/// Train mode uses the batch statistics and folds them into the running
/// averages; infer mode reads the running statistics only.
pub fn bn_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (out, cache, stats) = bn_forward_stats(input, state, mode)?;
    if let Some(stats) = stats {
        state.update_running(&stats);
    }
    Ok((out, cache))
}

/// [`bn_forward`] without touching the running statistics; train mode
/// returns the batch statistics for the caller to fold in.
pub fn bn_forward_stats<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>, Option<BatchStats>)> {
    let s = input.shape();
    let c = state.channels();
    if s.c != c || state.beta.len() != c || state.running_mean.len() != c || state.running_var.len() != c {
        return Err(GunError::shape("bn_forward channels", c, s.c));
    }
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let m = s.n * s.plane();
            if m < 2 {
                return Err(GunError::BatchNorm(format!(
                    "train-mode batch of {m} value(s) per channel; variance is undefined"
                )));
            }
            let mf = m as f64;
            let mean: Vec<f64> = channel_sums(input, |_, v| v.as_f64()).into_iter().map(|v| v / mf).collect();
            let var: Vec<f64> = channel_sums(input, |c, v| (v.as_f64() - mean[c]).powi(2))
                .into_iter()
                .map(|v| v / mf)
                .collect();
            let stats = BatchStats {
                mean: mean.clone(),
                unbiased_var: var.iter().map(|v| v * mf / (mf - 1.0)).collect(),
            };
            (mean, var, Some(stats))
        }
        Mode::Infer => (
            state.running_mean.iter().map(|v| v.as_f64()).collect(),
            state.running_var.iter().map(|v| v.as_f64().max(0.0)).collect(),
            None,
        ),
    };
    let eps = state.eps.as_f64();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let hw = s.plane();
    if hw > 0 {
        normalized
            .data_mut()
            .par_chunks_mut(hw)
            .zip(out.data_mut().par_chunks_mut(hw))
            .zip(input.data().par_chunks(hw))
            .enumerate()
            .for_each(|(i, ((xn, y), x))| {
                let ch = i % c;
                let (mu, is) = (T::from_f64_lossy(mean[ch]), T::from_f64_lossy(inv_std[ch]));
                let (g, b) = (state.gamma[ch], state.beta[ch]);
                for ((xn, y), &x) in xn.iter_mut().zip(y.iter_mut()).zip(x) {
                    *xn = (x - mu) * is;
                    *y = g * *xn + b;
                }
            });
    }
    let cache = BnCache {
        mode,
        normalized,
        inv_std,
        gamma: state.gamma.clone(),
    };
    Ok((out, cache, stats))
}

/// Analytic gradients through the batch statistics of a train-mode forward.
pub fn bn_backward<T: Scalar>(cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if cache.mode != Mode::Train {
        return Err(GunError::BatchNorm("backward through an inference-mode forward".into()));
    }
    let s = cache.normalized.shape();
    if grad_out.shape() != s {
        return Err(GunError::shape("bn_backward grad_out", s, grad_out.shape()));
    }
    let m = (s.n * s.plane()) as f64;
    let xhat = &cache.normalized;
    let mut sum_g = vec![0.0; s.c];
    let mut sum_gx = vec![0.0; s.c];
    for n in 0..s.n {
        for ch in 0..s.c {
            for (&g, &xh) in grad_out.plane(n, ch).iter().zip(xhat.plane(n, ch)) {
                sum_g[ch] += g.as_f64();
                sum_gx[ch] += g.as_f64() * xh.as_f64();
            }
        }
    }
    let grad_beta: Vec<T> = sum_g.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let grad_gamma: Vec<T> = sum_gx.iter().map(|&v| T::from_f64_lossy(v)).collect();

    // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
    let mut grad_in = Tensor::zeros(s);
    let hw = s.plane();
    if hw > 0 {
        grad_in
            .data_mut()
            .par_chunks_mut(hw)
            .zip(grad_out.data().par_chunks(hw))
            .zip(xhat.data().par_chunks(hw))
            .enumerate()
            .for_each(|(i, ((dx, dy), xh))| {
                let ch = i % s.c;
                let scale = cache.gamma[ch].as_f64() * cache.inv_std[ch] / m;
                let (sg, sgx) = (sum_g[ch], sum_gx[ch]);
                for ((dx, &dy), &xh) in dx.iter_mut().zip(dy).zip(xh) {
                    *dx = T::from_f64_lossy(scale * (m * dy.as_f64() - sg - xh.as_f64() * sgx));
                }
            });
    }
    Ok((grad_in, grad_gamma, grad_beta))
}

/// How the upsampling layer routes gradients back to the smaller grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardResample {
    /// Exact transpose of the forward interpolation.
    #[default]
    Adjoint,
    /// Independent bicubic downsample of the gradient.
    Plain,
}

impl BackwardResample {
    pub fn as_str(self) -> &'static str {
        match self {
            BackwardResample::Adjoint => "adjoint",
            BackwardResample::Plain => "plain",
        }
    }
}

impl fmt::Display for BackwardResample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackwardResample {
    type Err = GunError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adjoint" => Ok(BackwardResample::Adjoint),
            "plain" => Ok(BackwardResample::Plain),
            other => Err(GunError::InvalidArgument(format!(
                "backward_resample must be adjoint or plain, got {other:?}"
            ))),
        }
    }
}

/// Parameter-free bicubic upsampling between two fixed plane sizes.
#[derive(Debug, Clone)]
pub struct Upsampler {
    forward: ResamplePlan,
    backward: Option<ResamplePlan>,
}

impl Upsampler {
    pub fn new(src: (usize, usize), target: (usize, usize), mode: BackwardResample) -> Result<Self> {
        if target.0 < src.0 || target.1 < src.1 {
            return Err(GunError::InvalidArgument(format!(
                "upsampling layer cannot shrink {}x{} to {}x{}",
                src.0, src.1, target.0, target.1
            )));
        }
        let backward = match mode {
            BackwardResample::Adjoint => None,
            BackwardResample::Plain => Some(ResamplePlan::new(target, src)?),
        };
        Ok(Upsampler {
            forward: ResamplePlan::new(src, target)?,
            backward,
        })
    }

    pub fn src(&self) -> (usize, usize) {
        self.forward.src()
    }

    pub fn target(&self) -> (usize, usize) {
        self.forward.dst()
    }

    pub fn forward<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let s = input.shape();
        if (s.h, s.w) != self.src() {
            return Err(GunError::shape("upsample_forward", format!("{:?} planes", self.src()), s));
        }
        let (th, tw) = self.target();
        let mut out = Tensor::zeros([s.n, s.c, th, tw]);
        map_planes(input, &mut out, |src, dst, scratch| self.forward.apply(src, dst, scratch));
        Ok(out)
    }

    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let s = grad_out.shape();
        if (s.h, s.w) != self.target() {
            return Err(GunError::shape("upsample_backward", format!("{:?} planes", self.target()), s));
        }
        let (h, w) = self.src();
        let mut out = Tensor::zeros([s.n, s.c, h, w]);
        match &self.backward {
            None => map_planes(grad_out, &mut out, |g, dst, scratch| self.forward.apply_adjoint(g, dst, scratch)),
            Some(plan) => map_planes(grad_out, &mut out, |g, dst, scratch| plan.apply(g, dst, scratch)),
        }
        Ok(out)
    }
}

fn map_planes<T: Scalar>(input: &Tensor<T>, out: &mut Tensor<T>, f: impl Fn(&[T], &mut [T], &mut Vec<T>) + Sync) {
    let (ip, op) = (input.shape().plane(), out.shape().plane());
    if ip == 0 || op == 0 {
        return;
    }
    out.data_mut()
        .par_chunks_mut(op)
        .zip(input.data().par_chunks(ip))
        .for_each_init(Vec::new, |scratch, (dst, src)| f(src, dst, scratch));
}

/// Bicubic upsampling of every plane to `target`.
pub fn upsample_forward<T: Scalar>(input: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let s = input.shape();
    Upsampler::new((s.h, s.w), target, BackwardResample::Adjoint)?.forward(input)
}

/// Gradient of [`upsample_forward`] back onto `src` sized planes.
pub fn upsample_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    src: (usize, usize),
    mode: BackwardResample,
) -> Result<Tensor<T>> {
    let s = grad_out.shape();
    Upsampler::new(src, (s.h, s.w), mode)?.backward(grad_out)
}

/// The kinds of layer a network is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3x3 convolution from the single input plane to the feature maps.
    InputConv,
    /// 3x3 feature convolution inside an upsampling step.
    StepConv3,
    /// 1x1 convolution closing an upsampling step.
    StepConv1,
    /// Bicubic upsampling to the given `(h, w)`.
    Upsample { h: usize, w: usize },
    /// Final affine 3x3 convolution back to one plane.
    OutputConv,
}

impl LayerKind {
    pub fn kernel(self) -> Option<usize> {
        match self {
            LayerKind::InputConv | LayerKind::StepConv3 | LayerKind::OutputConv => Some(3),
            LayerKind::StepConv1 => Some(1),
            LayerKind::Upsample { .. } => None,
        }
    }

    pub fn has_params(self) -> bool {
        self.kernel().is_some()
    }

    /// Whether a BN + ReLU pair follows the convolution. The input layer's
    /// BN is additionally subject to the topology's `bn_on_input` flag.
    pub fn has_activation(self) -> bool {
        matches!(self, LayerKind::InputConv | LayerKind::StepConv3 | LayerKind::StepConv1)
    }
}

/// Shape of a tensor after [`LayerKind`] is applied to `input`.
pub fn output_shape(kind: LayerKind, input: Shape, channels_out: usize) -> Shape {
    match kind {
        LayerKind::Upsample { h, w } => Shape::new(input.n, input.c, h, w),
        _ => Shape::new(input.n, channels_out, input.h, input.w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 10_000) as f64 / 5_000.0 - 1.0
        }
    }

    #[test]
    fn train_mode_standardizes() {
        let mut r = pseudo(7);
        let x = Tensor::<f64>::from_fn([3, 2, 4, 4], |_| 3.0 * r() + 1.5);
        let mut st = BatchNormState::new(2);
        let (y, _) = bn_forward(&x, &mut st, Mode::Train).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut r = pseudo(9);
        let x = Tensor::<f32>::from_fn([2, 2, 3, 3], |_| r() as f32);
        let mut st = BatchNormState::new(2);
        st.gamma = vec![0.0, 0.0];
        st.beta = vec![0.25, -1.0];
        let (y, _) = bn_forward(&x, &mut st, Mode::Train).unwrap();
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| v == 0.25));
            assert!(y.plane(n, 1).iter().all(|&v| v == -1.0));
        }
    }

    #[test]
    fn running_stats_follow_retention() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let mut st = BatchNormState::new(1);
        bn_forward(&x, &mut st, Mode::Train).unwrap();
        assert!((st.running_mean[0] - 0.2).abs() < 1e-12);
        // batch variance 1 (biased), unbiased 2
        assert!((st.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn single_value_batch_rejected_in_train_mode() {
        let x = Tensor::<f32>::zeros([1, 3, 1, 1]);
        let mut st = BatchNormState::new(3);
        assert!(matches!(bn_forward(&x, &mut st, Mode::Train), Err(GunError::BatchNorm(_))));
        assert!(bn_forward(&x, &mut st, Mode::Infer).is_ok());
    }

    #[test]
    fn infer_cache_cannot_backprop() {
        let x = Tensor::<f32>::zeros([2, 1, 2, 2]);
        let mut st = BatchNormState::new(1);
        let (_, cache) = bn_forward(&x, &mut st, Mode::Infer).unwrap();
        assert!(bn_backward(&cache, &x).is_err());
    }

    #[test]
    fn zero_grad_and_beta_grad() {
        let mut r = pseudo(3);
        let x = Tensor::<f64>::from_fn([2, 2, 3, 3], |_| r());
        let mut st = BatchNormState::new(2);
        let (_, cache) = bn_forward(&x, &mut st, Mode::Train).unwrap();
        let (gi, gg, gb) = bn_backward(&cache, &Tensor::zeros(x.shape())).unwrap();
        assert!(gi.data().iter().chain(&gg).chain(&gb).all(|&v| v == 0.0));
        let g = Tensor::<f64>::from_fn(x.shape(), |_| r());
        let (_, _, gb) = bn_backward(&cache, &g).unwrap();
        for c in 0..2 {
            let want: f64 = (0..2).map(|n| g.plane(n, c).iter().sum::<f64>()).sum();
            assert!((gb[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn infer_mode_is_batch_size_invariant() {
        let mut r = pseudo(5);
        let x = Tensor::<f32>::from_fn([4, 3, 3, 3], |_| r() as f32);
        let mut st = BatchNormState::<f32>::new(3);
        st.running_mean = vec![0.1, -0.2, 0.3];
        st.running_var = vec![0.5, 2.0, 1.5];
        st.gamma = vec![1.5, 0.5, -1.0];
        st.beta = vec![0.0, 0.1, 0.2];
        let (batched, _) = bn_forward(&x, &mut st, Mode::Infer).unwrap();
        let singles: Vec<_> = (0..4)
            .map(|n| bn_forward(&x.slice_batch(n..n + 1), &mut st, Mode::Infer).unwrap().0)
            .collect();
        let joined = Tensor::concat_batch(&singles).unwrap();
        for (a, b) in batched.data().iter().zip(joined.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_identity_and_shape() {
        let mut r = pseudo(1);
        let x = Tensor::<f32>::from_fn([1, 2, 4, 4], |_| r() as f32);
        assert_eq!(upsample_forward(&x, (4, 4)).unwrap(), x);
        assert_eq!(upsample_backward(&x, (4, 4), BackwardResample::Adjoint).unwrap(), x);
        let big = Tensor::<f32>::zeros([1, 64, 12, 12]);
        assert_eq!(upsample_forward(&big, (15, 15)).unwrap().shape(), Shape::new(1, 64, 15, 15));
        assert!(upsample_forward(&big, (11, 15)).is_err());
    }

    #[test]
    fn plain_backward_is_a_downsample() {
        let g = Tensor::<f64>::full([1, 1, 8, 8], 2.0);
        let adj = upsample_backward(&g, (4, 4), BackwardResample::Adjoint).unwrap();
        let plain = upsample_backward(&g, (4, 4), BackwardResample::Plain).unwrap();
        assert!(plain.data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
        // the adjoint accumulates: total mass is preserved instead
        assert!((adj.sum() - g.sum()).abs() < 1e-9);
    }

    #[test]
    fn layer_kind_topology_facts() {
        assert!(!LayerKind::OutputConv.has_activation());
        assert!(!LayerKind::Upsample { h: 2, w: 2 }.has_params());
        assert_eq!(LayerKind::StepConv1.kernel(), Some(1));
        assert_eq!("plain".parse::<BackwardResample>().unwrap(), BackwardResample::Plain);
        assert!("bogus".parse::<BackwardResample>().is_err());
    }
}
