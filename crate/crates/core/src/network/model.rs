use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d_backward_with, conv2d_forward, relu_backward, relu_forward, ConvParams};
use crate::error::{GunError, Result};
use crate::layers::{bn_backward, bn_forward_stats, BatchNormState, BatchStats, BnCache, LayerKind, Mode, Upsampler};
use crate::network::schedule::ResolutionSchedule;
use crate::network::topology::GunTopology;
use crate::plane::Plane;
use crate::tensor::{Scalar, Shape, Tensor};

/// One convolution, optionally followed by batch normalization, then ReLU
/// for every kind except [`LayerKind::OutputConv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub kind: LayerKind,
    pub conv: ConvParams<T>,
    pub bn: Option<BatchNormState<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    fn relu(&self) -> bool {
        self.kind.has_activation()
    }
}

/// A gradual upsampling network and all of its learned state.
#[derive(Debug, Clone, PartialEq)]
pub struct GunModel<T> {
    topology: GunTopology,
    pub input: ConvBlock<T>,
    pub steps: Vec<Vec<ConvBlock<T>>>,
    pub output: ConvParams<T>,
}

/// A named view of one learnable parameter vector.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub values: &'a mut [T],
    /// Weight decay applies (convolution weights only).
    pub decay: bool,
}

/// Gradients of every learnable parameter, in [`GunModel::params_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub entries: Vec<(String, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Tensor<T>,
    bn: Option<BnCache<T>>,
    /// Input of the ReLU (BN output, or conv output without BN).
    pre_relu: Tensor<T>,
}

/// Everything a train-mode forward saves for [`GunModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    mode: Mode,
    upsamplers: Vec<Upsampler>,
    input: Option<BlockCache<T>>,
    steps: Vec<Vec<BlockCache<T>>>,
    output_input: Option<Tensor<T>>,
    /// Multiply-accumulates performed by each convolution, in layer order.
    pub macs: Vec<u64>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn total_macs(&self) -> u64 {
        self.macs.iter().sum()
    }
}

pub(crate) fn step_conv_name(step: usize, layer: usize) -> String {
    format!("step{}.conv{}", step + 1, layer + 1)
}

pub(crate) fn step_bn_name(step: usize, layer: usize) -> String {
    format!("step{}.bn{}", step + 1, layer + 1)
}

fn push_block<'a, T: Scalar>(conv: String, bnp: String, b: &'a mut ConvBlock<T>, out: &mut Vec<ParamMut<'a, T>>) {
    let ConvBlock { conv: params, bn, .. } = b;
    out.push(ParamMut {
        name: format!("{conv}.weight"),
        values: params.weight.data_mut(),
        decay: true,
    });
    out.push(ParamMut {
        name: format!("{conv}.bias"),
        values: &mut params.bias,
        decay: false,
    });
    if let Some(bn) = bn {
        out.push(ParamMut {
            name: format!("{bnp}.gamma"),
            values: &mut bn.gamma,
            decay: false,
        });
        out.push(ParamMut {
            name: format!("{bnp}.beta"),
            values: &mut bn.beta,
            decay: false,
        });
    }
}

/// Builds a He-initialized network, deterministic in `seed`.
pub fn build_gun<T: Scalar>(topology: GunTopology, seed: u64) -> Result<GunModel<T>> {
    topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = topology.channels;
    let input = ConvBlock {
        kind: LayerKind::InputConv,
        conv: ConvParams::he(1, c, 3, &mut rng),
        bn: topology.bn_on_input.then(|| BatchNormState::new(c)),
    };
    let steps = (0..topology.steps)
        .map(|_| {
            topology
                .step_kinds()
                .map(|kind| ConvBlock {
                    kind,
                    conv: ConvParams::he(c, c, kind.kernel().expect("conv kind"), &mut rng),
                    bn: Some(BatchNormState::new(c)),
                })
                .collect()
        })
        .collect();
    let output = ConvParams::he(c, 1, 3, &mut rng);
    Ok(GunModel {
        topology,
        input,
        steps,
        output,
    })
}

impl<T: Scalar> GunModel<T> {
    /// A network with all weights and biases zero.
    pub fn zeros(topology: GunTopology) -> Result<Self> {
        let mut m = build_gun(topology, 0)?;
        for p in m.params_mut() {
            if p.name.ends_with("weight") || p.name.ends_with("bias") {
                p.values.fill(T::zero());
            }
        }
        Ok(m)
    }

    pub fn topology(&self) -> &GunTopology {
        &self.topology
    }

    /// Sets epsilon and running-statistic retention on every BN layer.
    pub fn set_bn_hyper(&mut self, eps: f64, momentum: f64) {
        for bn in self.bn_states_mut() {
            bn.eps = T::from_f64_lossy(eps);
            bn.momentum = T::from_f64_lossy(momentum);
        }
    }

    pub fn bn_states_mut(&mut self) -> impl Iterator<Item = &mut BatchNormState<T>> {
        std::iter::once(&mut self.input)
            .chain(self.steps.iter_mut().flatten())
            .filter_map(|b| b.bn.as_mut())
    }

    pub fn bn_states(&self) -> impl Iterator<Item = &BatchNormState<T>> {
        std::iter::once(&self.input)
            .chain(self.steps.iter().flatten())
            .filter_map(|b| b.bn.as_ref())
    }

    /// All convolution blocks in forward order with their checkpoint prefixes
    /// (`conv`, `bn`).
    fn blocks_named(&self) -> Vec<(String, String, &ConvBlock<T>)> {
        let mut out = vec![("input".to_string(), "input.bn".to_string(), &self.input)];
        for (s, step) in self.steps.iter().enumerate() {
            for (l, b) in step.iter().enumerate() {
                out.push((step_conv_name(s, l), step_bn_name(s, l), b));
            }
        }
        out
    }

    /// Every learnable parameter in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        let GunModel { input, steps, output, .. } = self;
        push_block("input".into(), "input.bn".into(), input, &mut out);
        for (s, step) in steps.iter_mut().enumerate() {
            for (l, b) in step.iter_mut().enumerate() {
                push_block(step_conv_name(s, l), step_bn_name(s, l), b, &mut out);
            }
        }
        out.push(ParamMut {
            name: "output.weight".into(),
            values: output.weight.data_mut(),
            decay: true,
        });
        out.push(ParamMut {
            name: "output.bias".into(),
            values: &mut output.bias,
            decay: false,
        });
        out
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.clone().params_mut().iter().map(|p| p.values.len()).sum()
    }

    /// Every tensor that defines the model (parameters and running
    /// statistics) as `(name, dims, values)`, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = Vec::new();
        for (conv, bnp, b) in self.blocks_named() {
            out.push((format!("{conv}.weight"), b.conv.weight.shape().dims().to_vec(), b.conv.weight.data().to_vec()));
            out.push((format!("{conv}.bias"), vec![b.conv.bias.len()], b.conv.bias.clone()));
            if let Some(bn) = &b.bn {
                let c = bn.channels();
                out.push((format!("{bnp}.gamma"), vec![c], bn.gamma.clone()));
                out.push((format!("{bnp}.beta"), vec![c], bn.beta.clone()));
                out.push((format!("{bnp}.running_mean"), vec![c], bn.running_mean.clone()));
                out.push((format!("{bnp}.running_var"), vec![c], bn.running_var.clone()));
            }
        }
        out.push(("output.weight".into(), self.output.weight.shape().dims().to_vec(), self.output.weight.data().to_vec()));
        out.push(("output.bias".into(), vec![self.output.bias.len()], self.output.bias.clone()));
        if let Some(bn) = self.bn_states().next() {
            out.push(("bn.eps".into(), vec![1], vec![bn.eps]));
            out.push(("bn.momentum".into(), vec![1], vec![bn.momentum]));
        }
        out
    }

    /// Mutable access to the tensor named as in [`Self::named_tensors`].
    pub(crate) fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        // model-wide `bn.*` values are applied by the loader
        if name.starts_with("bn.") {
            return None;
        }
        let (prefix, field) = name.rsplit_once('.')?;
        if prefix == "output" {
            return match field {
                "weight" => Some(self.output.weight.data_mut()),
                "bias" => Some(&mut self.output.bias),
                _ => None,
            };
        }
        let (block, is_bn) = if prefix == "input" {
            (&mut self.input, false)
        } else if prefix == "input.bn" {
            (&mut self.input, true)
        } else {
            let (step, layer) = prefix.strip_prefix("step")?.split_once('.')?;
            let s: usize = step.parse().ok()?;
            let (is_bn, l) = if let Some(l) = layer.strip_prefix("conv") {
                (false, l)
            } else {
                (true, layer.strip_prefix("bn")?)
            };
            let l: usize = l.parse().ok()?;
            (self.steps.get_mut(s.checked_sub(1)?)?.get_mut(l.checked_sub(1)?)?, is_bn)
        };
        if is_bn {
            let bn = block.bn.as_mut()?;
            match field {
                "gamma" => Some(&mut bn.gamma),
                "beta" => Some(&mut bn.beta),
                "running_mean" => Some(&mut bn.running_mean),
                "running_var" => Some(&mut bn.running_var),
                _ => None,
            }
        } else {
            match field {
                "weight" => Some(block.conv.weight.data_mut()),
                "bias" => Some(&mut block.conv.bias),
                _ => None,
            }
        }
    }

    fn check_input(&self, y: &Tensor<T>, schedule: &ResolutionSchedule) -> Result<()> {
        let s = y.shape();
        if s.c != 1 || (s.h, s.w) != schedule.lr() {
            return Err(GunError::shape(
                "gun_forward input",
                format!("[n, 1, {}, {}]", schedule.lr().0, schedule.lr().1),
                s,
            ));
        }
        if schedule.steps() != self.topology.steps {
            return Err(GunError::shape("gun_forward schedule steps", self.topology.steps, schedule.steps()));
        }
        Ok(())
    }

    fn run(
        &self,
        y: &Tensor<T>,
        schedule: &ResolutionSchedule,
        mode: Mode,
        keep_cache: bool,
    ) -> Result<(Tensor<T>, ForwardCache<T>, Vec<BatchStats>)> {
        self.check_input(y, schedule)?;
        let mut stats = Vec::new();
        let mut macs = Vec::new();
        let block = |b: &ConvBlock<T>,
                     x: Tensor<T>,
                     stats: &mut Vec<BatchStats>,
                     macs: &mut Vec<u64>|
         -> Result<(Tensor<T>, Option<BlockCache<T>>)> {
            let z = conv2d_forward(&x, &b.conv, b.conv.kernel() / 2)?;
            macs.push(conv_macs(x.shape(), &b.conv));
            let (pre, bn_cache) = match &b.bn {
                Some(bn) => {
                    let (out, cache, st) = bn_forward_stats(&z, bn, mode)?;
                    stats.extend(st);
                    (out, Some(cache))
                }
                None => (z, None),
            };
            let out = if b.relu() { relu_forward(&pre) } else { pre.clone() };
            let cache = keep_cache.then_some(BlockCache {
                input: x,
                bn: bn_cache,
                pre_relu: pre,
            });
            Ok((out, cache))
        };

        let (mut x, input_cache) = block(&self.input, y.clone(), &mut stats, &mut macs)?;
        let mut upsamplers = Vec::with_capacity(self.steps.len());
        let mut step_caches = Vec::with_capacity(self.steps.len());
        for (step, &target) in self.steps.iter().zip(schedule.targets()) {
            let s = x.shape();
            let up = Upsampler::new((s.h, s.w), target, self.topology.backward_resample)?;
            x = up.forward(&x)?;
            upsamplers.push(up);
            let mut caches = Vec::with_capacity(step.len());
            for b in step {
                let (out, c) = block(b, x, &mut stats, &mut macs)?;
                x = out;
                caches.extend(c);
            }
            step_caches.push(caches);
        }
        let out = conv2d_forward(&x, &self.output, 1)?;
        macs.push(conv_macs(x.shape(), &self.output));
        let cache = ForwardCache {
            mode,
            upsamplers,
            input: input_cache,
            steps: step_caches,
            output_input: keep_cache.then_some(x),
            macs,
        };
        Ok((out, cache, stats))
    }

    /// Forward pass. Train mode uses batch statistics and updates the running
    /// BN statistics; both modes return a cache (only a train cache can be
    /// differentiated).
    pub fn forward(
        &mut self,
        y: &Tensor<T>,
        schedule: &ResolutionSchedule,
        mode: Mode,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (out, cache, stats) = self.run(y, schedule, mode, mode == Mode::Train)?;
        for (bn, st) in self.bn_states_mut().zip(&stats) {
            bn.update_running(st);
        }
        Ok((out, cache))
    }

    /// Inference-mode forward; read-only on the model.
    pub fn infer(&self, y: &Tensor<T>, schedule: &ResolutionSchedule) -> Result<Tensor<T>> {
        Ok(self.run(y, schedule, Mode::Infer, false)?.0)
    }

    /// Super-resolves one plane using the topology's magnification.
    pub fn infer_plane(&self, lr: &Plane<T>) -> Result<Plane<T>> {
        let schedule = self.topology.schedule_for(lr.size())?;
        let (h, w) = lr.size();
        let x = Tensor::from_vec([1, 1, h, w], lr.data().to_vec())?;
        let out = self.infer(&x, &schedule)?;
        let (hh, ww) = schedule.hr();
        Plane::new(hh, ww, out.into_vec())
    }

    /// Gradients of `sum(grad_out * forward(y))` with respect to every
    /// learnable parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.mode != Mode::Train {
            return Err(GunError::BatchNorm("backward needs a train-mode forward cache".into()));
        }
        let (Some(input_cache), Some(out_in)) = (&cache.input, &cache.output_input) else {
            return Err(GunError::InvalidArgument("forward cache is missing saved activations".into()));
        };
        let expected = Shape::new(out_in.shape().n, 1, out_in.shape().h, out_in.shape().w);
        if grad_out.shape() != expected {
            return Err(GunError::shape("gun_backward grad_out", expected, grad_out.shape()));
        }

        let out_grads = conv2d_backward_with(out_in, &self.output, grad_out, true)?;
        let mut g = out_grads.input.expect("requested");
        let mut step_grads: Vec<Vec<Vec<(String, Vec<T>)>>> = vec![Vec::new(); self.steps.len()];
        for (si, step) in self.steps.iter().enumerate().rev() {
            let caches = &cache.steps[si];
            let mut per_layer = Vec::with_capacity(step.len());
            for (li, b) in step.iter().enumerate().rev() {
                let (gin, entries) = block_backward(b, &caches[li], &g, true, &step_conv_name(si, li), &step_bn_name(si, li))?;
                g = gin.expect("requested");
                per_layer.push(entries);
            }
            per_layer.reverse();
            step_grads[si] = per_layer;
            g = cache.upsamplers[si].backward(&g)?;
        }
        let (_, input_entries) = block_backward(&self.input, input_cache, &g, false, "input", "input.bn")?;

        let mut entries = input_entries;
        entries.extend(step_grads.into_iter().flatten().flatten());
        entries.push(("output.weight".into(), out_grads.weight.into_vec()));
        entries.push(("output.bias".into(), out_grads.bias));
        Ok(Gradients { entries })
    }

    /// Layer sequence for a schedule.
    pub fn layers(&self, schedule: &ResolutionSchedule) -> Vec<LayerKind> {
        self.topology.layers(schedule)
    }
}

fn conv_macs<T: Scalar>(input: Shape, p: &ConvParams<T>) -> u64 {
    let k = p.kernel() as u64;
    (input.n * input.h * input.w) as u64 * (p.c_out() * p.c_in()) as u64 * k * k
}

#[allow(clippy::type_complexity)]
fn block_backward<T: Scalar>(
    b: &ConvBlock<T>,
    cache: &BlockCache<T>,
    grad: &Tensor<T>,
    need_input: bool,
    conv_name: &str,
    bn_name: &str,
) -> Result<(Option<Tensor<T>>, Vec<(String, Vec<T>)>)> {
    let g = if b.relu() {
        relu_backward(&cache.pre_relu, grad)?
    } else {
        grad.clone()
    };
    let mut bn_entries = Vec::new();
    let g = match &cache.bn {
        Some(bn_cache) => {
            let (gi, gg, gb) = bn_backward(bn_cache, &g)?;
            bn_entries.push((format!("{bn_name}.gamma"), gg));
            bn_entries.push((format!("{bn_name}.beta"), gb));
            gi
        }
        None => g,
    };
    let cg = conv2d_backward_with(&cache.input, &b.conv, &g, need_input)?;
    let mut entries = vec![(format!("{conv_name}.weight"), cg.weight.into_vec()), (format!("{conv_name}.bias"), cg.bias)];
    entries.extend(bn_entries);
    Ok((cg.input, entries))
}

/// Forward pass of `model` on `y` (see [`GunModel::forward`]).
pub fn gun_forward<T: Scalar>(
    model: &mut GunModel<T>,
    y: &Tensor<T>,
    schedule: &ResolutionSchedule,
    mode: Mode,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    model.forward(y, schedule, mode)
}

/// Backward pass of `model` (see [`GunModel::backward`]).
pub fn gun_backward<T: Scalar>(model: &GunModel<T>, cache: &ForwardCache<T>, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
    model.backward(cache, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::BackwardResample;
    use crate::network::topology::Magnification;

    fn tiny() -> GunTopology {
        GunTopology {
            magnification: Magnification::Explicit { lr: (5, 5), hr: (8, 8) },
            steps: 2,
            depth: 2,
            channels: 4,
            bn_on_input: true,
            backward_resample: BackwardResample::Adjoint,
        }
    }

    #[test]
    fn default_four_times_has_38_convs() {
        let t = GunTopology::for_scale(4);
        assert_eq!(t.conv_layers(), 38);
        let m = build_gun::<f32>(t, 1).unwrap();
        assert_eq!(m.steps.len(), 9);
        assert!(m.steps.iter().all(|s| s.len() == 4));
        assert_eq!(m.input.conv.weight.shape().dims(), [64, 1, 3, 3]);
        assert_eq!(m.steps[0][3].conv.weight.shape().dims(), [64, 64, 1, 1]);
        assert_eq!(m.steps[0][0].conv.weight.shape().dims(), [64, 64, 3, 3]);
        assert_eq!(m.output.weight.shape().dims(), [1, 64, 3, 3]);
        assert_eq!(m.output.bias.len(), 1);
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_gun::<f32>(tiny(), 9).unwrap();
        let b = build_gun::<f32>(tiny(), 9).unwrap();
        let c = build_gun::<f32>(tiny(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn layer_sequence_matches_topology() {
        let m = build_gun::<f32>(tiny(), 1).unwrap();
        let sched = m.topology().schedule_for((5, 5)).unwrap();
        let kinds = m.layers(&sched);
        assert_eq!(
            kinds,
            vec![
                LayerKind::InputConv,
                LayerKind::Upsample { h: 6, w: 6 },
                LayerKind::StepConv3,
                LayerKind::StepConv1,
                LayerKind::Upsample { h: 8, w: 8 },
                LayerKind::StepConv3,
                LayerKind::StepConv1,
                LayerKind::OutputConv,
            ]
        );
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = GunModel::<f32>::zeros(tiny()).unwrap();
        let sched = m.topology().schedule_for((5, 5)).unwrap();
        let y = Tensor::from_fn([2, 1, 5, 5], |[n, _, y, x]| (n + y * x) as f32 * 0.1);
        let (out, _) = m.forward(&y, &sched, Mode::Train).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 1, 8, 8));
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(m.infer(&y, &sched).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients_with_matching_shapes() {
        let mut m = build_gun::<f64>(tiny(), 3).unwrap();
        let sched = m.topology().schedule_for((5, 5)).unwrap();
        let y = Tensor::from_fn([2, 1, 5, 5], |[n, _, y, x]| ((n * 7 + y * 3 + x) % 5) as f64 / 5.0);
        let (out, cache) = m.forward(&y, &sched, Mode::Train).unwrap();
        let g = m.backward(&cache, &Tensor::zeros(out.shape())).unwrap();
        let mut clone = m.clone();
        let params = clone.params_mut();
        assert_eq!(params.len(), g.entries.len());
        for (p, (name, v)) in params.iter().zip(&g.entries) {
            assert_eq!(&p.name, name);
            assert_eq!(p.values.len(), v.len());
            assert!(v.iter().all(|&x| x == 0.0), "{name}");
        }
    }

    #[test]
    fn infer_cache_and_bad_input_are_rejected() {
        let mut m = build_gun::<f32>(tiny(), 3).unwrap();
        let sched = m.topology().schedule_for((5, 5)).unwrap();
        let y = Tensor::zeros([2, 1, 5, 5]);
        let (out, cache) = m.forward(&y, &sched, Mode::Infer).unwrap();
        assert!(m.backward(&cache, &out).is_err());
        assert!(m.forward(&Tensor::zeros([2, 1, 6, 5]), &sched, Mode::Train).is_err());
    }

    #[test]
    fn infer_does_not_touch_running_stats() {
        let mut m = build_gun::<f32>(tiny(), 3).unwrap();
        let sched = m.topology().schedule_for((5, 5)).unwrap();
        let y = Tensor::from_fn([2, 1, 5, 5], |[_, _, y, x]| (y + x) as f32 * 0.1);
        let before = m.clone();
        m.forward(&y, &sched, Mode::Infer).unwrap();
        assert_eq!(m, before);
        m.forward(&y, &sched, Mode::Train).unwrap();
        assert_ne!(m, before);
    }

    #[test]
    fn tensor_lookup_covers_every_named_tensor() {
        let mut m = build_gun::<f32>(tiny(), 3).unwrap();
        for (name, _, values) in m.named_tensors() {
            if name.starts_with("bn.") {
                continue;
            }
            let slot = m.tensor_mut(&name).unwrap_or_else(|| panic!("{name}"));
            assert_eq!(slot.len(), values.len());
        }
        assert!(m.tensor_mut("step9.conv1.weight").is_none());
        assert!(m.tensor_mut("step1.bn1.bogus").is_none());
    }
}
