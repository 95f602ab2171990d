//! MSE loss, momentum SGD and the staged training driver.

use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::curriculum::CurriculumPlan;
use crate::data::patches::PatchPair;
use crate::error::{GunError, Result};
use crate::layers::Mode;
use crate::metrics::{bicubic_baseline, psnr};
use crate::network::model::{Gradients, GunModel, ParamMut};
use crate::network::schedule::resolution_schedule;
use crate::plane::Plane;
use crate::tensor::{Scalar, Tensor};

/// Batch-averaged squared L2 error: `(1/N) sum_n ||pred_n - target_n||^2`,
/// and its gradient `2 (pred - target) / N`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(GunError::shape("mse_loss", target.shape(), pred.shape()));
    }
    let n = pred.shape().n.max(1) as f64;
    let scale = T::from_f64_lossy(2.0 / n);
    let mut sum = 0.0;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    Ok((sum / n, Tensor::from_vec(pred.shape(), grad)?))
}

/// Velocity buffers and hyperparameters of momentum SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub velocity: Vec<Vec<T>>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(model: &mut GunModel<T>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimState {
            velocity: model.params_mut().iter().map(|p| vec![T::zero(); p.values.len()]).collect(),
            lr,
            momentum,
            weight_decay,
            step: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.iter().flatten().all(|v| v.is_finite())
    }
}

/// `v <- momentum * v - lr * (g + decay * p)`, `p <- p + v`, with decay on
/// convolution weights only.
pub fn sgd_momentum_step<T: Scalar>(params: &mut [ParamMut<'_, T>], grads: &Gradients<T>, optim: &mut OptimState<T>) -> Result<()> {
    if params.len() != grads.entries.len() || params.len() != optim.velocity.len() {
        return Err(GunError::shape(
            "sgd_momentum_step",
            format!("{} parameters", params.len()),
            format!("{} gradients / {} velocities", grads.entries.len(), optim.velocity.len()),
        ));
    }
    let lr = T::from_f64_lossy(optim.lr);
    let mom = T::from_f64_lossy(optim.momentum);
    for ((p, (name, g)), v) in params.iter_mut().zip(&grads.entries).zip(optim.velocity.iter_mut()) {
        if &p.name != name || p.values.len() != g.len() || v.len() != g.len() {
            return Err(GunError::shape("sgd_momentum_step", &p.name, name));
        }
        let decay = T::from_f64_lossy(if p.decay { optim.weight_decay } else { 0.0 });
        for ((w, &gi), vi) in p.values.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mom * *vi - lr * (gi + decay * *w);
            *w = *w + *vi;
        }
    }
    optim.step += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplier applied to the learning rate at each decay point.
    pub lr_decay: f64,
    /// Zero-based stage indices on entry to which the learning rate decays.
    pub decay_stages: Vec<usize>,
    pub epochs_per_stage: usize,
    /// Optional cap on iterations within one stage.
    pub max_iters_per_stage: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay: 0.1,
            decay_stages: vec![2, 4],
            epochs_per_stage: 3,
            max_iters_per_stage: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(GunError::InvalidArgument(format!(
                "batch_size must be at least 2 for batch statistics, got {}",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(GunError::InvalidArgument(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Held-out LR/HR planes scored by PSNR after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub items: Vec<(String, Plane<f32>, Plane<f32>)>,
    pub scale: usize,
    pub shave: usize,
}

impl ValidationSet {
    /// Mean PSNR of the model's (clipped) reconstructions.
    pub fn model_psnr(&self, model: &GunModel<f32>) -> Result<f64> {
        let mut total = 0.0;
        for (_, lr, hr) in &self.items {
            let sr = model.infer_plane(lr)?.clamp01();
            total += psnr(&sr, hr, self.shave)?;
        }
        Ok(total / self.items.len().max(1) as f64)
    }

    pub fn bicubic_psnr(&self) -> Result<f64> {
        let mut total = 0.0;
        for (_, lr, hr) in &self.items {
            total += psnr(&bicubic_baseline(lr, self.scale)?, hr, self.shave)?;
        }
        Ok(total / self.items.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub lambda: f64,
    pub samples: usize,
    pub lr: f64,
    pub epoch_losses: Vec<f64>,
    /// Validation PSNR after each epoch, when a validation set is given.
    pub epoch_val_psnr: Vec<f64>,
    pub iterations: usize,
}

impl StageReport {
    pub fn final_val_psnr(&self) -> Option<f64> {
        self.epoch_val_psnr.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    pub bicubic_val_psnr: Option<f64>,
    pub iterations: usize,
}

impl TrainReport {
    /// `(label, validation PSNR)` rows: the bicubic baseline, then one row
    /// per stage labelled by its lambda.
    pub fn table_rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = vec![("Bicubic".to_string(), self.bicubic_val_psnr)];
        rows.extend(self.stages.iter().map(|s| (format!("{}", s.lambda), s.final_val_psnr())));
        rows
    }
}

/// Header of the per-epoch loss log.
pub const LOSS_LOG_HEADER: &str = "stage,lambda,epoch,mean_loss,val_psnr";

fn gather(pairs: &[PatchPair], batch: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = &pairs[batch[0]];
    let (lh, lw) = first.lr.size();
    let (hh, hw) = first.hr.size();
    let mut x = Vec::with_capacity(batch.len() * lh * lw);
    let mut y = Vec::with_capacity(batch.len() * hh * hw);
    for &i in batch {
        let p = &pairs[i];
        if p.lr.size() != (lh, lw) || p.hr.size() != (hh, hw) {
            return Err(GunError::shape(
                "training batch",
                format!("{lh}x{lw} / {hh}x{hw} patches"),
                format!("{:?} / {:?}", p.lr.size(), p.hr.size()),
            ));
        }
        x.extend_from_slice(p.lr.data());
        y.extend_from_slice(p.hr.data());
    }
    Ok((
        Tensor::from_vec([batch.len(), 1, lh, lw], x)?,
        Tensor::from_vec([batch.len(), 1, hh, hw], y)?,
    ))
}

/// Mutable state threaded through the stages of one run.
pub struct Trainer<'a> {
    pub config: &'a TrainConfig,
    pub rng: ChaCha8Rng,
    /// Iterations completed over the whole run.
    pub iteration: usize,
    pub log: Option<&'a mut dyn Write>,
    pub validation: Option<&'a ValidationSet>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig) -> Self {
        Trainer {
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            iteration: 0,
            log: None,
            validation: None,
        }
    }

    pub fn with_log(mut self, log: &'a mut dyn Write) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_validation(mut self, v: &'a ValidationSet) -> Self {
        self.validation = Some(v);
        self
    }

    /// Runs one stage over `indices` of `pairs`: shuffled epochs of full
    /// mini-batches (a trailing partial batch is dropped).
    pub fn train_stage(
        &mut self,
        model: &mut GunModel<f32>,
        pairs: &[PatchPair],
        indices: &[usize],
        optim: &mut OptimState<f32>,
        stage: usize,
        lambda: f64,
        epochs: usize,
    ) -> Result<StageReport> {
        let cfg = self.config;
        cfg.validate()?;
        if indices.is_empty() {
            return Err(GunError::InvalidArgument(format!("stage {stage} has no samples")));
        }
        if indices.len() < cfg.batch_size {
            return Err(GunError::InvalidArgument(format!(
                "stage {stage} (lambda {lambda}) has {} samples, fewer than batch size {}",
                indices.len(),
                cfg.batch_size
            )));
        }
        let first = &pairs[indices[0]];
        let schedule = resolution_schedule(first.lr.size(), first.hr.size(), model.topology().steps)?;
        let mut order = indices.to_vec();
        let mut report = StageReport {
            lambda,
            samples: indices.len(),
            lr: optim.lr,
            epoch_losses: Vec::new(),
            epoch_val_psnr: Vec::new(),
            iterations: 0,
        };
        let cap = cfg.max_iters_per_stage.unwrap_or(usize::MAX);
        'epochs: for epoch in 0..epochs {
            if report.iterations >= cap {
                break;
            }
            order.shuffle(&mut self.rng);
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for batch in order.chunks_exact(cfg.batch_size) {
                if report.iterations >= cap {
                    break;
                }
                let (x, y) = gather(pairs, batch)?;
                let (pred, cache) = model.forward(&x, &schedule, Mode::Train)?;
                let (loss, grad) = mse_loss(&pred, &y)?;
                if !loss.is_finite() {
                    return Err(GunError::NonFinite {
                        iteration: self.iteration,
                        what: "loss".into(),
                    });
                }
                let grads = model.backward(&cache, &grad)?;
                if !grads.is_finite() {
                    return Err(GunError::NonFinite {
                        iteration: self.iteration,
                        what: "gradients".into(),
                    });
                }
                sgd_momentum_step(&mut model.params_mut(), &grads, optim)?;
                if !optim.is_finite() {
                    return Err(GunError::NonFinite {
                        iteration: self.iteration,
                        what: "velocity".into(),
                    });
                }
                debug!("iter {} stage {stage} loss {loss:.6}", self.iteration);
                loss_sum += loss;
                batches += 1;
                report.iterations += 1;
                self.iteration += 1;
            }
            if batches == 0 {
                break 'epochs;
            }
            let mean = loss_sum / batches as f64;
            report.epoch_losses.push(mean);
            let val = match self.validation {
                Some(v) => {
                    let p = v.model_psnr(model)?;
                    report.epoch_val_psnr.push(p);
                    Some(p)
                }
                None => None,
            };
            info!(
                "stage {} lambda {lambda} epoch {} loss {mean:.6}{}",
                stage + 1,
                epoch + 1,
                val.map(|p| format!(" val {p:.4} dB")).unwrap_or_default()
            );
            if let Some(log) = self.log.as_deref_mut() {
                writeln!(
                    log,
                    "{},{},{},{},{}",
                    stage + 1,
                    lambda,
                    epoch + 1,
                    mean,
                    val.map(|p| p.to_string()).unwrap_or_default()
                )?;
            }
        }
        Ok(report)
    }

    /// Runs every stage of `plan` in order on the same model, decaying the
    /// learning rate on entry to the configured stages.
    pub fn train_curriculum(
        &mut self,
        model: &mut GunModel<f32>,
        pairs: &[PatchPair],
        plan: &CurriculumPlan,
        optim: &mut OptimState<f32>,
    ) -> Result<TrainReport> {
        let mut report = TrainReport {
            bicubic_val_psnr: self.validation.map(|v| v.bicubic_psnr()).transpose()?,
            ..Default::default()
        };
        for (i, stage) in plan.stages.iter().enumerate() {
            if self.config.decay_stages.contains(&i) {
                optim.lr *= self.config.lr_decay;
            }
            let r = self.train_stage(model, pairs, &stage.indices, optim, i, stage.lambda, stage.epochs)?;
            report.iterations += r.iterations;
            report.stages.push(r);
        }
        Ok(report)
    }
}

/// Convenience wrapper: one stage over the given samples.
pub fn train_stage(
    model: &mut GunModel<f32>,
    pairs: &[PatchPair],
    indices: &[usize],
    config: &TrainConfig,
    optim: &mut OptimState<f32>,
) -> Result<StageReport> {
    Trainer::new(config).train_stage(model, pairs, indices, optim, 0, 0.0, config.epochs_per_stage)
}

/// Convenience wrapper around [`Trainer::train_curriculum`].
pub fn train_curriculum(
    model: &mut GunModel<f32>,
    pairs: &[PatchPair],
    plan: &CurriculumPlan,
    config: &TrainConfig,
    optim: &mut OptimState<f32>,
    validation: Option<&ValidationSet>,
) -> Result<TrainReport> {
    let mut t = Trainer::new(config);
    t.validation = validation;
    t.train_curriculum(model, pairs, plan, optim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::model::build_gun;
    use crate::network::topology::GunTopology;

    #[test]
    fn mse_examples() {
        let p = Tensor::<f64>::full([1, 1, 2, 2], 3.0);
        let (l, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let t = Tensor::<f64>::full([1, 1, 2, 2], 2.0);
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 4.0);
        assert!(g.data().iter().all(|&v| v == 2.0));
        assert!(mse_loss(&p, &Tensor::zeros([1, 1, 2, 3])).is_err());
    }

    fn tiny_model() -> GunModel<f32> {
        let mut t = GunTopology::for_scale(2);
        t.steps = 1;
        t.depth = 1;
        t.channels = 2;
        build_gun(t, 1).unwrap()
    }

    fn fixed_grads(model: &mut GunModel<f32>, value: f32) -> Gradients<f32> {
        Gradients {
            entries: model.params_mut().iter().map(|p| (p.name.clone(), vec![value; p.values.len()])).collect(),
        }
    }

    #[test]
    fn plain_sgd_reduction() {
        let mut m = tiny_model();
        let before = m.clone();
        let g = fixed_grads(&mut m, 0.5);
        let mut opt = OptimState::new(&mut m, 0.1, 0.0, 0.0);
        sgd_momentum_step(&mut m.params_mut(), &g, &mut opt).unwrap();
        let want = before.output.bias[0] - 0.05;
        assert!((m.output.bias[0] - want).abs() < 1e-7);
        let want = before.input.conv.weight.data()[3] - 0.05;
        assert!((m.input.conv.weight.data()[3] - want).abs() < 1e-7);
    }

    #[test]
    fn zero_grads_keep_parameters() {
        let mut m = tiny_model();
        let before = m.clone();
        let g = fixed_grads(&mut m, 0.0);
        let mut opt = OptimState::new(&mut m, 0.1, 0.9, 0.0);
        sgd_momentum_step(&mut m.params_mut(), &g, &mut opt).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn momentum_two_step_displacement() {
        let mut m = tiny_model();
        m.output.bias[0] = 0.0;
        let g = fixed_grads(&mut m, 1.0);
        let mut opt = OptimState::new(&mut m, 0.01, 0.9, 0.0);
        sgd_momentum_step(&mut m.params_mut(), &g, &mut opt).unwrap();
        sgd_momentum_step(&mut m.params_mut(), &g, &mut opt).unwrap();
        // -lr g (1 + (1 + 0.9))
        assert!((m.output.bias[0] - (-0.01 * 2.9)).abs() < 1e-7);
    }

    #[test]
    fn weight_decay_skips_biases_and_bn() {
        let mut m = tiny_model();
        m.output.bias[0] = 1.0;
        m.input.bn.as_mut().unwrap().gamma[0] = 1.0;
        let w0 = m.output.weight.data()[0];
        let g = fixed_grads(&mut m, 0.0);
        let mut opt = OptimState::new(&mut m, 0.1, 0.0, 0.5);
        sgd_momentum_step(&mut m.params_mut(), &g, &mut opt).unwrap();
        assert_eq!(m.output.bias[0], 1.0);
        assert_eq!(m.input.bn.as_ref().unwrap().gamma[0], 1.0);
        assert!((m.output.weight.data()[0] - w0 * 0.95).abs() < 1e-7);
    }

    #[test]
    fn batch_size_one_is_rejected() {
        let cfg = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
