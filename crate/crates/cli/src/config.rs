//! Flat `key = value` run configuration.

use std::fmt::Write;
use std::path::PathBuf;
use std::str::FromStr;

use gun_core::data::{AlgdOn, PatchConfig, DEFAULT_LAMBDAS};
use gun_core::layers::{DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
use gun_core::network::{default_patch_size, default_steps, GunTopology, DEFAULT_CHANNELS, DEFAULT_DEPTH};
use gun_core::train::TrainConfig;
use gun_core::BackwardResample;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scale: u32,
    pub steps: usize,
    pub depth: usize,
    pub channels: usize,
    pub bn_on_input: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub backward_resample: BackwardResample,
    pub lr_patch: usize,
    pub stride: usize,
    /// 0 keeps every candidate patch.
    pub max_patches: usize,
    pub augment: bool,
    pub algd_on: AlgdOn,
    pub lambdas: Vec<f64>,
    pub epochs_per_stage: usize,
    /// 0 means no cap.
    pub max_iters_per_stage: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    /// One-based stage numbers on entry to which the learning rate decays.
    pub decay_stages: Vec<usize>,
    pub seed: u64,
    pub shave: usize,
    pub quantized_metrics: bool,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

impl RunConfig {
    pub fn for_scale(scale: u32) -> Self {
        let lr_patch = default_patch_size(scale);
        let train = TrainConfig::default();
        RunConfig {
            scale,
            steps: default_steps(scale),
            depth: DEFAULT_DEPTH,
            channels: DEFAULT_CHANNELS,
            bn_on_input: true,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            backward_resample: BackwardResample::Adjoint,
            lr_patch,
            stride: (lr_patch / 2).max(1),
            max_patches: 0,
            augment: true,
            algd_on: AlgdOn::Hr,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            epochs_per_stage: train.epochs_per_stage,
            max_iters_per_stage: 0,
            batch_size: train.batch_size,
            lr: train.lr,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            lr_decay: train.lr_decay,
            decay_stages: train.decay_stages.iter().map(|s| s + 1).collect(),
            seed: train.seed,
            shave: scale as usize,
            quantized_metrics: false,
            train_dir: None,
            val_dir: None,
            test_dir: None,
            checkpoint: PathBuf::from("gun.ckpt"),
            log_path: PathBuf::from("train_log.csv"),
        }
    }

    /// Parses a config file. A `scale` line first resets every
    /// scale-dependent default; later keys override.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", no + 1)))?;
            entries.push((no + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let scale = match entries.iter().rev().find(|e| e.1 == "scale") {
            Some((no, _, v)) => parse_value(*no, "scale", v)?,
            None => 2,
        };
        let mut cfg = RunConfig::for_scale(scale);
        for (no, k, v) in &entries {
            cfg.set(*no, k, v)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, no: usize, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "scale" => self.scale = parse_value(no, key, v)?,
            "steps" => self.steps = parse_value(no, key, v)?,
            "depth" => self.depth = parse_value(no, key, v)?,
            "channels" => self.channels = parse_value(no, key, v)?,
            "bn_on_input" => self.bn_on_input = parse_value(no, key, v)?,
            "bn_eps" => self.bn_eps = parse_value(no, key, v)?,
            "bn_momentum" => self.bn_momentum = parse_value(no, key, v)?,
            "backward_resample" => self.backward_resample = parse_value(no, key, v)?,
            "lr_patch" => self.lr_patch = parse_value(no, key, v)?,
            "stride" => self.stride = parse_value(no, key, v)?,
            "max_patches" => self.max_patches = parse_value(no, key, v)?,
            "augment" => self.augment = parse_value(no, key, v)?,
            "algd_on" => {
                self.algd_on = match v {
                    "hr" => AlgdOn::Hr,
                    "lr" => AlgdOn::Lr,
                    _ => return Err(bad_value(no, key, v)),
                }
            }
            "lambdas" => self.lambdas = parse_list(no, key, v)?,
            "epochs_per_stage" => self.epochs_per_stage = parse_value(no, key, v)?,
            "max_iters_per_stage" => self.max_iters_per_stage = parse_value(no, key, v)?,
            "batch_size" => self.batch_size = parse_value(no, key, v)?,
            "lr" => self.lr = parse_value(no, key, v)?,
            "momentum" => self.momentum = parse_value(no, key, v)?,
            "weight_decay" => self.weight_decay = parse_value(no, key, v)?,
            "lr_decay" => self.lr_decay = parse_value(no, key, v)?,
            "decay_stages" => self.decay_stages = parse_list(no, key, v)?,
            "seed" => self.seed = parse_value(no, key, v)?,
            "shave" => self.shave = parse_value(no, key, v)?,
            "quantized_metrics" => self.quantized_metrics = parse_value(no, key, v)?,
            "train_dir" => self.train_dir = optional_path(v),
            "val_dir" => self.val_dir = optional_path(v),
            "test_dir" => self.test_dir = optional_path(v),
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            "log_path" => self.log_path = PathBuf::from(v),
            _ => return Err(CliError::Usage(format!("config line {no}: unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn dump(&self) -> String {
        let list = |v: &[String]| v.join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("scale", self.scale.to_string());
        kv("steps", self.steps.to_string());
        kv("depth", self.depth.to_string());
        kv("channels", self.channels.to_string());
        kv("bn_on_input", self.bn_on_input.to_string());
        kv("bn_eps", self.bn_eps.to_string());
        kv("bn_momentum", self.bn_momentum.to_string());
        kv("backward_resample", self.backward_resample.to_string());
        kv("lr_patch", self.lr_patch.to_string());
        kv("stride", self.stride.to_string());
        kv("max_patches", self.max_patches.to_string());
        kv("augment", self.augment.to_string());
        kv("algd_on", match self.algd_on {
            AlgdOn::Hr => "hr".into(),
            AlgdOn::Lr => "lr".into(),
        });
        kv("lambdas", list(&self.lambdas.iter().map(f64::to_string).collect::<Vec<_>>()));
        kv("epochs_per_stage", self.epochs_per_stage.to_string());
        kv("max_iters_per_stage", self.max_iters_per_stage.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("lr_decay", self.lr_decay.to_string());
        kv("decay_stages", list(&self.decay_stages.iter().map(usize::to_string).collect::<Vec<_>>()));
        kv("seed", self.seed.to_string());
        kv("shave", self.shave.to_string());
        kv("quantized_metrics", self.quantized_metrics.to_string());
        kv("train_dir", path(&self.train_dir));
        kv("val_dir", path(&self.val_dir));
        kv("test_dir", path(&self.test_dir));
        kv("checkpoint", self.checkpoint.display().to_string());
        kv("log_path", self.log_path.display().to_string());
        out
    }

    pub fn topology(&self) -> GunTopology {
        GunTopology {
            steps: self.steps,
            depth: self.depth,
            channels: self.channels,
            bn_on_input: self.bn_on_input,
            backward_resample: self.backward_resample,
            ..GunTopology::for_scale(self.scale)
        }
    }

    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig {
            scale: self.scale as usize,
            lr_patch: self.lr_patch,
            stride: self.stride,
            max_count: (self.max_patches > 0).then_some(self.max_patches),
            seed: self.seed,
            algd_on: self.algd_on,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_decay: self.lr_decay,
            decay_stages: self.decay_stages.iter().filter(|&&s| s > 0).map(|s| s - 1).collect(),
            epochs_per_stage: self.epochs_per_stage,
            max_iters_per_stage: (self.max_iters_per_stage > 0).then_some(self.max_iters_per_stage),
            seed: self.seed,
        }
    }

    /// Applies `--scale`, resetting the scale-dependent defaults the file did
    /// not pin.
    pub fn with_scale(mut self, scale: u32) -> Self {
        if scale != self.scale {
            let old = RunConfig::for_scale(self.scale);
            let new = RunConfig::for_scale(scale);
            if self.steps == old.steps {
                self.steps = new.steps;
            }
            if self.lr_patch == old.lr_patch {
                self.lr_patch = new.lr_patch;
            }
            if self.stride == old.stride {
                self.stride = new.stride;
            }
            if self.shave == old.shave {
                self.shave = new.shave;
            }
            self.scale = scale;
        }
        self
    }
}

fn bad_value(no: usize, key: &str, v: &str) -> CliError {
    CliError::Usage(format!("config line {no}: invalid value `{v}` for `{key}`"))
}

fn parse_value<T: FromStr>(no: usize, key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| bad_value(no, key, v))
}

fn parse_list<T: FromStr>(no: usize, key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(no, key, s))
        .collect()
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}
