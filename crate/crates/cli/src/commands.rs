use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use gun_core::data::{
    augment, build_curriculum, extract_patches, list_pngs, load_png, rgb_to_ycbcr, save_gray_png,
    save_rgb_png, ycbcr_to_rgb, Channel, LoadedImage, PatchSet, PlaneImage,
};
use gun_core::metrics::{bicubic_baseline, psnr, quantize_plane, ssim, MetricsReport};
use gun_core::network::{
    build_gun, flops_direct, flops_estimate, load_checkpoint, resolution_schedule, save_checkpoint, GunModel,
};
use gun_core::resample::degrade;
use gun_core::train::{OptimState, Trainer, ValidationSet, LOSS_LOG_HEADER};
use gun_core::{GunError, Plane};

use crate::config::RunConfig;
use crate::CliError;

/// Loads the luminance of every PNG in a directory, reporting unreadable
/// files individually.
pub fn load_luma_dir(dir: &Path) -> Result<Vec<(String, Plane<f32>)>, CliError> {
    let paths = list_pngs(dir)?;
    let mut out = Vec::new();
    for path in paths {
        match load_png(&path) {
            Ok(img) => out.push((file_name(&path), img.luma())),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        return Err(GunError::Image {
            path: dir.to_path_buf(),
            reason: "no usable PNG images".into(),
        }
        .into());
    }
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

fn require_dir(dir: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    dir.clone().ok_or_else(|| CliError::Usage(format!("no {what} given (flag or config key `{what}`)")))
}

/// Augmented patch pool of a training directory.
pub fn training_pool(cfg: &RunConfig, dir: &Path) -> Result<PatchSet, CliError> {
    let images = load_luma_dir(dir)?;
    let min_side = cfg.lr_patch * cfg.scale as usize;
    let mut planes = Vec::new();
    let mut omitted = 0;
    for (_, y) in images {
        let img = PlaneImage::new(y, Channel::Y);
        if cfg.augment {
            let (variants, dropped) = augment(&img, min_side);
            omitted += dropped as usize;
            planes.extend(variants);
        } else {
            planes.push(img);
        }
    }
    if omitted > 0 {
        warn!("{omitted} image(s) too small for the 45 degree variant");
    }
    let set = extract_patches(&planes, &cfg.patch_config())?;
    if set.skipped_images > 0 {
        warn!("{} image variant(s) smaller than one patch were skipped", set.skipped_images);
    }
    if set.pairs.is_empty() {
        return Err(GunError::Image {
            path: dir.to_path_buf(),
            reason: "no training patches could be extracted".into(),
        }
        .into());
    }
    info!("{} patch pairs from {} planes", set.pairs.len(), planes.len());
    Ok(set)
}

fn validation_set(cfg: &RunConfig, dir: &Path) -> Result<ValidationSet, CliError> {
    let scale = cfg.scale as usize;
    let items = load_luma_dir(dir)?
        .into_iter()
        .map(|(name, hr)| {
            let lr = degrade(&hr, scale)?;
            let hr = hr.crop(0, 0, lr.height() * scale, lr.width() * scale)?;
            Ok((name, lr, hr))
        })
        .collect::<Result<Vec<_>, GunError>>()?;
    Ok(ValidationSet {
        items,
        scale,
        shave: cfg.shave,
    })
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let train_dir = require_dir(&cfg.train_dir, "train_dir")?;
    let topology = cfg.topology();
    topology.validate()?;
    cfg.train_config().validate()?;
    let set = training_pool(cfg, &train_dir)?;
    let plan = build_curriculum(&set.pairs, &cfg.lambdas, cfg.epochs_per_stage)?;
    println!("{}", plan.stats_table(&set.pairs));
    let val = cfg.val_dir.as_deref().map(|d| validation_set(cfg, d)).transpose()?;

    let mut model = build_gun::<f32>(topology, cfg.seed)?;
    model.set_bn_hyper(cfg.bn_eps, cfg.bn_momentum);
    let tc = cfg.train_config();
    let mut optim = OptimState::new(&mut model, tc.lr, tc.momentum, tc.weight_decay);
    let mut log = Vec::new();
    writeln!(log, "{LOSS_LOG_HEADER}")?;
    let mut trainer = Trainer::new(&tc).with_log(&mut log);
    trainer.validation = val.as_ref();
    let report = trainer.train_curriculum(&mut model, &set.pairs, &plan, &mut optim)?;

    save_checkpoint(&model, &cfg.checkpoint)?;
    fs::write(&cfg.log_path, &log)?;
    println!("stage,lambda,samples,iterations,final_loss,val_psnr");
    if let Some(p) = report.bicubic_val_psnr {
        println!("bicubic,,,,,{p:.4}");
    }
    for (i, s) in report.stages.iter().enumerate() {
        println!(
            "{},{},{},{},{},{}",
            i + 1,
            s.lambda,
            s.samples,
            s.iterations,
            s.epoch_losses.last().map(|l| format!("{l:.6}")).unwrap_or_default(),
            s.final_val_psnr().map(|p| format!("{p:.4}")).unwrap_or_default()
        );
    }
    info!(
        "{} iterations; checkpoint {}; loss log {}",
        report.iterations,
        cfg.checkpoint.display(),
        cfg.log_path.display()
    );
    Ok(())
}

fn checkpoint_scale(model: &GunModel<f32>) -> Option<u32> {
    model.topology().magnification.integer_scale()
}

fn load_model(cfg: &RunConfig, requested_scale: Option<u32>) -> Result<GunModel<f32>, CliError> {
    let model = load_checkpoint::<f32>(&cfg.checkpoint)?;
    if let Some(want) = requested_scale {
        let have = checkpoint_scale(&model);
        if have != Some(want) {
            return Err(CliError::Usage(format!(
                "requested scale {want} but checkpoint {} is a {} model",
                cfg.checkpoint.display(),
                model.topology().magnification
            )));
        }
    }
    Ok(model)
}

pub fn sr(cfg: &RunConfig, requested_scale: Option<u32>, input: &Path, out: &Path) -> Result<(), CliError> {
    let model = load_model(cfg, requested_scale)?;
    match load_png(input)? {
        LoadedImage::Gray(y) => {
            let sr = model.infer_plane(&y)?.clamp01();
            save_gray_png(out, &sr)?;
            info!("{}x{} -> {}x{}", y.width(), y.height(), sr.width(), sr.height());
        }
        LoadedImage::Rgb(rgb) => {
            let (y, cb, cr) = rgb_to_ycbcr(&rgb);
            let sr_y = model.infer_plane(&y)?.clamp01();
            let (h, w) = sr_y.size();
            let up = |p: &Plane<f32>| -> Result<Plane<f32>, GunError> {
                Ok(gun_core::bicubic_resize(p, h, w)?.clamp01())
            };
            let rgb = ycbcr_to_rgb(&sr_y, &up(&cb)?, &up(&cr)?)?;
            save_rgb_png(out, &rgb)?;
            info!("{}x{} -> {w}x{h}", y.width(), y.height());
        }
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, use_checkpoint: bool, reference_rows: bool) -> Result<MetricsReport, CliError> {
    let dir = require_dir(&cfg.test_dir, "test_dir")?;
    let scale = cfg.scale as usize;
    let model = if use_checkpoint { Some(load_model(cfg, Some(cfg.scale))?) } else { None };
    let images = load_luma_dir(&dir)?;
    let prep = |p: Plane<f32>| if cfg.quantized_metrics { quantize_plane(&p) } else { p };
    let scored = images
        .par_iter()
        .map(|(name, hr)| {
            let lr = prep(degrade(hr, scale)?);
            let hr = hr.crop(0, 0, lr.height() * scale, lr.width() * scale)?;
            let score = |x: &Plane<f32>| -> Result<(f64, f64), GunError> { Ok((psnr(x, &hr, cfg.shave)?, ssim(x, &hr)?)) };
            let mut rows = vec![("bicubic", score(&prep(bicubic_baseline(&lr, scale)?))?)];
            if let Some(m) = &model {
                rows.push(("gun", score(&prep(m.infer_plane(&lr)?.clamp01()))?));
            }
            if reference_rows {
                rows.push(("reference", score(&hr)?));
            }
            Ok((name.clone(), rows))
        })
        .collect::<Result<Vec<_>, GunError>>()?;
    let mut report = MetricsReport::new(cfg.shave);
    let methods = scored.first().map(|s| s.1.len()).unwrap_or(0);
    for k in 0..methods {
        for (name, rows) in &scored {
            let (method, (p, s)) = rows[k];
            report.push(name.as_str(), method, scale, p, s);
        }
    }
    Ok(report)
}

fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("size `{s}` must look like HxW or N"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

pub fn schedule(lr: &str, hr: &str, steps: usize) -> Result<String, CliError> {
    let s = resolution_schedule(parse_size(lr)?, parse_size(hr)?, steps)?;
    let mut out = format!("lr {}x{}  hr {}x{}  steps {}  delta {}x{}\n", s.lr().0, s.lr().1, s.hr().0, s.hr().1, s.steps(), s.delta().0, s.delta().1);
    for (i, (h, w)) in s.targets().iter().enumerate() {
        out.push_str(&format!("{:>4}  {h}x{w}\n", i + 1));
    }
    Ok(out)
}

pub fn flops(cfg: &RunConfig, lr: &str) -> Result<String, CliError> {
    let lr = parse_size(lr)?;
    let topo = cfg.topology();
    topo.validate()?;
    let hr = topo.magnification.target_for(lr)?;
    let gun = flops_estimate(&topo, lr, hr)?;
    let direct = flops_direct(&topo, hr);
    Ok(format!(
        "scale {}  steps {}  depth {}  channels {}  lr {}x{}  hr {}x{}\ngun     {gun}\ndirect  {direct}\nratio   {:.4}\n",
        cfg.scale,
        topo.steps,
        topo.depth,
        topo.channels,
        lr.0,
        lr.1,
        hr.0,
        hr.1,
        gun as f64 / direct as f64
    ))
}

pub fn curriculum_stats(cfg: &RunConfig) -> Result<String, CliError> {
    let dir = require_dir(&cfg.train_dir, "train_dir")?;
    let set = training_pool(cfg, &dir)?;
    let plan = build_curriculum(&set.pairs, &cfg.lambdas, cfg.epochs_per_stage)?;
    Ok(plan.stats_table(&set.pairs))
}

/// Writes `text` to `out`, or to stdout without a path.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
