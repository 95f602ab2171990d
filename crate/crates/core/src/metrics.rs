//! PSNR and SSIM on `[0, 1]` luminance planes, and the bicubic baseline.

use std::fmt::Write;

use crate::error::{GunError, Result};
use crate::plane::Plane;
use crate::resample::bicubic_resize;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_size(op: &'static str, a: &Plane<f32>, b: &Plane<f32>) -> Result<()> {
    if a.size() != b.size() {
        return Err(GunError::shape(op, format!("{:?}", b.size()), format!("{:?}", a.size())));
    }
    Ok(())
}

/// Removes a `shave`-pixel frame from all four sides.
pub fn shave_border(p: &Plane<f32>, shave: usize) -> Result<Plane<f32>> {
    let (h, w) = p.size();
    if 2 * shave >= h.min(w) {
        return Err(GunError::InvalidArgument(format!(
            "shave {shave} leaves nothing of a {h}x{w} plane"
        )));
    }
    if shave == 0 {
        return Ok(p.clone());
    }
    p.crop(shave, shave, h - 2 * shave, w - 2 * shave)
}

/// Peak signal-to-noise ratio in dB for unit peak, after shaving the
/// border. Identical inputs give `f64::INFINITY`.
pub fn psnr(x: &Plane<f32>, reference: &Plane<f32>, shave: usize) -> Result<f64> {
    same_size("psnr", x, reference)?;
    let (a, b) = (shave_border(x, shave)?, shave_border(reference, shave)?);
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-region separable filtering with the SSIM window.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * tmp[(y + j) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// `K1 = 0.01`, `K2 = 0.03` and unit dynamic range, over valid windows.
pub fn ssim(x: &Plane<f32>, reference: &Plane<f32>) -> Result<f64> {
    same_size("ssim", x, reference)?;
    let (h, w) = x.size();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(GunError::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let taps = gaussian_taps();
    let a: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let (mu_a, oh, ow) = filter_valid(&a, h, w, &taps);
    let (mu_b, ..) = filter_valid(&b, h, w, &taps);
    let (e_aa, ..) = filter_valid(&prod(&a, &a), h, w, &taps);
    let (e_bb, ..) = filter_valid(&prod(&b, &b), h, w, &taps);
    let (e_ab, ..) = filter_valid(&prod(&a, &b), h, w, &taps);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / (oh * ow) as f64)
}

/// Bicubic magnification by `scale`, clipped to `[0, 1]`.
pub fn bicubic_baseline(lr: &Plane<f32>, scale: usize) -> Result<Plane<f32>> {
    if scale == 0 {
        return Err(GunError::InvalidArgument("scale must be positive".into()));
    }
    Ok(bicubic_resize(lr, lr.height() * scale, lr.width() * scale)?.clamp01())
}

/// Rounds every sample to the nearest 8-bit level.
pub fn quantize_plane(p: &Plane<f32>) -> Plane<f32> {
    p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) / 255.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub method: String,
    pub scale: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores with one mean row per method.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub shave: usize,
}

impl MetricsReport {
    pub fn new(shave: usize) -> Self {
        MetricsReport { rows: Vec::new(), shave }
    }

    pub fn push(&mut self, image: impl Into<String>, method: impl Into<String>, scale: usize, psnr: f64, ssim: f64) {
        self.rows.push(MetricRow {
            image: image.into(),
            method: method.into(),
            scale,
            psnr,
            ssim,
        });
    }

    /// Methods in first-seen order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Mean `(psnr, ssim)` of one method.
    pub fn mean(&self, method: &str) -> Option<(f64, f64)> {
        let rows: Vec<&MetricRow> = self.rows.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((rows.iter().map(|r| r.psnr).sum::<f64>() / n, rows.iter().map(|r| r.ssim).sum::<f64>() / n))
    }

    /// `image,method,scale,psnr,ssim` rows followed by a `mean` row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,method,scale,psnr,ssim\n");
        let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.4}") };
        for method in self.methods() {
            let mut scale = 0;
            for r in self.rows.iter().filter(|r| r.method == method) {
                scale = r.scale;
                let _ = writeln!(out, "{},{},{},{},{:.6}", r.image, r.method, r.scale, fmt(r.psnr), r.ssim);
            }
            let (p, s) = self.mean(&method).expect("method has rows");
            let _ = writeln!(out, "mean,{method},{scale},{},{s:.6}", fmt(p));
        }
        out
    }
}
