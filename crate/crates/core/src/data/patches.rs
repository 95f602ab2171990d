use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::augment::PlaneImage;
use crate::data::curriculum::algd;
use crate::error::{GunError, Result};
use crate::plane::Plane;
use crate::resample::degrade;

/// One aligned training sample: an HR crop and its degraded LR version.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub lr: Plane<f32>,
    pub hr: Plane<f32>,
    /// Contrast score of the HR (or LR, see [`AlgdOn`]) patch.
    pub algd: f32,
    /// Index of the source image in the extraction input.
    pub source: usize,
    /// Top-left corner of the LR patch on the source's LR grid.
    pub offset: (usize, usize),
}

/// Which side of a pair the contrast score is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlgdOn {
    #[default]
    Hr,
    Lr,
}

impl fmt::Display for AlgdOn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlgdOn::Hr => "hr",
            AlgdOn::Lr => "lr",
        })
    }
}

impl FromStr for AlgdOn {
    type Err = GunError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hr" => Ok(AlgdOn::Hr),
            "lr" => Ok(AlgdOn::Lr),
            other => Err(GunError::InvalidArgument(format!("algd_on must be hr or lr, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    pub scale: usize,
    /// Side of the LR patch.
    pub lr_patch: usize,
    /// Step between patch origins on the LR grid.
    pub stride: usize,
    /// Cap on the number of pairs; a seeded uniform subsample is kept.
    pub max_count: Option<usize>,
    pub seed: u64,
    pub algd_on: AlgdOn,
}

impl PatchConfig {
    /// Defaults for a scale factor: patch 20/16/12, stride half a patch.
    pub fn for_scale(scale: usize) -> Self {
        let lr_patch = crate::network::default_patch_size(scale as u32);
        PatchConfig {
            scale,
            lr_patch,
            stride: (lr_patch / 2).max(1),
            max_count: None,
            seed: 0,
            algd_on: AlgdOn::Hr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub pairs: Vec<PatchPair>,
    /// Images too small to hold one HR patch.
    pub skipped_images: usize,
}

fn origins(len: usize, patch: usize, stride: usize) -> impl Iterator<Item = usize> {
    let count = if len >= patch { (len - patch) / stride + 1 } else { 0 };
    (0..count).map(move |i| i * stride)
}

/// Cuts aligned LR/HR pairs from a list of HR images, ordered by
/// `(image, row, column)`.
pub fn extract_patches(images: &[PlaneImage], cfg: &PatchConfig) -> Result<PatchSet> {
    if cfg.scale < 2 || cfg.lr_patch == 0 || cfg.stride == 0 {
        return Err(GunError::InvalidArgument(format!(
            "patch extraction needs scale >= 2 and positive patch/stride, got {cfg:?}"
        )));
    }
    let p = cfg.lr_patch;
    let mut skipped = 0;
    let mut candidates = Vec::new();
    for (id, img) in images.iter().enumerate() {
        let (lh, lw) = (img.plane.height() / cfg.scale, img.plane.width() / cfg.scale);
        if lh < p || lw < p {
            skipped += 1;
            continue;
        }
        for y in origins(lh, p, cfg.stride) {
            for x in origins(lw, p, cfg.stride) {
                candidates.push((id, y, x));
            }
        }
    }
    if let Some(cap) = cfg.max_count {
        if candidates.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut keep = index::sample(&mut rng, candidates.len(), cap).into_vec();
            keep.sort_unstable();
            candidates = keep.into_iter().map(|i| candidates[i]).collect();
        }
    }
    let hp = p * cfg.scale;
    let pairs = candidates
        .par_iter()
        .map(|&(id, y, x)| {
            let hr = images[id].plane.crop(y * cfg.scale, x * cfg.scale, hp, hp)?;
            let lr = degrade(&hr, cfg.scale)?;
            let score = match cfg.algd_on {
                AlgdOn::Hr => algd(&hr),
                AlgdOn::Lr => algd(&lr),
            };
            Ok(PatchPair {
                lr,
                hr,
                algd: score,
                source: id,
                offset: (y, x),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet {
        pairs,
        skipped_images: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::augment::Channel;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> PlaneImage {
        PlaneImage::new(Plane::from_fn(h, w, f), Channel::Y)
    }

    #[test]
    fn one_grid_cell() {
        let cfg = PatchConfig { stride: 12, ..PatchConfig::for_scale(4) };
        let set = extract_patches(&[img(48, 48, |y, x| ((x + y) % 5) as f32 / 5.0)], &cfg).unwrap();
        assert_eq!(set.pairs.len(), 1);
        assert_eq!(set.pairs[0].lr.size(), (12, 12));
        assert_eq!(set.pairs[0].hr.size(), (48, 48));
    }

    #[test]
    fn constant_image_scores_zero() {
        let set = extract_patches(&[img(80, 64, |_, _| 0.7)], &PatchConfig::for_scale(2)).unwrap();
        assert!(!set.pairs.is_empty());
        assert!(set.pairs.iter().all(|p| p.algd == 0.0));
    }

    #[test]
    fn small_images_are_skipped_and_counted() {
        let cfg = PatchConfig::for_scale(3);
        let set = extract_patches(&[img(40, 40, |_, _| 0.1), img(60, 60, |_, _| 0.1)], &cfg).unwrap();
        assert_eq!(set.skipped_images, 1);
        assert!(set.pairs.iter().all(|p| p.source == 1));
    }

    #[test]
    fn subsample_is_seeded_and_ordered() {
        let images = [img(96, 96, |y, x| ((x * y) % 13) as f32 / 13.0)];
        let cfg = PatchConfig { max_count: Some(5), seed: 3, ..PatchConfig::for_scale(2) };
        let a = extract_patches(&images, &cfg).unwrap();
        let b = extract_patches(&images, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pairs.len(), 5);
        let keys: Vec<_> = a.pairs.iter().map(|p| (p.source, p.offset)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
