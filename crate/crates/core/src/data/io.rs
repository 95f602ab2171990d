//! 8-bit PNG ingestion and output.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb};

use crate::data::color::{rgb_to_ycbcr, RgbImage};
use crate::error::{GunError, Result};
use crate::plane::Plane;

/// A decoded image, normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedImage {
    Gray(Plane<f32>),
    Rgb(RgbImage),
}

impl LoadedImage {
    pub fn size(&self) -> (usize, usize) {
        match self {
            LoadedImage::Gray(p) => p.size(),
            LoadedImage::Rgb(rgb) => rgb.size(),
        }
    }

    /// Luminance plane (the gray plane itself for grayscale images).
    pub fn luma(&self) -> Plane<f32> {
        match self {
            LoadedImage::Gray(p) => p.clone(),
            LoadedImage::Rgb(rgb) => rgb_to_ycbcr(rgb).0,
        }
    }
}

fn image_err(path: &Path, reason: impl ToString) -> GunError {
    GunError::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn load_png(path: impl AsRef<Path>) -> Result<LoadedImage> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| image_err(path, e))?
        .with_guessed_format()
        .map_err(|e| image_err(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let norm = |v: u8| v as f32 / 255.0;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => LoadedImage::Gray(Plane::new(h, w, g.into_raw().into_iter().map(norm).collect())?),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            LoadedImage::Gray(Plane::new(h, w, g.into_raw().into_iter().map(norm).collect())?)
        }
        other => {
            let rgb = other.to_rgb8().into_raw();
            let channel = |c: usize| Plane::new(h, w, rgb.iter().skip(c).step_by(3).map(|&v| norm(v)).collect());
            LoadedImage::Rgb(RgbImage {
                r: channel(0)?,
                g: channel(1)?,
                b: channel(2)?,
            })
        }
    })
}

/// Rounds a `[0, 1]` sample to 8 bits.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn save_gray_png(path: impl AsRef<Path>, plane: &Plane<f32>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = plane.size();
    let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, plane.data().iter().map(|&v| quantize(v)).collect())
        .ok_or_else(|| image_err(path, "buffer size"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn save_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.size();
    let mut raw = Vec::with_capacity(h * w * 3);
    for ((&r, &g), &b) in img.r.data().iter().zip(img.g.data()).zip(img.b.data()) {
        raw.extend([quantize(r), quantize(g), quantize(b)]);
    }
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, raw).ok_or_else(|| image_err(path, "buffer size"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

/// PNG files directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| image_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = Plane::from_fn(5, 7, |y, x| ((y * 7 + x) * 7) as f32 / 255.0);
        let path = dir.path().join("g.png");
        save_gray_png(&path, &p).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back, LoadedImage::Gray(p));
        assert_eq!(list_pngs(dir.path()).unwrap(), vec![path]);
    }

    #[test]
    fn rgb_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |k: usize| Plane::from_fn(4, 3, move |y, x| ((y * 3 + x) * 20 + k) as f32 / 255.0);
        let img = RgbImage { r: mk(0), g: mk(1), b: mk(2) };
        let path = dir.path().join("c.png");
        save_rgb_png(&path, &img).unwrap();
        assert_eq!(load_png(&path).unwrap(), LoadedImage::Rgb(img));
    }

    #[test]
    fn unreadable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        fs::write(&path, b"not a png").unwrap();
        let err = load_png(&path).unwrap_err();
        assert!(err.to_string().contains("bad.png"));
    }
}
