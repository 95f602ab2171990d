//! Full-range BT.601 YCbCr conversion on `[0, 1]` samples.

use crate::error::{GunError, Result};
use crate::plane::Plane;

/// Converts one RGB sample to `(Y, Cb, Cr)`.
#[inline]
pub fn rgb_to_ycbcr_px(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 0.5 - 0.168_735_9 * r - 0.331_264_1 * g + 0.5 * b;
    let cr = 0.5 + 0.5 * r - 0.418_687_6 * g - 0.081_312_4 * b;
    (y.clamp(0.0, 1.0), cb.clamp(0.0, 1.0), cr.clamp(0.0, 1.0))
}

/// Converts one `(Y, Cb, Cr)` sample back to RGB, clipped to `[0, 1]`.
#[inline]
pub fn ycbcr_to_rgb_px(y: f32, cb: f32, cr: f32) -> (f32, f32, f32) {
    let (cb, cr) = (cb - 0.5, cr - 0.5);
    let r = y + 1.402 * cr;
    let g = y - 0.344_136_3 * cb - 0.714_136_3 * cr;
    let b = y + 1.772 * cb;
    (r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
}

/// An RGB image as three `[0, 1]` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub r: Plane<f32>,
    pub g: Plane<f32>,
    pub b: Plane<f32>,
}

impl RgbImage {
    pub fn size(&self) -> (usize, usize) {
        self.r.size()
    }
}

pub fn rgb_to_ycbcr(rgb: &RgbImage) -> (Plane<f32>, Plane<f32>, Plane<f32>) {
    let (h, w) = rgb.size();
    let mut y = Vec::with_capacity(h * w);
    let mut cb = Vec::with_capacity(h * w);
    let mut cr = Vec::with_capacity(h * w);
    for ((&r, &g), &b) in rgb.r.data().iter().zip(rgb.g.data()).zip(rgb.b.data()) {
        let (a, b, c) = rgb_to_ycbcr_px(r, g, b);
        y.push(a);
        cb.push(b);
        cr.push(c);
    }
    let mk = |d| Plane::new(h, w, d).expect("sizes agree");
    (mk(y), mk(cb), mk(cr))
}

pub fn ycbcr_to_rgb(y: &Plane<f32>, cb: &Plane<f32>, cr: &Plane<f32>) -> Result<RgbImage> {
    if y.size() != cb.size() || y.size() != cr.size() {
        return Err(GunError::shape("ycbcr_to_rgb", format!("{:?}", y.size()), format!("{:?} / {:?}", cb.size(), cr.size())));
    }
    let (h, w) = y.size();
    let mut r = Vec::with_capacity(h * w);
    let mut g = Vec::with_capacity(h * w);
    let mut b = Vec::with_capacity(h * w);
    for ((&a, &bb), &c) in y.data().iter().zip(cb.data()).zip(cr.data()) {
        let (x, yy, z) = ycbcr_to_rgb_px(a, bb, c);
        r.push(x);
        g.push(yy);
        b.push(z);
    }
    Ok(RgbImage {
        r: Plane::new(h, w, r)?,
        g: Plane::new(h, w, g)?,
        b: Plane::new(h, w, b)?,
    })
}
