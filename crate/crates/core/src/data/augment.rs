//! Rotation augmentation: lossless 90/180 degree turns and a resampled
//! 45 degree rotation cropped to its valid interior.

use crate::plane::Plane;
use crate::resample::keys_kernel;
use crate::tensor::Scalar;

/// Which channel a plane carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Y,
    Cb,
    Cr,
    Gray,
}

/// A single-channel image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneImage {
    pub plane: Plane<f32>,
    pub channel: Channel,
}

impl PlaneImage {
    pub fn new(plane: Plane<f32>, channel: Channel) -> Self {
        PlaneImage { plane, channel }
    }

    fn with(&self, plane: Plane<f32>) -> Self {
        PlaneImage { plane, channel: self.channel }
    }
}

/// Counter-clockwise quarter turn (as displayed).
pub fn rotate90<T: Scalar>(p: &Plane<T>) -> Plane<T> {
    let (h, w) = p.size();
    Plane::from_fn(w, h, |y, x| p.get(x, w - 1 - y))
}

pub fn rotate180<T: Scalar>(p: &Plane<T>) -> Plane<T> {
    let (h, w) = p.size();
    Plane::from_fn(h, w, |y, x| p.get(h - 1 - y, w - 1 - x))
}

/// Size of the largest axis-aligned rectangle inside a `w x h` rectangle
/// rotated by `angle` radians.
fn inscribed_rect(w: f64, h: f64, angle: f64) -> (f64, f64) {
    if w <= 0.0 || h <= 0.0 {
        return (0.0, 0.0);
    }
    let wide = w >= h;
    let (long, short) = if wide { (w, h) } else { (h, w) };
    let (s, c) = (angle.sin().abs(), angle.cos().abs());
    if short <= 2.0 * s * c * long || (s - c).abs() < 1e-10 {
        let x = 0.5 * short;
        if wide {
            (x / s, x / c)
        } else {
            (x / c, x / s)
        }
    } else {
        let cos2 = c * c - s * s;
        ((w * c - h * s) / cos2, (h * c - w * s) / cos2)
    }
}

/// Bicubic sample at a fractional position with clamped taps.
fn sample_bicubic(p: &Plane<f32>, y: f64, x: f64) -> f64 {
    let (h, w) = p.size();
    let (y0, x0) = (y.floor() as i64, x.floor() as i64);
    let mut acc = 0.0;
    for j in y0 - 1..=y0 + 2 {
        let wy = keys_kernel(y - j as f64);
        if wy == 0.0 {
            continue;
        }
        let sy = j.clamp(0, h as i64 - 1) as usize;
        for i in x0 - 1..=x0 + 2 {
            let wx = keys_kernel(x - i as f64);
            if wx == 0.0 {
                continue;
            }
            acc += wy * wx * p.get(sy, i.clamp(0, w as i64 - 1) as usize) as f64;
        }
    }
    acc
}

/// Counter-clockwise rotation by 45 degrees, cropped to the largest
/// axis-aligned rectangle whose sample positions all fall inside the
/// original image. `None` when that rectangle is smaller than `min_side`.
pub fn rotate45(p: &Plane<f32>, min_side: usize) -> Option<Plane<f32>> {
    let (h, w) = p.size();
    if h < 2 || w < 2 {
        return None;
    }
    let angle = std::f64::consts::FRAC_PI_4;
    // extents measured between outermost pixel centres
    let (rw, rh) = inscribed_rect((w - 1) as f64, (h - 1) as f64, angle);
    let (ow, oh) = ((rw + 1e-9).floor() as usize + 1, (rh + 1e-9).floor() as usize + 1);
    if ow < min_side.max(1) || oh < min_side.max(1) {
        return None;
    }
    let (cxs, cys) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let (cxo, cyo) = ((ow - 1) as f64 / 2.0, (oh - 1) as f64 / 2.0);
    let (s, c) = angle.sin_cos();
    Some(Plane::from_fn(oh, ow, |yo, xo| {
        // to y-up coordinates, rotate by -angle, back to y-down
        let (ux, uy) = (xo as f64 - cxo, cyo - yo as f64);
        let (sx, sy) = (c * ux + s * uy, -s * ux + c * uy);
        let v = sample_bicubic(p, cys - sy, cxs + sx);
        v.clamp(0.0, 1.0) as f32
    }))
}

/// The original image plus its 90, 180 and 45 degree rotations. The 45
/// degree variant is omitted (second value `true`) when its valid interior
/// is smaller than `min_side` on either axis.
pub fn augment(image: &PlaneImage, min_side: usize) -> (Vec<PlaneImage>, bool) {
    let mut out = vec![
        image.clone(),
        image.with(rotate90(&image.plane)),
        image.with(rotate180(&image.plane)),
    ];
    match rotate45(&image.plane, min_side) {
        Some(p) => {
            out.push(image.with(p));
            (out, false)
        }
        None => (out, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Plane<f32> {
        Plane::from_fn(h, w, |y, x| ((y * w + x) % 97) as f32 / 96.0)
    }

    #[test]
    fn quarter_turns_compose() {
        let p = ramp(5, 8);
        assert_eq!(rotate90(&rotate90(&p)), rotate180(&p));
        assert_eq!(rotate180(&rotate180(&p)), p);
        let r = rotate90(&p);
        assert_eq!(r.size(), (8, 5));
        // top-right corner moves to top-left under a counter-clockwise turn
        assert_eq!(r.get(0, 0), p.get(0, 7));
    }

    #[test]
    fn constant_image_stays_constant() {
        let p = PlaneImage::new(Plane::filled(40, 30, 0.4), Channel::Y);
        let (all, omitted) = augment(&p, 8);
        assert!(!omitted);
        assert_eq!(all.len(), 4);
        for v in &all {
            assert!(v.plane.data().iter().all(|&x| (x - 0.4).abs() < 1e-6));
        }
    }

    #[test]
    fn square_interior_has_expected_side() {
        let r = rotate45(&Plane::filled(101, 101, 0.0), 1).unwrap();
        // 100 / sqrt(2) = 70.7 centre spacing -> 71 samples
        assert_eq!(r.size(), (71, 71));
    }

    #[test]
    fn tiny_image_omits_45() {
        let p = PlaneImage::new(ramp(12, 12), Channel::Gray);
        let (all, omitted) = augment(&p, 12);
        assert!(omitted);
        assert_eq!(all.len(), 3);
    }
}
