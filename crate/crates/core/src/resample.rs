//! Bicubic (Keys, a = -0.5) resampling as an explicit separable linear
//! operator, together with its exact transpose.
//!
//! Coordinates are half-pixel centred: destination index `i` maps to source
//! position `(i + 0.5) * src / dst - 0.5`. Source indices outside the image
//! are clamped to the border. When shrinking, the kernel is stretched by the
//! reduction factor and tap weights are renormalized to sum to one, which
//! matches the usual `imresize` behaviour.

use crate::error::{GunError, Result};
use crate::plane::Plane;
use crate::tensor::Scalar;

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_kernel(t: f64) -> f64 {
    let t = t.abs();
    let a = KEYS_A;
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Tap list of one axis: for every destination index a run of
/// `(source index, weight)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisTaps {
    src_len: usize,
    dst_len: usize,
    starts: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl AxisTaps {
    pub fn new(src_len: usize, dst_len: usize) -> Result<Self> {
        if src_len == 0 || dst_len == 0 {
            return Err(GunError::InvalidArgument(format!(
                "resample axis {src_len} -> {dst_len}: sizes must be positive"
            )));
        }
        let scale = dst_len as f64 / src_len as f64;
        let kscale = scale.min(1.0);
        let support = 2.0 / kscale;
        let mut starts = Vec::with_capacity(dst_len + 1);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        starts.push(0);
        let mut run: Vec<(usize, f64)> = Vec::with_capacity(8);
        for i in 0..dst_len {
            let center = ((2 * i + 1) * src_len) as f64 / (2 * dst_len) as f64 - 0.5;
            let lo = (center - support).ceil() as i64;
            let hi = (center + support).floor() as i64;
            run.clear();
            let mut total = 0.0;
            for j in lo..=hi {
                let w = kscale * keys_kernel(kscale * (center - j as f64));
                if w == 0.0 {
                    continue;
                }
                total += w;
                let src = j.clamp(0, src_len as i64 - 1) as usize;
                match run.iter_mut().find(|(s, _)| *s == src) {
                    Some(slot) => slot.1 += w,
                    None => run.push((src, w)),
                }
            }
            for &(s, w) in &run {
                index.push(s);
                weight.push(w / total);
            }
            starts.push(index.len());
        }
        Ok(AxisTaps {
            src_len,
            dst_len,
            starts,
            index,
            weight,
        })
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn dst_len(&self) -> usize {
        self.dst_len
    }

    /// Taps feeding destination index `i`.
    pub fn taps(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.starts[i]..self.starts[i + 1];
        self.index[r.clone()].iter().copied().zip(self.weight[r].iter().copied())
    }

    fn is_identity(&self) -> bool {
        self.src_len == self.dst_len && (0..self.dst_len).all(|i| self.taps(i).eq(std::iter::once((i, 1.0))))
    }
}

/// The full 2-D resampling operator between two fixed sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    rows: AxisTaps,
    cols: AxisTaps,
}

impl ResamplePlan {
    pub fn new(src: (usize, usize), dst: (usize, usize)) -> Result<Self> {
        Ok(ResamplePlan {
            rows: AxisTaps::new(src.0, dst.0)?,
            cols: AxisTaps::new(src.1, dst.1)?,
        })
    }

    pub fn src(&self) -> (usize, usize) {
        (self.rows.src_len, self.cols.src_len)
    }

    pub fn dst(&self) -> (usize, usize) {
        (self.rows.dst_len, self.cols.dst_len)
    }

    pub fn rows(&self) -> &AxisTaps {
        &self.rows
    }

    pub fn cols(&self) -> &AxisTaps {
        &self.cols
    }

    /// Applies the operator to one plane stored in `src` (`src()` sized),
    /// writing a `dst()` sized plane. `scratch` is reused between calls.
    pub fn apply<T: Scalar>(&self, src: &[T], dst: &mut [T], scratch: &mut Vec<T>) {
        let (sh, sw) = self.src();
        let (dh, dw) = self.dst();
        assert_eq!(src.len(), sh * sw, "resample: source size");
        assert_eq!(dst.len(), dh * dw, "resample: destination size");
        if self.rows.is_identity() && self.cols.is_identity() {
            dst.copy_from_slice(src);
            return;
        }
        // horizontal pass: sh x dw
        scratch.clear();
        scratch.resize(sh * dw, T::zero());
        for y in 0..sh {
            let row = &src[y * sw..(y + 1) * sw];
            let out = &mut scratch[y * dw..(y + 1) * dw];
            for (x, o) in out.iter_mut().enumerate() {
                *o = self.cols.taps(x).fold(T::zero(), |acc, (s, w)| acc + row[s] * T::from_f64_lossy(w));
            }
        }
        // vertical pass
        for y in 0..dh {
            let out = &mut dst[y * dw..(y + 1) * dw];
            out.fill(T::zero());
            for (s, w) in self.rows.taps(y) {
                let w = T::from_f64_lossy(w);
                for (o, &v) in out.iter_mut().zip(&scratch[s * dw..(s + 1) * dw]) {
                    *o = *o + v * w;
                }
            }
        }
    }

    /// Applies the transpose: maps a `dst()` sized gradient to `src()` size.
    pub fn apply_adjoint<T: Scalar>(&self, grad: &[T], out: &mut [T], scratch: &mut Vec<T>) {
        let (sh, sw) = self.src();
        let (dh, dw) = self.dst();
        assert_eq!(grad.len(), dh * dw, "resample adjoint: gradient size");
        assert_eq!(out.len(), sh * sw, "resample adjoint: output size");
        if self.rows.is_identity() && self.cols.is_identity() {
            out.copy_from_slice(grad);
            return;
        }
        // transpose of the vertical pass: dh x dw -> sh x dw
        scratch.clear();
        scratch.resize(sh * dw, T::zero());
        for y in 0..dh {
            let g = &grad[y * dw..(y + 1) * dw];
            for (s, w) in self.rows.taps(y) {
                let w = T::from_f64_lossy(w);
                for (acc, &v) in scratch[s * dw..(s + 1) * dw].iter_mut().zip(g) {
                    *acc = *acc + v * w;
                }
            }
        }
        // transpose of the horizontal pass: sh x dw -> sh x sw
        out.fill(T::zero());
        for y in 0..sh {
            let g = &scratch[y * dw..(y + 1) * dw];
            let o = &mut out[y * sw..(y + 1) * sw];
            for (x, &v) in g.iter().enumerate() {
                for (s, w) in self.cols.taps(x) {
                    o[s] = o[s] + v * T::from_f64_lossy(w);
                }
            }
        }
    }
}

fn check_target(dst_h: usize, dst_w: usize) -> Result<()> {
    if dst_h == 0 || dst_w == 0 {
        return Err(GunError::InvalidArgument(format!("resize target {dst_h}x{dst_w} is empty")));
    }
    Ok(())
}

/// Bicubic resize of a plane. Values are not clipped.
pub fn bicubic_resize<T: Scalar>(image: &Plane<T>, dst_h: usize, dst_w: usize) -> Result<Plane<T>> {
    check_target(dst_h, dst_w)?;
    let plan = ResamplePlan::new(image.size(), (dst_h, dst_w))?;
    let mut out = vec![T::zero(); dst_h * dst_w];
    plan.apply(image.data(), &mut out, &mut Vec::new());
    Plane::new(dst_h, dst_w, out)
}

/// Transpose of [`bicubic_resize`] from `(src_h, src_w)` to the size of `grad`.
pub fn bicubic_adjoint<T: Scalar>(grad: &Plane<T>, src_h: usize, src_w: usize) -> Result<Plane<T>> {
    check_target(src_h, src_w)?;
    let plan = ResamplePlan::new((src_h, src_w), grad.size())?;
    let mut out = vec![T::zero(); src_h * src_w];
    plan.apply_adjoint(grad.data(), &mut out, &mut Vec::new());
    Plane::new(src_h, src_w, out)
}

/// Produces the low-resolution observation of an HR plane: crop to a
/// multiple of `scale` (top-left anchored), bicubic shrink, clip to `[0, 1]`.
pub fn degrade<T: Scalar>(hr: &Plane<T>, scale: usize) -> Result<Plane<T>> {
    if scale < 2 {
        return Err(GunError::InvalidArgument(format!("degradation scale must be >= 2, got {scale}")));
    }
    let (h, w) = (hr.height() / scale, hr.width() / scale);
    if h == 0 || w == 0 {
        return Err(GunError::InvalidArgument(format!(
            "{}x{} image is smaller than scale {scale}",
            hr.height(),
            hr.width()
        )));
    }
    let cropped = if (h * scale, w * scale) == hr.size() {
        hr.clone()
    } else {
        hr.crop(0, 0, h * scale, w * scale)?
    };
    Ok(bicubic_resize(&cropped, h, w)?.clamp01())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(keys_kernel(0.0), 1.0);
        assert_eq!(keys_kernel(1.0), 0.0);
        assert_eq!(keys_kernel(2.0), 0.0);
        assert_eq!(keys_kernel(-1.0), 0.0);
        assert_eq!(keys_kernel(3.5), 0.0);
        assert!((keys_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((keys_kernel(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn same_size_is_single_unit_tap() {
        let t = AxisTaps::new(7, 7).unwrap();
        for i in 0..7 {
            assert_eq!(t.taps(i).collect::<Vec<_>>(), vec![(i, 1.0)]);
        }
    }

    #[test]
    fn taps_partition_unity_and_stay_in_range() {
        for (s, d) in [(3, 16), (16, 3), (5, 8), (12, 15), (9, 4), (1, 5), (5, 1)] {
            let t = AxisTaps::new(s, d).unwrap();
            for i in 0..d {
                let sum: f64 = t.taps(i).map(|(_, w)| w).sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(t.taps(i).all(|(j, _)| j < s));
            }
        }
    }

    #[test]
    fn rejects_empty_target() {
        let p = Plane::<f32>::filled(3, 3, 1.0);
        assert!(bicubic_resize(&p, 0, 3).is_err());
        assert!(bicubic_adjoint(&p, 3, 0).is_err());
    }

    #[test]
    fn adjoint_rejects_mismatched_plan() {
        let plan = ResamplePlan::new((4, 4), (6, 6)).unwrap();
        let r = std::panic::catch_unwind(|| {
            let mut out = vec![0.0f64; 16];
            plan.apply_adjoint(&[0.0; 25], &mut out, &mut Vec::new());
        });
        assert!(r.is_err());
    }

    #[test]
    fn degrade_contract() {
        let p = Plane::<f32>::filled(8, 8, 0.3);
        let lr = degrade(&p, 2).unwrap();
        assert_eq!(lr.size(), (4, 4));
        assert!(lr.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        assert!(degrade(&p, 1).is_err());
        // non-multiple sizes are cropped first
        let odd = Plane::<f32>::filled(9, 11, 0.5);
        assert_eq!(degrade(&odd, 2).unwrap().size(), (4, 5));
    }

    #[test]
    fn degrade_clips_to_unit_range() {
        let p = Plane::<f64>::from_fn(8, 8, |y, x| if (x / 2 + y / 2) % 2 == 0 { 0.0 } else { 1.0 });
        let lr = degrade(&p, 2).unwrap();
        assert!(lr.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
