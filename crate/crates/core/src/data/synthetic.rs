//! Seeded procedural grayscale scenes: smooth backgrounds with hard-edged
//! rectangles, disks, bars and stripe fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::plane::Plane;

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disk { cy: f64, cx: f64, r: f64 },
    Bar { cy: f64, cx: f64, ny: f64, nx: f64, half: f64 },
    Stripes { y0: f64, x0: f64, y1: f64, x1: f64, ny: f64, nx: f64, period: f64 },
}

impl Shape {
    fn covers(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Bar { cy, cx, ny, nx, half } => ((y - cy) * ny + (x - cx) * nx).abs() <= half,
            Shape::Stripes { y0, x0, y1, x1, ny, nx, period } => {
                y >= y0 && y < y1 && x >= x0 && x < x1 && ((y * ny + x * nx) / period).floor() as i64 % 2 == 0
            }
        }
    }
}

/// A `h x w` scene in `[0, 1]`, fully determined by `seed`.
pub fn synthetic_scene(h: usize, w: usize, seed: u64) -> Plane<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let base = rng.random_range(0.2..0.8);
    let gy = rng.random_range(-0.3..0.3);
    let gx = rng.random_range(-0.3..0.3);
    let count = rng.random_range(6..12);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let level: f64 = rng.random_range(0.0..1.0);
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let size = rng.random_range(0.08..0.35) * hf.min(wf);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (ny, nx) = (angle.sin(), angle.cos());
        let shape = match rng.random_range(0..4) {
            0 => Shape::Rect { y0: cy - size, x0: cx - size, y1: cy + size, x1: cx + size * 1.5 },
            1 => Shape::Disk { cy, cx, r: size },
            2 => Shape::Bar { cy, cx, ny, nx, half: rng.random_range(1.5..5.0) },
            _ => Shape::Stripes {
                y0: cy - size,
                x0: cx - size,
                y1: cy + size,
                x1: cx + size,
                ny,
                nx,
                period: rng.random_range(5.0..12.0),
            },
        };
        shapes.push((shape, level));
    }
    Plane::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut v = base + gy * (yf / hf - 0.5) + gx * (xf / wf - 0.5);
        for (s, level) in &shapes {
            if s.covers(yf, xf) {
                v = *level;
            }
        }
        v.clamp(0.0, 1.0) as f32
    })
}
