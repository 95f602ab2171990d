//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use gun_core::network::{build_gun, GunModel, GunTopology, Magnification};
use gun_core::resample::keys_kernel;
use gun_core::train::mse_loss;
use gun_core::{BackwardResample, Mode, Plane, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
// Parameters whose exact gradient is zero (conv biases ahead of a BN)
// produce rounding-level differences; compare those absolutely.
pub const FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_plane(h: usize, w: usize, seed: u64) -> Plane<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Plane::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn inner(a: &Plane<f64>, b: &Plane<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Un-normalized kernel weights of one axis: `(unclamped source index, weight)`.
pub fn raw_axis_weights(src: usize, dst: usize, i: usize) -> Vec<(i64, f64)> {
    let ks = (dst as f64 / src as f64).min(1.0);
    let c = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    let reach = (2.0 / ks).ceil() as i64 + 1;
    let base = c.floor() as i64;
    (base - reach..=base + reach)
        .map(|j| (j, ks * keys_kernel(ks * (c - j as f64))))
        .collect()
}

/// Direct 2-D evaluation: every output pixel sums kernel products over a
/// square neighbourhood, with clamped reads and 2-D normalization.
pub fn brute_resize(img: &Plane<f64>, dh: usize, dw: usize) -> Plane<f64> {
    let (sh, sw) = img.size();
    Plane::from_fn(dh, dw, |i, j| {
        let ry = raw_axis_weights(sh, dh, i);
        let rx = raw_axis_weights(sw, dw, j);
        let mut acc = 0.0;
        let mut total = 0.0;
        for &(p, wy) in &ry {
            for &(q, wx) in &rx {
                let w = wy * wx;
                let (pc, qc) = (p.clamp(0, sh as i64 - 1) as usize, q.clamp(0, sw as i64 - 1) as usize);
                acc += w * img.get(pc, qc);
                total += w;
            }
        }
        acc / total
    })
}

pub fn tiny_gun() -> GunModel<f64> {
    let topo = GunTopology {
        magnification: Magnification::Explicit { lr: (5, 5), hr: (8, 8) },
        steps: 2,
        depth: 2,
        channels: 4,
        bn_on_input: true,
        backward_resample: BackwardResample::Adjoint,
    };
    let mut m = build_gun::<f64>(topo, 12).unwrap();
    // non-trivial BN affine parameters so their gradients are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for bn in m.bn_states_mut() {
        for v in bn.gamma.iter_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        for v in bn.beta.iter_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    m
}

/// Central differences of the batch MSE with respect to every learnable
/// parameter of [`tiny_gun`]; `on_fail(name, index, analytic, numeric)` is
/// called for each entry at or above 1e-4. Returns the count checked and
/// the worst relative error.
pub fn network_fd_worst(mut on_fail: impl FnMut(&str, usize, f64, f64)) -> (usize, f64) {
    let mut model = tiny_gun();
    let x = random([3, 1, 5, 5], 14);
    let target = random([3, 1, 8, 8], 15);
    let schedule = model.topology().schedule_for((5, 5)).unwrap();
    let loss = |m: &GunModel<f64>| {
        let (pred, _) = m.clone().forward(&x, &schedule, Mode::Train).unwrap();
        mse_loss(&pred, &target).unwrap().0
    };
    let (pred, cache) = model.clone().forward(&x, &schedule, Mode::Train).unwrap();
    let (_, grad_out) = mse_loss(&pred, &target).unwrap();
    let grads = model.backward(&cache, &grad_out).unwrap();

    let names: Vec<String> = model.params_mut().iter().map(|p| p.name.clone()).collect();
    assert_eq!(names.len(), grads.entries.len());
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (pi, name) in names.iter().enumerate() {
        let analytic = grads.get(name).unwrap().to_vec();
        let len = model.params_mut()[pi].values.len();
        for i in 0..len {
            let orig = model.params_mut()[pi].values[i];
            model.params_mut()[pi].values[i] = orig + H;
            let up = loss(&model);
            model.params_mut()[pi].values[i] = orig - H;
            let down = loss(&model);
            model.params_mut()[pi].values[i] = orig;
            let n = (up - down) / (2.0 * H);
            let e = rel_err(analytic[i], n);
            worst = worst.max(e);
            if e >= 1e-4 {
                on_fail(name, i, analytic[i], n);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, model.param_count());
    (checked, worst)
}
