//! Finite-difference checks of every analytic gradient, in f64.

use gun_core::conv::{conv2d_backward, conv2d_forward, relu_backward, relu_forward, ConvParams};
use gun_core::layers::{bn_backward, bn_forward, upsample_backward, upsample_forward, BatchNormState, Mode};
use gun_core::train::mse_loss;
use gun_core::{BackwardResample, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::{network_fd_worst, random, rel_err, H};

/// Central difference of `f` along each coordinate of `x`.
fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + H;
            let up = f(x);
            x[i] = orig - H;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn assert_close(what: &str, analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        assert!(e < tol, "{what}[{i}]: analytic {a} numeric {n} rel {e}");
    }
}

#[test]
fn conv_gradients() {
    let x = random([2, 3, 5, 6], 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = ConvParams::<f64>::he(3, 4, 3, &mut rng);
    let g = random([2, 4, 5, 6], 3);
    let (gi, gw, gb) = conv2d_backward(&x, &params, &g).unwrap();

    let mut xv = x.data().to_vec();
    let num = numeric_grad(&mut xv, |v| {
        let t = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
        conv2d_forward(&t, &params, 1).unwrap().dot(&g)
    });
    assert_close("conv input", gi.data(), &num, 1e-6);

    let mut wv = params.weight.data().to_vec();
    let num = numeric_grad(&mut wv, |v| {
        let mut p = params.clone();
        p.weight.data_mut().copy_from_slice(v);
        conv2d_forward(&x, &p, 1).unwrap().dot(&g)
    });
    assert_close("conv weight", gw.data(), &num, 1e-6);

    let mut bv = params.bias.clone();
    let num = numeric_grad(&mut bv, |v| {
        let mut p = params.clone();
        p.bias.copy_from_slice(v);
        conv2d_forward(&x, &p, 1).unwrap().dot(&g)
    });
    assert_close("conv bias", &gb, &num, 1e-6);
}

#[test]
fn relu_gradient() {
    // keep every sample away from the kink
    let x = random([1, 2, 4, 4], 4).map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    let g = random([1, 2, 4, 4], 5);
    let gi = relu_backward(&x, &g).unwrap();
    let mut xv = x.data().to_vec();
    let num = numeric_grad(&mut xv, |v| {
        relu_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).dot(&g)
    });
    assert_close("relu", gi.data(), &num, 1e-6);
}

#[test]
fn batchnorm_gradients() {
    let x = random([3, 2, 4, 5], 6);
    let g = random([3, 2, 4, 5], 7);
    let mut state = BatchNormState::<f64>::new(2);
    state.gamma = vec![1.3, -0.7];
    state.beta = vec![0.2, 0.1];
    let (_, cache) = bn_forward(&x, &mut state.clone(), Mode::Train).unwrap();
    let (gi, gg, gbeta) = bn_backward(&cache, &g).unwrap();
    let eval = |x: &Tensor<f64>, s: &BatchNormState<f64>| bn_forward(x, &mut s.clone(), Mode::Train).unwrap().0.dot(&g);

    let mut xv = x.data().to_vec();
    let num = numeric_grad(&mut xv, |v| eval(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &state));
    assert_close("bn input", gi.data(), &num, 1e-5);

    let mut gv = state.gamma.clone();
    let num = numeric_grad(&mut gv, |v| {
        let mut s = state.clone();
        s.gamma.copy_from_slice(v);
        eval(&x, &s)
    });
    assert_close("bn gamma", &gg, &num, 1e-6);

    let mut bv = state.beta.clone();
    let num = numeric_grad(&mut bv, |v| {
        let mut s = state.clone();
        s.beta.copy_from_slice(v);
        eval(&x, &s)
    });
    assert_close("bn beta", &gbeta, &num, 1e-6);
}

#[test]
fn upsample_adjoint_gradient() {
    for &(src, dst) in &[((5, 5), (8, 8)), ((4, 7), (9, 10)), ((6, 6), (6, 6))] {
        let x = random([2, 1, src.0, src.1], 8);
        let g = random([2, 1, dst.0, dst.1], 9);
        let gi = upsample_backward(&g, src, BackwardResample::Adjoint).unwrap();
        let mut xv = x.data().to_vec();
        let num = numeric_grad(&mut xv, |v| {
            upsample_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), dst).unwrap().dot(&g)
        });
        assert_close("upsample", gi.data(), &num, 1e-6);
    }
}

#[test]
fn mse_gradient() {
    let p = random([2, 1, 3, 3], 10);
    let t = random([2, 1, 3, 3], 11);
    let (_, g) = mse_loss(&p, &t).unwrap();
    let mut pv = p.data().to_vec();
    let num = numeric_grad(&mut pv, |v| mse_loss(&Tensor::from_vec(p.shape(), v.to_vec()).unwrap(), &t).unwrap().0);
    assert_close("mse", g.data(), &num, 1e-6);
}

#[test]
fn full_network_gradients() {
    let start = std::time::Instant::now();
    let (checked, worst) = network_fd_worst(|name, i, a, n| panic!("{name}[{i}]: analytic {a} numeric {n}"));
    assert!(worst < 1e-4);
    assert!(start.elapsed().as_secs() < 60);
    eprintln!("checked {checked} parameters, worst relative error {worst:.3e}");
}
