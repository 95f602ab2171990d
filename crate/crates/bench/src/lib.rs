//! Benchmark fixtures; the benchmarks themselves live in `benches/`.

use gun_core::{he_init, ConvParams, Tensor};

/// Deterministic non-constant activations of the given shape.
pub fn activations(shape: [usize; 4]) -> Tensor<f32> {
    Tensor::from_fn(shape, |[n, c, y, x]| (((n * 31 + c * 17 + y * 7 + x * 3) % 23) as f32 / 22.0) - 0.5)
}

pub fn conv_params(c_in: usize, c_out: usize, k: usize, seed: u64) -> ConvParams<f32> {
    ConvParams {
        weight: he_init([c_out, c_in, k, k], seed),
        bias: vec![0.01; c_out],
    }
}
