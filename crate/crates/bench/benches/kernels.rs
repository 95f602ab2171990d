use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use gun_bench::{activations, conv_params};
use gun_core::data::synthetic_scene;
use gun_core::{bicubic_adjoint, bicubic_resize, build_gun, conv2d_backward, conv2d_forward, GunTopology, Mode, Tensor};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3");
    for side in [20usize, 40] {
        let x = activations([16, 64, side, side]);
        let p = conv_params(64, 64, 3, 1);
        let y = conv2d_forward(&x, &p, 1).unwrap();
        g.throughput(Throughput::Elements((16 * 64 * 64 * 9 * side * side) as u64));
        g.bench_with_input(BenchmarkId::new("forward", side), &side, |b, _| {
            b.iter(|| conv2d_forward(black_box(&x), &p, 1).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("backward", side), &side, |b, _| {
            b.iter(|| conv2d_backward(black_box(&x), &p, &y).unwrap())
        });
    }
    g.finish();
}

fn resize(c: &mut Criterion) {
    let mut g = c.benchmark_group("bicubic");
    let img = synthetic_scene(128, 128, 0);
    g.bench_function("up 128->256", |b| b.iter(|| bicubic_resize(black_box(&img), 256, 256).unwrap()));
    g.bench_function("down 128->64", |b| b.iter(|| bicubic_resize(black_box(&img), 64, 64).unwrap()));
    let grad = synthetic_scene(256, 256, 1);
    g.bench_function("adjoint 128<-256", |b| b.iter(|| bicubic_adjoint(black_box(&grad), 128, 128).unwrap()));
    g.finish();
}

fn network(c: &mut Criterion) {
    let mut g = c.benchmark_group("gun");
    g.sample_size(10);
    for scale in [2u32, 4] {
        let topo = GunTopology::for_scale(scale);
        let mut model = build_gun::<f32>(topo, 0).unwrap();
        let lr = (32, 32);
        let schedule = topo.schedule_for(lr).unwrap();
        let x = Tensor::<f32>::full([1, 1, lr.0, lr.1], 0.5);
        g.bench_with_input(BenchmarkId::new("infer 32x32", scale), &scale, |b, _| {
            b.iter(|| model.forward(black_box(&x), &schedule, Mode::Infer).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, conv, resize, network);
criterion_main!(benches);
