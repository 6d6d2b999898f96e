use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tsxd_core::tensor::kernels::{conv2d, matmul, maxpool2d, Padding};
use tsxd_core::Tensor;

fn filled(shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    // teacher layer shapes on a batch of 32
    for (m, k, n) in [(32, 500, 256), (32, 256, 128), (32, 152, 256)] {
        let (a, b) = (filled(&[m, k]), filled(&[k, n]));
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{k}x{n}")), &(a, b), |bench, (a, b)| {
            bench.iter(|| matmul(black_box(a), black_box(b)).unwrap())
        });
    }
    group.finish();
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for side in [32, 64, 112] {
        let x = filled(&[1, side, side]);
        let k = filled(&[32, 1, 3, 3]);
        group.bench_with_input(BenchmarkId::from_parameter(side), &(x, k), |bench, (x, k)| {
            bench.iter(|| conv2d(black_box(x), black_box(k), 1, Padding::Same).unwrap())
        });
    }
    group.finish();
}

fn bench_maxpool(c: &mut Criterion) {
    let x = filled(&[32, 64, 64]);
    c.bench_function("maxpool2d_32x64x64", |b| b.iter(|| maxpool2d(black_box(&x), 2).unwrap()));
}

criterion_group!(benches, bench_matmul, bench_conv, bench_maxpool);
criterion_main!(benches);
