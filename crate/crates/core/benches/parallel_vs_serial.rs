//! Side-by-side timing of the data-parallel kernels against their
//! sequential fallbacks. With the `parallel` feature disabled both paths
//! coincide, so the comparison is only meaningful under the default
//! feature set on a multi-core host.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tacsnn_core::encoding::rate_encode_batch;
use tacsnn_core::sparsity::{skip_fraction_mc_with, SimdModel};
use tacsnn_core::tensor::{conv2d_with, ConvSpec, Tensor};
use tacsnn_core::Exec;

fn random_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(7);
    let spec = ConvSpec::new(8, 16, 3).with_padding(1);
    let input = random_tensor(&mut rng, &[16, 8, 32, 32]);
    let weights = random_tensor(&mut rng, &spec.weight_shape());

    let mut group = c.benchmark_group("conv2d_batch16_8x32x32");
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::new("exec", format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| conv2d_with(exec, black_box(&input), &weights, None, &spec).unwrap())
        });
    }
    group.finish();
}

fn bench_skip_fraction_mc(c: &mut Criterion) {
    let model = SimdModel::new(32, 0.1).unwrap();
    let mut group = c.benchmark_group("skip_fraction_mc_200k");
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::new("exec", format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| skip_fraction_mc_with(exec, &model, 200_000, 42).unwrap())
        });
    }
    group.finish();
}

fn bench_rate_encode(c: &mut Criterion) {
    let images: Vec<Tensor> = (0..32).map(|i| Tensor::filled(&[1, 14, 14], 0.02 * i as f32)).collect();
    let mut group = c.benchmark_group("rate_encode_batch32_t16");
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::new("exec", format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| rate_encode_batch(black_box(&images), 16, 99, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv2d, bench_skip_fraction_mc, bench_rate_encode);
criterion_main!(benches);
