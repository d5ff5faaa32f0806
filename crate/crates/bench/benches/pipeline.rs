use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dhgcn::autodiff::Tape;
use dhgcn::geometry::knn;
use dhgcn::{ground_truth, ForwardOptions, Model, ModelConfig};
use dhgcn_bench::cloud;

fn partition(c: &mut Criterion) {
    let mut group = c.benchmark_group("ground_truth");
    for split in [2, 3, 4] {
        let x = cloud(512, 1);
        group.bench_with_input(BenchmarkId::from_parameter(split), &split, |b, &s| {
            b.iter(|| ground_truth(black_box(&x), s, 1.2).unwrap())
        });
    }
    group.finish();
}

fn neighbors(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn");
    let x = cloud(512, 2).flat();
    group.bench_function("512x3_k16", |b| {
        b.iter(|| knn(black_box(&x), &x, 3, 16).unwrap())
    });
    let wide: Vec<f64> = (0..512 * 64)
        .map(|i| ((i * 7919) % 1009) as f64 / 1009.0)
        .collect();
    group.bench_function("512x64_k16", |b| {
        b.iter(|| knn(black_box(&wide), &wide, 64, 16).unwrap())
    });
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    let x = cloud(512, 3);
    let model = Model::new(ModelConfig::default()).unwrap();
    let (partition, hops) = model.ground_truth(&x).unwrap();
    group.bench_function("forward_loss", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let out = model
                .forward(
                    &mut tape,
                    &x,
                    &partition,
                    &hops,
                    &ForwardOptions::loss_only(),
                )
                .unwrap();
            tape.value(out.loss).item()
        })
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let out = model
                .forward(
                    &mut tape,
                    &x,
                    &partition,
                    &hops,
                    &ForwardOptions::loss_only(),
                )
                .unwrap();
            tape.backward(out.loss).unwrap()
        })
    });
    group.bench_function("descriptor", |b| {
        b.iter(|| model.descriptor(black_box(&x)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, partition, neighbors, network);
criterion_main!(benches);
