//! Benchmarks for the hot paths: frame encoding, ODE integration,
//! phantom rasterization, and segmentation metrics.

use criterion::{Criterion, criterion_group, criterion_main};
use std::hint::black_box;

use flow4d_core::autoenc::Latent;
use flow4d_core::cardiacflow::pgk_encode;
use flow4d_core::fm::{FlowModel, integrate_euler};
use flow4d_core::metrics::{dsc, hd95};
use flow4d_core::phantom::{DEFAULT_DIMS, generate_subject, render_frame};

fn bench_pgk_encode(c: &mut Criterion) {
    c.bench_function("pgk_encode M=50", |b| {
        b.iter(|| pgk_encode(black_box(17), black_box(50), black_box(1.5)).unwrap())
    });
}

fn bench_euler(c: &mut Criterion) {
    let model = FlowModel::new(32, vec![64, 64], 16, 100, 0);
    let z0 = Latent(vec![0.1; 32]);
    c.bench_function("euler d=32 T=100", |b| {
        b.iter(|| integrate_euler(&model, black_box(&z0), 100).unwrap())
    });
    c.bench_function("euler d=32 T=1", |b| {
        b.iter(|| integrate_euler(&model, black_box(&z0), 1).unwrap())
    });
}

fn bench_phantom_render(c: &mut Criterion) {
    let subject = generate_subject(0, DEFAULT_DIMS);
    c.bench_function("render_frame 32x32x40", |b| {
        b.iter(|| render_frame(black_box(&subject), 1, 20, DEFAULT_DIMS).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let subject = generate_subject(1, DEFAULT_DIMS);
    let a = render_frame(&subject, 1, 20, DEFAULT_DIMS).unwrap();
    let b_frame = render_frame(&subject, 10, 20, DEFAULT_DIMS).unwrap();
    c.bench_function("dsc 32x32x40", |b| {
        b.iter(|| dsc(black_box(&a), black_box(&b_frame), 1).unwrap())
    });
    c.bench_function("hd95 32x32x40", |b| {
        b.iter(|| hd95(black_box(&a), black_box(&b_frame), 1).unwrap())
    });
}

criterion_group!(
    benches,
    bench_pgk_encode,
    bench_euler,
    bench_phantom_render,
    bench_metrics
);
criterion_main!(benches);
