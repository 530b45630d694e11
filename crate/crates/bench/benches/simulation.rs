use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use prwlab::{simulate_counts, MeanTables, SimOptions, StableSpec};
use prwlab::experiments::tree_stream;
use prwlab::stable_limit::{limit_functional, simulate_path};
use prwlab::{stream_for, Role, StreamKey};
use prwlab_bench::{exp_model, heavy_model};

fn tree(c: &mut Criterion) {
    let model = heavy_model();
    let opts = SimOptions::default();
    let mut r = 0u64;
    c.bench_function("tree heavy t=1000 j=3", |b| {
        b.iter(|| {
            r += 1;
            black_box(simulate_counts(&model, 1000.0, 3, &tree_stream(7, r, 0), &opts).unwrap())
        })
    });
    let model = exp_model();
    c.bench_function("tree exp t=20 j=4 aggregated", |b| {
        b.iter(|| {
            r += 1;
            black_box(simulate_counts(&model, 20.0, 4, &tree_stream(7, r, 0), &opts).unwrap())
        })
    });
}

fn numerics(c: &mut Criterion) {
    let model = heavy_model();
    c.bench_function("mean tables heavy t=4000 j=8", |b| {
        b.iter(|| black_box(MeanTables::compute(&model, None, 4000.0, 8).unwrap()))
    });
}

fn limit(c: &mut Criterion) {
    let spec = StableSpec::new(1.5).unwrap();
    let mut r = 0u64;
    c.bench_function("limit path alpha=1.5 dy=0.01 u=1", |b| {
        b.iter(|| {
            r += 1;
            let mut s = stream_for(StreamKey::new(3, r, Role::LimitPath));
            let path = simulate_path(&spec, 0.01, 40.0, &mut s).unwrap();
            black_box(limit_functional(&path, &[1.0]).unwrap())
        })
    });
}

criterion_group!(benches, tree, numerics, limit);
criterion_main!(benches);
