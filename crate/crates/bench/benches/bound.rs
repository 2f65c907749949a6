use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcra_bench::reference;
use dcra_core::{build_mdp, upper_bound};
use std::hint::black_box;

fn model_construction(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_mdp");
    for d in [1, 2, 3, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(d), &reference(d), |b, p| {
            b.iter(|| build_mdp(black_box(p)).unwrap())
        });
    }
    group.finish();
}

fn lp_bound(c: &mut Criterion) {
    let mut group = c.benchmark_group("upper_bound");
    group.sample_size(10);
    for d in [1, 2, 3] {
        let model = build_mdp(&reference(d)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(d), &model, |b, m| {
            b.iter(|| upper_bound(black_box(m)).unwrap().value)
        });
    }
    group.finish();
}

criterion_group!(benches, model_construction, lp_bound);
criterion_main!(benches);
