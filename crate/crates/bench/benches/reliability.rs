use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ftpads_core::reliability::{
    monte_carlo_reliability, r_byzantine, r_crash, ModelKind, ReliabilityQuery,
};

fn closed_forms(c: &mut Criterion) {
    let q = ReliabilityQuery::new(100, 1_000_000, 21, 30);
    c.bench_function("r_crash_figure_point", |b| {
        b.iter(|| black_box(r_crash(black_box(&q)).unwrap()))
    });
    c.bench_function("r_byzantine_figure_point", |b| {
        b.iter(|| black_box(r_byzantine(black_box(&q)).unwrap()))
    });
    c.bench_function("crash_curve_l100", |b| {
        b.iter(|| {
            for x in 0..=100 {
                let q = ReliabilityQuery::new(100, 1_000_000, 21, x);
                black_box(r_crash(&q).unwrap());
            }
        })
    });
}

fn monte_carlo(c: &mut Criterion) {
    let q = ReliabilityQuery::new(10, 20, 3, 4);
    c.bench_function("monte_carlo_10k_trials", |b| {
        b.iter(|| {
            black_box(
                monte_carlo_reliability(black_box(&q), true, ModelKind::Crash, 10_000, 7).unwrap(),
            )
        })
    });
}

criterion_group!(benches, closed_forms, monte_carlo);
criterion_main!(benches);
