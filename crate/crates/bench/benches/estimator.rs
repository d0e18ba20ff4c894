use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ovlink_bench::{context, frame};
use ovlink_core::{estimate, EstimatorParams, PilotObservations};
use std::hint::black_box;

fn estimator(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate");
    for n_p in [21usize, 51] {
        let (_, ctx) = context(n_p, 3);
        let obs = PilotObservations::from_frame(&frame(&ctx));
        let params = EstimatorParams::for_layout(&ctx.layout, &ctx.fading);
        group.bench_with_input(BenchmarkId::from_parameter(n_p), &obs, |b, obs| {
            b.iter(|| estimate(black_box(obs), &params).unwrap())
        });
    }
    group.finish();
}

fn trial(c: &mut Criterion) {
    let (_, ctx) = context(21, 3);
    c.bench_function("run_trial_desk_all_detectors", |b| {
        b.iter(|| ovlink_core::run_trial(&ctx, black_box(0)).unwrap())
    });
}

criterion_group!(benches, estimator, trial);
criterion_main!(benches);
