use criterion::{criterion_group, criterion_main, Criterion};
use ovlink_core::{compute_eic, AlignmentConfig, PulseShape};
use std::hint::black_box;

fn eic(c: &mut Criterion) {
    let p_d = PulseShape::root_raised_cosine(0.25, 1.0);
    let mut group = c.benchmark_group("compute_eic");
    for m in [2usize, 4] {
        let p_i = PulseShape::root_raised_cosine(0.25, 1.0 / m as f64);
        let cfg = AlignmentConfig::new(m, 1.0);
        group.bench_function(format!("rrc_m{m}"), |b| {
            b.iter(|| compute_eic(black_box(&p_d), black_box(&p_i), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, eic);
criterion_main!(benches);
