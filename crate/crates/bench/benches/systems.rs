use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wf_levy::odes::{q_generator, r_generator};
use wf_levy::{integrate_q, CoefficientGrid, Environment, StepPolicy};

fn env() -> Environment {
    Environment::new(0.8, [(0.2, 0.8)]).unwrap()
}

fn r_apply(c: &mut Criterion) {
    let env = env();
    let mut group = c.benchmark_group("r_generator_apply");
    for cutoff in [16, 32, 64] {
        let generator = r_generator(&env, cutoff);
        let y = CoefficientGrid::initial(&env, cutoff, 1, 1).unwrap().values;
        let mut out = vec![0.0; y.len()];
        group.bench_with_input(BenchmarkId::from_parameter(cutoff), &cutoff, |b, _| {
            b.iter(|| generator.apply(black_box(&y), &mut out))
        });
    }
    group.finish();
}

fn q_apply_and_integrate(c: &mut Criterion) {
    let env = env();
    let generator = q_generator(&env, 16);
    let y: Vec<f64> = (0..16).map(|j| 1.0 / (j + 1) as f64).collect();
    let mut out = vec![0.0; 16];
    c.bench_function("q_generator_apply/16", |b| b.iter(|| generator.apply(black_box(&y), &mut out)));
    c.bench_function("integrate_q/16_to_t1", |b| {
        b.iter(|| integrate_q(black_box(&env), 16, 1, 1.0, StepPolicy::default()).unwrap())
    });
}

criterion_group!(benches, r_apply, q_apply_and_integrate);
criterion_main!(benches);
