use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ntklab_bench::{network, standard_data};
use ntklab_core::kernel::{gram_h, ntk, KernelRegressor};
use ntklab_core::trainer::GdStepper;
use ntklab_core::GradientFeatures;
use std::hint::black_box;

fn gd_step(c: &mut Criterion) {
    let data = standard_data(100);
    let mut group = c.benchmark_group("gd_step");
    for width in [1_000, 10_000] {
        let mut params = network(width, &data);
        let mut stepper = GdStepper::new(&params, &data).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(width), &width, |b, _| {
            // a tiny step keeps the weights near initialization across iterations
            b.iter(|| stepper.step(&mut params, 1e-6, 0).unwrap())
        });
    }
    group.finish();
}

fn features(c: &mut Criterion) {
    let data = standard_data(100);
    let params = network(5_000, &data);
    c.bench_function("gradient_features_build/m=5000", |b| {
        b.iter(|| GradientFeatures::build(black_box(&params), &data).unwrap())
    });
}

fn kernel(c: &mut Criterion) {
    let data = standard_data(100);
    let x = data.augmented_row(0).to_vec();
    let y = data.augmented_row(1).to_vec();
    c.bench_function("ntk_pair", |b| {
        b.iter(|| ntk(black_box(&x), black_box(&y)).unwrap())
    });
    c.bench_function("gram_h/n=100", |b| {
        b.iter(|| gram_h(black_box(&data)).unwrap())
    });
    let kr = KernelRegressor::fit(&data).unwrap();
    let q = data.input(2).to_vec();
    c.bench_function("kernel_regression_predict/n=100", |b| {
        b.iter(|| kr.predict(black_box(&q)).unwrap())
    });
}

criterion_group!(benches, gd_step, features, kernel);
criterion_main!(benches);
