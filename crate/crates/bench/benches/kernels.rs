use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use moderr::gaussian::{iterate_step, limit_deviations, PrecisionIteration};
use moderr::models::{darcy2d_linearize, darcy2d_solve, DarcyGrid, LinearPair};
use moderr::particles::{importance_update, mixture_update, model_error_sample, BoundedNoiseDensity, RngSpec};
use moderr_bench::{darcy_config, darcy_field, ensemble, source1d_model, SEED};
use nalgebra::{DMatrix, DVector};
use std::hint::black_box;

fn gaussian_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("gaussian");
    for level in [6u32, 8] {
        let (model, b) = source1d_model(4, level).unwrap();
        let prior = model.prior().clone();
        group.bench_with_input(BenchmarkId::new("iterate_step", level), &level, |bench, _| {
            bench.iter(|| iterate_step(&model, black_box(&prior), &b).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("limit_deviations_30", level), &level, |bench, _| {
            bench.iter(|| limit_deviations(&model, black_box(&b), 30).unwrap())
        });
        let map = PrecisionIteration::new(&model).unwrap();
        let b0 = map.prior_precision().clone();
        group.bench_with_input(BenchmarkId::new("precision_apply", level), &level, |bench, _| {
            bench.iter(|| map.apply(black_box(&b0)).unwrap())
        });
    }
    group.finish();
}

fn darcy_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("darcy");
    group.sample_size(10);
    let config = darcy_config();
    for n in [32usize, 64, 128] {
        let grid = DarcyGrid::new(n).unwrap();
        let u = darcy_field(&grid);
        group.bench_with_input(BenchmarkId::new("solve", n), &n, |bench, _| {
            bench.iter(|| darcy2d_solve(black_box(&u), &grid, |x, y| config.source(x, y)).unwrap())
        });
    }
    let grid = DarcyGrid::new(32).unwrap();
    let u = darcy_field(&grid);
    group.bench_function("linearize_32", |bench| {
        bench.iter(|| darcy2d_linearize(black_box(&u), &grid, &config).unwrap())
    });
    group.finish();
}

fn particle_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("particles");
    let d = 4;
    let a = DMatrix::from_fn(3, d, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
    let pair = LinearPair::new(&a * 1.1, a.clone()).unwrap();
    let gamma = DMatrix::identity(3, 3) * 0.1;
    let b = DVector::from_element(3, 0.5);
    let noise = BoundedNoiseDensity::gaussian(gamma.clone()).unwrap();
    let rng = RngSpec::new(SEED);
    for n in [500usize, 2000] {
        let (prior, e) = ensemble(d, n).unwrap();
        let me = model_error_sample(&e, &pair).unwrap();
        group.bench_with_input(BenchmarkId::new("mixture_update", n), &n, |bench, _| {
            bench.iter(|| mixture_update(black_box(&e), &me, &a, &gamma, &prior, &b, &rng).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("importance_update", n), &n, |bench, _| {
            bench.iter(|| importance_update(black_box(&e), &pair, &noise, &prior, &b, &rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gaussian_kernels, darcy_kernels, particle_kernels);
criterion_main!(benches);
