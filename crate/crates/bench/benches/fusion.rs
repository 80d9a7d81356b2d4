use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use std::hint::black_box;

use faceshape::fusion::{fuse_gaussian, fuse_kde, KdeConfig, MeasurementModel, SampleStats};
use faceshape::{RngState, SHAPE_DIM};

fn fixtures() -> (Vec<DVector<f64>>, DVector<f64>, MeasurementModel) {
    let mut rng = RngState::from_seed(6);
    let x_m = DVector::from_fn(SHAPE_DIM, |_, _| rng.normal() * 0.1);
    let samples: Vec<DVector<f64>> = (0..100)
        .map(|_| &x_m + DVector::from_fn(SHAPE_DIM, |_, _| rng.normal() * 0.05))
        .collect();
    let mm = MeasurementModel::new(DMatrix::identity(SHAPE_DIM, SHAPE_DIM) * 0.0025).unwrap();
    (samples, x_m, mm)
}

fn bench_gaussian_fusion(c: &mut Criterion) {
    let (samples, x_m, mm) = fixtures();
    c.bench_function("fuse_gaussian_52d_100samples", |b| {
        b.iter(|| {
            let stats = SampleStats::from_samples(black_box(&samples)).unwrap();
            black_box(fuse_gaussian(&stats, &x_m, &mm).unwrap())
        })
    });
}

fn bench_kde_fusion(c: &mut Criterion) {
    let (samples, x_m, mm) = fixtures();
    let cfg = KdeConfig::default();
    c.bench_function("fuse_kde_52d_100samples", |b| {
        b.iter(|| black_box(fuse_kde(black_box(&samples), &x_m, &mm, &cfg).unwrap()))
    });
}

criterion_group!(benches, bench_gaussian_fusion, bench_kde_fusion);
criterion_main!(benches);
