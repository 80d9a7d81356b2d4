//! Shared fixtures for the benchmark targets.

use faceshape::frontal::{train_frontal, FrontalPriorModel};
use faceshape::shape::ShapeVector;
use faceshape::synth::{make_dataset, DatasetConfig};
use faceshape::{RngState, TrainConfig};

pub fn bench_corpus(n: usize) -> Vec<ShapeVector> {
    let ds = make_dataset(
        &DatasetConfig {
            shape_count: n,
            ..Default::default()
        },
        &mut RngState::from_seed(404),
    )
    .expect("generation succeeds");
    ds.shapes.into_iter().map(|s| s.shape).collect()
}

pub fn bench_frontal_model() -> FrontalPriorModel {
    let shapes = bench_corpus(200);
    let cfg = TrainConfig {
        epochs: 40,
        rng_seed: 1,
        ..Default::default()
    };
    train_frontal(&shapes, (16, 8), &cfg).expect("training succeeds")
}
