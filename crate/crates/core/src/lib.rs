//! Face-shape prior models built on restricted Boltzmann machines.
//!
//! The crate provides:
//!
//! - [`rbm`] — binary and Gaussian-Bernoulli RBM primitives: energies,
//!   conditionals, Gibbs sweeps, contrastive-divergence training and exact
//!   enumeration oracles for tiny models.
//! - [`frontal`] — a two-layer deep belief network prior over frontal face
//!   shapes with varying expressions, plus local MCMC sampling and
//!   measurement correction.
//! - [`pose`] — a factorized three-way RBM linking frontal and posed shapes,
//!   with joint-likelihood training and the combined two-part sampler.
//! - [`fusion`] — Gaussian closed-form MAP fusion and KDE fixed-point fusion
//!   of prior samples with measurements.
//! - [`tracking`] — constant-velocity Kalman filtering, the per-frame
//!   fuse-and-track loop and the interocular-normalized error metric.
//! - [`synth`] — a synthetic 26-landmark face generator: expression
//!   deformations, 3D pose projection, eye normalization, corruption models
//!   and dataset emission.
//! - [`io`] — JSON model documents and JSON-Lines corpus formats.

pub mod error;
pub mod frontal;
pub mod fusion;
pub mod io;
pub mod pose;
pub mod rbm;
pub mod rng;
pub mod shape;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
pub use frontal::{FrontalPriorModel, SamplerConfig};
pub use fusion::{FusionMethod, KdeConfig, MeasurementModel, SampleStats};
pub use pose::{PosePriorModel, ThreeWayParams};
pub use rbm::{BinaryRbmParams, GbRbmParams, TrainConfig};
pub use rng::RngState;
pub use shape::{ShapeVector, Standardizer, LANDMARK_COUNT, SHAPE_DIM};
pub use synth::{CanonicalFace3D, CorruptionMode, CorruptionSpec, ExpressionLabel, ExpressionSpec};
pub use tracking::{KalmanState, ShapePrior, ShapeSequence, TrackReport};
