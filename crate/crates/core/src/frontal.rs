//! Frontal face-shape prior: a two-layer deep belief network.
//!
//! The bottom layer is a Gaussian-Bernoulli RBM over standardized shape
//! coordinates, the top layer a binary RBM over the first layer's hidden
//! probabilities. Layers are trained greedily, bottom up. Sampling runs full
//! up-down sweeps and stays local to its initialization, which is what the
//! measurement-correction step relies on.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fusion::{self, FusionMethod, MeasurementModel};
use crate::rbm::{BinaryRbmParams, GbRbmParams, TrainConfig};
use crate::rng::RngState;
use crate::shape::{ShapeVector, Standardizer, SHAPE_DIM};

/// Tolerance used to accept training shapes as eye-normalized.
pub const NORMALIZED_TOL: f64 = 1e-6;

/// Local MCMC sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Full up-down sweeps per emitted sample.
    pub sweeps_per_sample: usize,
    /// Number of samples to emit.
    pub sample_count: usize,
    /// Restart every sample from the measurement instead of chaining.
    pub restart_from_measurement: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sweeps_per_sample: 2,
            sample_count: 100,
            restart_from_measurement: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps_per_sample == 0 {
            return Err(Error::invalid("sweeps_per_sample must be >= 1"));
        }
        if self.sample_count == 0 {
            return Err(Error::invalid("sample_count must be >= 1"));
        }
        Ok(())
    }
}

/// Two-layer DBN prior over eye-normalized frontal shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontalPriorModel {
    /// Gaussian-visible layer over standardized coordinates (visible 52).
    pub layer1: GbRbmParams,
    /// Binary layer over layer-1 hidden probabilities.
    pub layer2: BinaryRbmParams,
    pub standardizer: Standardizer,
}

impl FrontalPriorModel {
    pub fn new(
        layer1: GbRbmParams,
        layer2: BinaryRbmParams,
        standardizer: Standardizer,
    ) -> Result<Self> {
        if layer1.visible_count() != SHAPE_DIM {
            return Err(Error::dims(format!(
                "layer1 must have {SHAPE_DIM} visible units, got {}",
                layer1.visible_count()
            )));
        }
        if layer1.hidden_count() != layer2.visible_count() {
            return Err(Error::dims(format!(
                "layer1 hidden size {} must equal layer2 visible size {}",
                layer1.hidden_count(),
                layer2.visible_count()
            )));
        }
        if layer1.visible_count() != standardizer.dim() {
            return Err(Error::dims(format!(
                "layer1 visible size {} must equal standardizer dimension {}",
                layer1.visible_count(),
                standardizer.dim()
            )));
        }
        if !standardizer.is_valid() {
            return Err(Error::invalid("standardizer has invalid entries"));
        }
        Ok(Self {
            layer1,
            layer2,
            standardizer,
        })
    }

    pub fn hidden_sizes(&self) -> (usize, usize) {
        (self.layer1.hidden_count(), self.layer2.hidden_count())
    }

    /// One full up-down sweep in standardized space:
    /// `h1 ~ p(h1|x)`, `h2 ~ p(h2|h1)`, `h1 ~ p(h1|h2)`, `x ~ p(x|h1)`.
    fn up_down_sweep(&self, x: &DVector<f64>, rng: &mut RngState) -> Result<DVector<f64>> {
        let h1 = sample_binary(&self.layer1.hidden_conditional(x)?, rng);
        let h2 = sample_binary(&self.layer2.hidden_conditional(&h1)?, rng);
        let h1_down = sample_binary(&self.layer2.visible_conditional(&h2)?, rng);
        self.layer1.sample_visible(&h1_down, rng)
    }

    /// Draw `cfg.sample_count` local prior samples around `x_init`.
    ///
    /// Each sample is the end state of `cfg.sweeps_per_sample` up-down
    /// sweeps, started from `x_init` in restart mode or from the previous
    /// sample's end state otherwise. Samples are returned de-standardized.
    pub fn sample_local_prior(
        &self,
        x_init: &ShapeVector,
        cfg: &SamplerConfig,
        rng: &mut RngState,
    ) -> Result<Vec<ShapeVector>> {
        cfg.validate()?;
        let start = self.standardizer.standardize(x_init);
        let mut chain = start.clone();
        let mut samples = Vec::with_capacity(cfg.sample_count);
        for _ in 0..cfg.sample_count {
            let mut x = if cfg.restart_from_measurement {
                start.clone()
            } else {
                chain.clone()
            };
            for _ in 0..cfg.sweeps_per_sample {
                x = self.up_down_sweep(&x, rng)?;
            }
            chain = x.clone();
            samples.push(self.standardizer.destandardize(&x)?);
        }
        Ok(samples)
    }

    /// Correct a measured shape: sample the prior locally around it and fuse
    /// the samples with the measurement.
    pub fn correct_shape(
        &self,
        x_measured: &ShapeVector,
        sampler: &SamplerConfig,
        mm: &MeasurementModel,
        method: &FusionMethod,
        rng: &mut RngState,
    ) -> Result<ShapeVector> {
        let samples = self.sample_local_prior(x_measured, sampler, rng)?;
        fusion::fuse_shape(&samples, x_measured, mm, method)
    }

    /// Exact log-likelihood of shapes under the bottom layer alone
    /// (standardized space), for small hidden sizes.
    pub fn layer1_exact_log_likelihood(&self, shapes: &[ShapeVector]) -> Result<f64> {
        let data: Vec<DVector<f64>> = shapes
            .iter()
            .map(|s| self.standardizer.standardize(s))
            .collect();
        self.layer1.exact_log_likelihood(&data)
    }
}

fn sample_binary(probs: &DVector<f64>, rng: &mut RngState) -> DVector<f64> {
    DVector::from_fn(probs.len(), |j, _| {
        if rng.bernoulli(probs[j]) {
            1.0
        } else {
            0.0
        }
    })
}

/// Train the two-layer frontal prior on eye-normalized shapes.
///
/// Layer 1 is a Gaussian-Bernoulli RBM trained by CD on standardized
/// coordinates; layer 2 is a binary RBM trained on layer 1's hidden
/// probabilities of the data (mean-field, never raw coordinates).
pub fn train_frontal(
    shapes: &[ShapeVector],
    hidden_sizes: (usize, usize),
    cfg: &TrainConfig,
) -> Result<FrontalPriorModel> {
    cfg.validate()?;
    let (h1, h2) = hidden_sizes;
    if h1 == 0 || h2 == 0 {
        return Err(Error::invalid("hidden sizes must be positive"));
    }
    if shapes.len() < 2 {
        return Err(Error::EmptyInput(
            "frontal training needs at least two shapes".into(),
        ));
    }
    for (i, s) in shapes.iter().enumerate() {
        if !s.is_normalized(NORMALIZED_TOL) {
            return Err(Error::NotNormalized(format!(
                "training shape {i} is not eye-normalized"
            )));
        }
    }

    let standardizer = Standardizer::fit(shapes)?;
    let data: Vec<DVector<f64>> = shapes.iter().map(|s| standardizer.standardize(s)).collect();

    let mut rng = RngState::from_seed(cfg.rng_seed);
    let init1 = GbRbmParams::random_init(SHAPE_DIM, h1, 0.01, &mut rng);
    let layer1 = init1.train(&data, cfg, &mut rng)?;

    let hidden_data: Vec<DVector<f64>> = data
        .iter()
        .map(|x| layer1.hidden_conditional(x))
        .collect::<Result<_>>()?;
    debug_assert!(hidden_data.iter().all(|h| h.len() == h1));

    let init2 = BinaryRbmParams::random_init(h1, h2, 0.01, &mut rng);
    let layer2 = init2.train(&hidden_data, cfg, &mut rng)?;

    FrontalPriorModel::new(layer1, layer2, standardizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::LANDMARK_COUNT;

    /// A normalized, slightly irregular base shape for training tests.
    fn base_shape() -> ShapeVector {
        let mut pts: Vec<(f64, f64)> = (0..LANDMARK_COUNT)
            .map(|i| {
                let a = i as f64;
                ((a * 0.713).sin() * 0.8, (a * 0.301).cos() * 0.6 - 0.3)
            })
            .collect();
        // Plant eyes so normalization is well-defined.
        let eyes_left = [(-0.6, 0.02), (-0.5, 0.07), (-0.4, 0.02), (-0.5, -0.03)];
        let eyes_right = [(0.4, 0.02), (0.5, 0.07), (0.6, 0.02), (0.5, -0.03)];
        for (k, p) in eyes_left.iter().enumerate() {
            pts[6 + k] = *p;
        }
        for (k, p) in eyes_right.iter().enumerate() {
            pts[10 + k] = *p;
        }
        ShapeVector::from_points(&pts)
            .unwrap()
            .normalized_by_eyes()
            .unwrap()
    }

    fn jittered_corpus(n: usize, seed: u64) -> Vec<ShapeVector> {
        let mut rng = RngState::from_seed(seed);
        let base = base_shape();
        (0..n)
            .map(|_| {
                let v = DVector::from_fn(SHAPE_DIM, |i, _| {
                    base.coords()[i] + 0.03 * rng.normal()
                });
                ShapeVector::from_vector(v)
                    .unwrap()
                    .normalized_by_eyes()
                    .unwrap()
            })
            .collect()
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 60,
            rng_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn too_few_shapes_is_an_error() {
        let err = train_frontal(&[base_shape()], (8, 4), &quick_cfg(1));
        assert!(matches!(err, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn unnormalized_input_is_an_error() {
        let mut raw = base_shape();
        // Blow up the scale so the interocular distance is no longer 1.
        let scaled = DVector::from_fn(SHAPE_DIM, |i, _| raw.coords()[i] * 3.0);
        raw = ShapeVector::from_vector(scaled).unwrap();
        let err = train_frontal(&[raw.clone(), raw], (8, 4), &quick_cfg(1));
        assert!(matches!(err, Err(Error::NotNormalized(_))));
    }

    #[test]
    fn stacking_dimension_mismatch_is_an_error() {
        let layer1 = GbRbmParams::zeros(SHAPE_DIM, 8);
        let layer2 = BinaryRbmParams::zeros(6, 3);
        assert!(
            FrontalPriorModel::new(layer1, layer2, Standardizer::identity(SHAPE_DIM)).is_err()
        );
    }

    #[test]
    fn repeated_shape_keeps_visible_bias_near_data() {
        // A dataset of one repeated shape standardizes to the zero vector;
        // training must keep the layer-1 visible bias within 0.05 of it.
        let shapes = vec![base_shape(); 30];
        let model = train_frontal(&shapes, (6, 3), &quick_cfg(5)).unwrap();
        let max_bias = model.layer1.visible_bias.abs().max();
        assert!(max_bias < 0.05, "visible bias drifted to {max_bias}");
    }

    #[test]
    fn training_is_deterministic() {
        let shapes = jittered_corpus(40, 9);
        let a = train_frontal(&shapes, (8, 4), &quick_cfg(3)).unwrap();
        let b = train_frontal(&shapes, (8, 4), &quick_cfg(3)).unwrap();
        assert_eq!(a, b);
        // Byte-identical serialized form, not just approximate equality.
        assert_eq!(
            crate::io::frontal_model_json(&a),
            crate::io::frontal_model_json(&b)
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let shapes = jittered_corpus(40, 11);
        let model = train_frontal(&shapes, (8, 4), &quick_cfg(4)).unwrap();
        let cfg = SamplerConfig {
            sample_count: 10,
            ..Default::default()
        };
        let mut rng_a = RngState::from_seed(77);
        let mut rng_b = RngState::from_seed(77);
        let sa = model.sample_local_prior(&shapes[0], &cfg, &mut rng_a).unwrap();
        let sb = model.sample_local_prior(&shapes[0], &cfg, &mut rng_b).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn zero_weight_model_samples_gaussian_around_biases() {
        let mut layer1 = GbRbmParams::zeros(SHAPE_DIM, 8);
        layer1.visible_bias = DVector::from_fn(SHAPE_DIM, |i, _| (i as f64 * 0.1).sin());
        let model = FrontalPriorModel::new(
            layer1.clone(),
            BinaryRbmParams::zeros(8, 4),
            Standardizer::identity(SHAPE_DIM),
        )
        .unwrap();
        let init = ShapeVector::from_slice(&[0.0; SHAPE_DIM]).unwrap();
        let cfg = SamplerConfig {
            sweeps_per_sample: 1,
            sample_count: 4000,
            restart_from_measurement: true,
        };
        let mut rng = RngState::from_seed(11);
        let samples = model.sample_local_prior(&init, &cfg, &mut rng).unwrap();
        let n = samples.len() as f64;
        for coord in [0usize, 17, 51] {
            let mean: f64 = samples.iter().map(|s| s.coords()[coord]).sum::<f64>() / n;
            let var: f64 = samples
                .iter()
                .map(|s| (s.coords()[coord] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            let bound = 4.0 / n.sqrt();
            assert!(
                (mean - layer1.visible_bias[coord]).abs() < bound,
                "coordinate {coord} mean {mean}"
            );
            assert!((var - 1.0).abs() < 0.15, "coordinate {coord} variance {var}");
        }
    }

    #[test]
    fn sampler_config_validation() {
        assert!(SamplerConfig {
            sweeps_per_sample: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SamplerConfig {
            sample_count: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
