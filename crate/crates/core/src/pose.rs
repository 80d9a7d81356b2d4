//! Pose-transfer prior: a factorized three-way RBM.
//!
//! The model couples a frontal shape `x`, a posed shape `y` and binary
//! hidden gates `h` through `F` shared factors. Given any two of the three
//! variable sets, the remaining units are independent: `h` follows a
//! factorized Bernoulli conditional and `x`, `y` follow unit-variance
//! Gaussians around bilinear means. Training maximizes the joint likelihood
//! of `(x, y)` pairs with contrastive divergence.
//!
//! [`PosePriorModel`] bundles this transfer model with the frontal prior and
//! runs the combined two-part sampler used for measurement correction.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::frontal::{FrontalPriorModel, SamplerConfig};
use crate::fusion::{self, FusionMethod, MeasurementModel};
use crate::rbm::{log_sum_exp, sigmoid, softplus, TrainConfig};
use crate::rng::RngState;
use crate::shape::{ShapeVector, Standardizer};

/// Parameters of the factorized three-way RBM.
///
/// `factor_x`, `factor_y` are V×F, `factor_h` is K×F; the biases anchor the
/// quadratic terms of the two Gaussian visible sets and the linear term of
/// the hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeWayParams {
    pub factor_x: DMatrix<f64>,
    pub factor_y: DMatrix<f64>,
    pub factor_h: DMatrix<f64>,
    pub bias_x: DVector<f64>,
    pub bias_y: DVector<f64>,
    pub bias_h: DVector<f64>,
}

impl ThreeWayParams {
    pub fn new(
        factor_x: DMatrix<f64>,
        factor_y: DMatrix<f64>,
        factor_h: DMatrix<f64>,
        bias_x: DVector<f64>,
        bias_y: DVector<f64>,
        bias_h: DVector<f64>,
    ) -> Result<Self> {
        let f = factor_x.ncols();
        if factor_y.ncols() != f || factor_h.ncols() != f {
            return Err(Error::dims(format!(
                "factor counts disagree: x {}, y {}, h {}",
                f,
                factor_y.ncols(),
                factor_h.ncols()
            )));
        }
        let v = factor_x.nrows();
        if factor_y.nrows() != v || bias_x.len() != v || bias_y.len() != v {
            return Err(Error::dims(
                "x and y sides must share the same visible dimension",
            ));
        }
        if factor_h.nrows() != bias_h.len() {
            return Err(Error::dims("hidden factor rows must match hidden bias"));
        }
        let all_finite = factor_x.iter().all(|v| v.is_finite())
            && factor_y.iter().all(|v| v.is_finite())
            && factor_h.iter().all(|v| v.is_finite())
            && bias_x.iter().all(|v| v.is_finite())
            && bias_y.iter().all(|v| v.is_finite())
            && bias_h.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("three-way parameters contain non-finite values"));
        }
        Ok(Self {
            factor_x,
            factor_y,
            factor_h,
            bias_x,
            bias_y,
            bias_h,
        })
    }

    pub fn zeros(visible: usize, hidden: usize, factors: usize) -> Self {
        Self {
            factor_x: DMatrix::zeros(visible, factors),
            factor_y: DMatrix::zeros(visible, factors),
            factor_h: DMatrix::zeros(hidden, factors),
            bias_x: DVector::zeros(visible),
            bias_y: DVector::zeros(visible),
            bias_h: DVector::zeros(hidden),
        }
    }

    pub fn random_init(
        visible: usize,
        hidden: usize,
        factors: usize,
        weight_std: f64,
        rng: &mut RngState,
    ) -> Self {
        Self {
            factor_x: DMatrix::from_fn(visible, factors, |_, _| weight_std * rng.normal()),
            factor_y: DMatrix::from_fn(visible, factors, |_, _| weight_std * rng.normal()),
            factor_h: DMatrix::from_fn(hidden, factors, |_, _| weight_std * rng.normal()),
            bias_x: DVector::zeros(visible),
            bias_y: DVector::zeros(visible),
            bias_h: DVector::zeros(hidden),
        }
    }

    pub fn visible_count(&self) -> usize {
        self.factor_x.nrows()
    }

    pub fn hidden_count(&self) -> usize {
        self.factor_h.nrows()
    }

    pub fn factor_count(&self) -> usize {
        self.factor_x.ncols()
    }

    fn check_visible(&self, name: &str, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.visible_count() {
            return Err(Error::dims(format!(
                "{name} has length {}, model expects {}",
                v.len(),
                self.visible_count()
            )));
        }
        Ok(())
    }

    fn check_hidden(&self, h: &DVector<f64>) -> Result<()> {
        if h.len() != self.hidden_count() {
            return Err(Error::dims(format!(
                "h has length {}, model expects {}",
                h.len(),
                self.hidden_count()
            )));
        }
        Ok(())
    }

    fn check(&self, x: &DVector<f64>, y: &DVector<f64>, h: Option<&DVector<f64>>) -> Result<()> {
        self.check_visible("x", x)?;
        self.check_visible("y", y)?;
        if let Some(h) = h {
            self.check_hidden(h)?;
        }
        Ok(())
    }

    /// Factor loadings `A_f = sum_i x_i w^x_{if}` and friends.
    fn loadings_x(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factor_x.transpose() * x
    }

    fn loadings_y(&self, y: &DVector<f64>) -> DVector<f64> {
        self.factor_y.transpose() * y
    }

    fn loadings_h(&self, h: &DVector<f64>) -> DVector<f64> {
        self.factor_h.transpose() * h
    }

    /// Joint energy
    /// `E = -sum_f A_f B_f C_f + |x - b_x|^2 / 2 + |y - b_y|^2 / 2 - b_h.h`.
    pub fn energy(&self, x: &DVector<f64>, y: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
        self.check(x, y, Some(h))?;
        let a = self.loadings_x(x);
        let b = self.loadings_y(y);
        let c = self.loadings_h(h);
        let triple: f64 = (0..self.factor_count()).map(|f| a[f] * b[f] * c[f]).sum();
        let quad_x = (x - &self.bias_x).norm_squared() / 2.0;
        let quad_y = (y - &self.bias_y).norm_squared() / 2.0;
        // Grouped so the expression is bit-exactly symmetric under swapping
        // the x and y roles.
        Ok(-(triple - (quad_x + quad_y) + self.bias_h.dot(h)))
    }

    /// `p(h_k = 1 | x, y) = sigma(sum_f w^h_{kf} A_f B_f + b_h_k)`.
    pub fn h_given_xy(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x, y, None)?;
        let ab = self.loadings_x(x).component_mul(&self.loadings_y(y));
        let logits = &self.factor_h * ab + &self.bias_h;
        Ok(logits.map(sigmoid))
    }

    /// Mean of the Gaussian conditional over `x` given `(h, y)`.
    pub fn x_mean_given_hy(&self, h: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_visible("y", y)?;
        self.check_hidden(h)?;
        let bc = self.loadings_y(y).component_mul(&self.loadings_h(h));
        Ok(&self.factor_x * bc + &self.bias_x)
    }

    /// Mean of the Gaussian conditional over `y` given `(x, h)`.
    pub fn y_mean_given_xh(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_visible("x", x)?;
        self.check_hidden(h)?;
        let ac = self.loadings_x(x).component_mul(&self.loadings_h(h));
        Ok(&self.factor_y * ac + &self.bias_y)
    }

    pub fn sample_h(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        rng: &mut RngState,
    ) -> Result<DVector<f64>> {
        let probs = self.h_given_xy(x, y)?;
        Ok(DVector::from_fn(probs.len(), |k, _| {
            if rng.bernoulli(probs[k]) {
                1.0
            } else {
                0.0
            }
        }))
    }

    pub fn sample_x(
        &self,
        h: &DVector<f64>,
        y: &DVector<f64>,
        rng: &mut RngState,
    ) -> Result<DVector<f64>> {
        let mean = self.x_mean_given_hy(h, y)?;
        Ok(DVector::from_fn(mean.len(), |i, _| mean[i] + rng.normal()))
    }

    pub fn sample_y(
        &self,
        x: &DVector<f64>,
        h: &DVector<f64>,
        rng: &mut RngState,
    ) -> Result<DVector<f64>> {
        let mean = self.y_mean_given_xh(x, h)?;
        Ok(DVector::from_fn(mean.len(), |i, _| mean[i] + rng.normal()))
    }

    /// Mean-field prediction of `y` from `x` alone: initialize `y = x`, then
    /// alternate `h = p(h|x,y)` and `y = mu_y(x, h)`.
    pub fn predict_y_given_x(&self, x: &DVector<f64>, iterations: usize) -> Result<DVector<f64>> {
        let mut y = x.clone();
        for _ in 0..iterations.max(1) {
            let h = self.h_given_xy(x, &y)?;
            y = self.y_mean_given_xh(x, &h)?;
        }
        Ok(y)
    }

    /// Exact mean joint log-density of `(x, y)` pairs for small hidden
    /// counts (`K <= 12`): the hidden sum is enumerated and both visible
    /// sets are integrated analytically per hidden state.
    ///
    /// Fails if some hidden state makes the joint Gaussian precision
    /// indefinite (the density is then not normalizable).
    pub fn exact_joint_log_likelihood(
        &self,
        pairs: &[(DVector<f64>, DVector<f64>)],
    ) -> Result<f64> {
        let k = self.hidden_count();
        if k > 12 {
            return Err(Error::ModelTooLarge(format!(
                "exact joint likelihood needs K <= 12, got {k}"
            )));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyInput("likelihood of an empty pair set".into()));
        }
        let v = self.visible_count();
        let log_z = {
            let mut terms = Vec::with_capacity(1 << k);
            for bits in 0..(1u64 << k) {
                let h = DVector::from_fn(k, |j, _| ((bits >> j) & 1) as f64);
                let c = self.loadings_h(&h);
                // M(h) = sum_f C_f wx_f wy_f^T, the bilinear coupling.
                let mut scaled = self.factor_x.clone();
                for f in 0..self.factor_count() {
                    scaled.column_mut(f).scale_mut(c[f]);
                }
                let m = &scaled * self.factor_y.transpose();

                // Precision of (x - b_x, y - b_y): [[I, -M], [-M^T, I]].
                let mut p = DMatrix::identity(2 * v, 2 * v);
                p.view_mut((0, v), (v, v)).copy_from(&(-&m));
                p.view_mut((v, 0), (v, v)).copy_from(&(-m.transpose()));
                let chol = p.cholesky().ok_or_else(|| {
                    Error::NotPositiveDefinite(
                        "joint precision for a hidden state; density is not normalizable".into(),
                    )
                })?;
                let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();

                let lin_top = &m * &self.bias_y;
                let lin_bot = m.transpose() * &self.bias_x;
                let mut lin = DVector::zeros(2 * v);
                lin.rows_mut(0, v).copy_from(&lin_top);
                lin.rows_mut(v, v).copy_from(&lin_bot);
                let quad = 0.5 * lin.dot(&chol.solve(&lin));
                let const_term = self.bias_x.dot(&(&m * &self.bias_y));

                terms.push(self.bias_h.dot(&h) + const_term + quad - 0.5 * log_det);
            }
            log_sum_exp(terms.into_iter()) + v as f64 * (2.0 * PI).ln()
        };

        let mut total = 0.0;
        for (x, y) in pairs {
            self.check(x, y, None)?;
            let ab = self.loadings_x(x).component_mul(&self.loadings_y(y));
            let logits = &self.factor_h * ab + &self.bias_h;
            let hidden_sum: f64 = logits.iter().map(|&l| softplus(l)).sum();
            let quad_x = (x - &self.bias_x).norm_squared() / 2.0;
            let quad_y = (y - &self.bias_y).norm_squared() / 2.0;
            total += -quad_x - quad_y + hidden_sum - log_z;
        }
        Ok(total / pairs.len() as f64)
    }
}

struct ThreeWayStats {
    fx: DMatrix<f64>,
    fy: DMatrix<f64>,
    fh: DMatrix<f64>,
    bx: DVector<f64>,
    by: DVector<f64>,
    bh: DVector<f64>,
}

impl ThreeWayStats {
    fn zeros(v: usize, k: usize, f: usize) -> Self {
        Self {
            fx: DMatrix::zeros(v, f),
            fy: DMatrix::zeros(v, f),
            fh: DMatrix::zeros(k, f),
            bx: DVector::zeros(v),
            by: DVector::zeros(v),
            bh: DVector::zeros(k),
        }
    }

    /// Accumulate the gradient of `-E` at `(x, y, h)`; `h` may hold
    /// probabilities.
    fn accumulate(
        &mut self,
        p: &ThreeWayParams,
        x: &DVector<f64>,
        y: &DVector<f64>,
        h: &DVector<f64>,
    ) {
        let a = p.loadings_x(x);
        let b = p.loadings_y(y);
        let c = p.loadings_h(h);
        self.fx.ger(1.0, x, &b.component_mul(&c), 1.0);
        self.fy.ger(1.0, y, &a.component_mul(&c), 1.0);
        self.fh.ger(1.0, h, &a.component_mul(&b), 1.0);
        self.bx += x - &p.bias_x;
        self.by += y - &p.bias_y;
        self.bh += h;
    }
}

/// Train a factorized three-way RBM on standardized `(x, y)` pairs by
/// joint-likelihood contrastive divergence. The negative phase runs
/// `cfg.cd_steps` Gibbs sweeps in the order `h -> x -> y`.
pub fn train_threeway(
    pairs: &[(DVector<f64>, DVector<f64>)],
    sizes: (usize, usize),
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<ThreeWayParams> {
    cfg.validate()?;
    let (k, f) = sizes;
    if k == 0 || f == 0 {
        return Err(Error::invalid("hidden and factor counts must be positive"));
    }
    if pairs.len() < 2 {
        return Err(Error::EmptyInput(
            "three-way training needs at least two pairs".into(),
        ));
    }
    let v = pairs[0].0.len();
    for (x, y) in pairs {
        if x.len() != v || y.len() != v {
            return Err(Error::dims("three-way training pairs are ragged"));
        }
    }

    let mut model = ThreeWayParams::random_init(v, k, f, 0.01, rng);
    let mut vel = ThreeWayStats::zeros(v, k, f);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    use rand::seq::SliceRandom;

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut pos = ThreeWayStats::zeros(v, k, f);
            let mut neg = ThreeWayStats::zeros(v, k, f);
            for &idx in chunk {
                let (x, y) = &pairs[idx];
                let h_data = model.h_given_xy(x, y)?;
                pos.accumulate(&model, x, y, &h_data);

                let mut xs = x.clone();
                let mut ys = y.clone();
                for _ in 0..cfg.cd_steps {
                    let hs = model.sample_h(&xs, &ys, rng)?;
                    xs = model.sample_x(&hs, &ys, rng)?;
                    ys = model.sample_y(&xs, &hs, rng)?;
                }
                let h_model = model.h_given_xy(&xs, &ys)?;
                neg.accumulate(&model, &xs, &ys, &h_model);
            }

            let inv_n = 1.0 / chunk.len() as f64;
            let lr = cfg.learning_rate;
            let mom = cfg.momentum;
            vel.fx = &vel.fx * mom
                + ((&pos.fx - &neg.fx) * inv_n - &model.factor_x * cfg.weight_decay) * lr;
            vel.fy = &vel.fy * mom
                + ((&pos.fy - &neg.fy) * inv_n - &model.factor_y * cfg.weight_decay) * lr;
            vel.fh = &vel.fh * mom
                + ((&pos.fh - &neg.fh) * inv_n - &model.factor_h * cfg.weight_decay) * lr;
            vel.bx = &vel.bx * mom + (&pos.bx - &neg.bx) * (inv_n * lr);
            vel.by = &vel.by * mom + (&pos.by - &neg.by) * (inv_n * lr);
            vel.bh = &vel.bh * mom + (&pos.bh - &neg.bh) * (inv_n * lr);
            model.factor_x += &vel.fx;
            model.factor_y += &vel.fy;
            model.factor_h += &vel.fh;
            model.bias_x += &vel.bx;
            model.bias_y += &vel.by;
            model.bias_h += &vel.bh;
        }
    }
    Ok(model)
}

/// Combined prior for posed faces: frontal DBN plus the pose-transfer model.
#[derive(Debug, Clone)]
pub struct PosePriorModel {
    pub frontal: FrontalPriorModel,
    pub transfer: ThreeWayParams,
    pub standardizer_x: Standardizer,
    pub standardizer_y: Standardizer,
}

impl PosePriorModel {
    pub fn new(
        frontal: FrontalPriorModel,
        transfer: ThreeWayParams,
        standardizer_x: Standardizer,
        standardizer_y: Standardizer,
    ) -> Result<Self> {
        let v = transfer.visible_count();
        if frontal.layer1.visible_count() != v
            || standardizer_x.dim() != v
            || standardizer_y.dim() != v
        {
            return Err(Error::dims(
                "frontal model, transfer model and standardizers disagree on dimension",
            ));
        }
        if !standardizer_x.is_valid() || !standardizer_y.is_valid() {
            return Err(Error::invalid("pose standardizers have invalid entries"));
        }
        Ok(Self {
            frontal,
            transfer,
            standardizer_x,
            standardizer_y,
        })
    }

    /// Draw local prior samples of the posed shape around `y_measured`.
    ///
    /// Per sample: (1) clamp `y` to the measurement, alternate
    /// `h ~ p(h|x,y)` and `x ~ N(mu_x, I)` through the transfer model;
    /// (2) refine `x` with up-down sweeps of the frontal prior; (3) emit
    /// `y ~ N(mu_y(x, h), I)` with the hidden state kept from step (1).
    pub fn sample_prior(
        &self,
        y_measured: &ShapeVector,
        cfg: &SamplerConfig,
        rng: &mut RngState,
    ) -> Result<Vec<ShapeVector>> {
        cfg.validate()?;
        let y_std = self.standardizer_y.standardize(y_measured);
        let mut samples = Vec::with_capacity(cfg.sample_count);
        let mut chain_x = y_std.clone();
        for _ in 0..cfg.sample_count {
            // Step 1: infer x through part II with y clamped.
            let mut x = if cfg.restart_from_measurement {
                y_std.clone()
            } else {
                chain_x.clone()
            };
            let mut h = DVector::zeros(self.transfer.hidden_count());
            for _ in 0..cfg.sweeps_per_sample {
                h = self.transfer.sample_h(&x, &y_std, rng)?;
                x = self.transfer.sample_x(&h, &y_std, rng)?;
            }
            chain_x = x.clone();

            // Step 2: refine x through the frontal prior in its own frame.
            let x_shape = self.standardizer_x.destandardize(&x)?;
            let frontal_cfg = SamplerConfig {
                sample_count: 1,
                ..cfg.clone()
            };
            let refined = self
                .frontal
                .sample_local_prior(&x_shape, &frontal_cfg, rng)?
                .pop()
                .expect("one sample requested");
            let x_refined = self.standardizer_x.standardize(&refined);

            // Step 3: regenerate y from the refined x and the kept h.
            let y = self.transfer.sample_y(&x_refined, &h, rng)?;
            samples.push(self.standardizer_y.destandardize(&y)?);
        }
        Ok(samples)
    }

    /// Correct a measured posed shape by fusing prior samples with it.
    pub fn correct_shape(
        &self,
        y_measured: &ShapeVector,
        sampler: &SamplerConfig,
        mm: &MeasurementModel,
        method: &FusionMethod,
        rng: &mut RngState,
    ) -> Result<ShapeVector> {
        let samples = self.sample_prior(y_measured, sampler, rng)?;
        fusion::fuse_shape(&samples, y_measured, mm, method)
    }

    /// Deterministic mean-field transfer of a frontal shape to the posed
    /// domain.
    pub fn predict_posed(&self, x: &ShapeVector, iterations: usize) -> Result<ShapeVector> {
        let x_std = self.standardizer_x.standardize(x);
        let y_std = self.transfer.predict_y_given_x(&x_std, iterations)?;
        self.standardizer_y.destandardize(&y_std)
    }
}

/// Fit the transfer model on `(frontal, posed)` shape pairs around an
/// already-trained frontal prior. The x and y standardizers are learned
/// independently from the respective sides.
pub fn train_pose(
    pairs: &[(ShapeVector, ShapeVector)],
    frontal: FrontalPriorModel,
    sizes: (usize, usize),
    cfg: &TrainConfig,
) -> Result<PosePriorModel> {
    if pairs.len() < 2 {
        return Err(Error::EmptyInput(
            "pose training needs at least two pairs".into(),
        ));
    }
    let xs: Vec<ShapeVector> = pairs.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<ShapeVector> = pairs.iter().map(|(_, y)| y.clone()).collect();
    let standardizer_x = Standardizer::fit(&xs)?;
    let standardizer_y = Standardizer::fit(&ys)?;
    let std_pairs: Vec<(DVector<f64>, DVector<f64>)> = pairs
        .iter()
        .map(|(x, y)| (standardizer_x.standardize(x), standardizer_y.standardize(y)))
        .collect();
    let mut rng = RngState::from_seed(cfg.rng_seed);
    let transfer = train_threeway(&std_pairs, sizes, cfg, &mut rng)?;
    PosePriorModel::new(frontal, transfer, standardizer_x, standardizer_y)
}
