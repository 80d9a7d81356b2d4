//! Contrastive divergence training.
//!
//! One CD-k step takes the positive statistics from the data (mean-field
//! hidden probabilities) and the negative statistics from the end of a
//! k-sweep Gibbs chain started at each data point. Weight decay applies to
//! the weight matrix only; momentum accumulates across steps of a training
//! run.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::{BinaryRbmParams, CdTarget, GbRbmParams};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Hyperparameters for contrastive-divergence training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Gibbs sweeps per negative phase (k of CD-k).
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// In `[0, 1)`.
    pub momentum: f64,
    pub weight_decay: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cd_steps: 1,
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 32,
            momentum: 0.5,
            weight_decay: 1e-4,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cd_steps == 0 {
            return Err(Error::invalid("cd_steps must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        Ok(())
    }
}

pub(crate) struct Velocity {
    w: DMatrix<f64>,
    vb: DVector<f64>,
    hb: DVector<f64>,
}

impl Velocity {
    pub(crate) fn zeros(visible: usize, hidden: usize) -> Self {
        Self {
            w: DMatrix::zeros(hidden, visible),
            vb: DVector::zeros(visible),
            hb: DVector::zeros(hidden),
        }
    }
}

/// One CD-k parameter update on `model` from `batch`.
pub(crate) fn cd_step<M: CdTarget>(
    model: &mut M,
    velocity: &mut Velocity,
    batch: &[DVector<f64>],
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<()> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("CD update needs a nonempty batch".into()));
    }
    let (v, h) = model.dims();
    let mut pos_w = DMatrix::zeros(h, v);
    let mut neg_w = DMatrix::zeros(h, v);
    let mut pos_vb = DVector::zeros(v);
    let mut neg_vb = DVector::zeros(v);
    let mut pos_hb = DVector::zeros(h);
    let mut neg_hb = DVector::zeros(h);

    for x in batch {
        let hp = model.hidden_probs(x)?;
        pos_w.ger(1.0, &hp, x, 1.0);
        pos_vb += model.visible_bias_stat(x);
        pos_hb += &hp;

        let mut x_neg = x.clone();
        for _ in 0..cfg.cd_steps {
            let hs = super::sample_bernoulli(&model.hidden_probs(&x_neg)?, rng);
            x_neg = model.sample_visible_units(&hs, rng)?;
        }
        let hp_neg = model.hidden_probs(&x_neg)?;
        neg_w.ger(1.0, &hp_neg, &x_neg, 1.0);
        neg_vb += model.visible_bias_stat(&x_neg);
        neg_hb += &hp_neg;
    }

    let inv_n = 1.0 / batch.len() as f64;
    let grad_w = (pos_w - neg_w) * inv_n - model.weights_ref() * cfg.weight_decay;
    let grad_vb = (pos_vb - neg_vb) * inv_n;
    let grad_hb = (pos_hb - neg_hb) * inv_n;

    velocity.w = &velocity.w * cfg.momentum + grad_w * cfg.learning_rate;
    velocity.vb = &velocity.vb * cfg.momentum + grad_vb * cfg.learning_rate;
    velocity.hb = &velocity.hb * cfg.momentum + grad_hb * cfg.learning_rate;
    model.apply_delta(&velocity.w, &velocity.vb, &velocity.hb);
    Ok(())
}

pub(crate) fn train_loop<M: CdTarget + Clone>(
    model: &M,
    data: &[DVector<f64>],
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<M> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data is empty".into()));
    }
    let mut model = model.clone();
    let (v, h) = model.dims();
    let mut velocity = Velocity::zeros(v, h);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<DVector<f64>> = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            cd_step(&mut model, &mut velocity, &batch, cfg, rng)?;
        }
    }
    Ok(model)
}

macro_rules! train_api {
    ($name:ident) => {
        impl $name {
            /// Single CD-k gradient step from `batch`, returning the updated
            /// parameters. Momentum has no history to act on in a lone call;
            /// weight decay applies as configured.
            pub fn cd_update(
                &self,
                batch: &[DVector<f64>],
                cfg: &TrainConfig,
                rng: &mut RngState,
            ) -> Result<$name> {
                let mut out = self.clone();
                let (v, h) = out.dims();
                let mut velocity = Velocity::zeros(v, h);
                cd_step(&mut out, &mut velocity, batch, cfg, rng)?;
                Ok(out)
            }

            /// Full CD training run: `cfg.epochs` passes over `data` in
            /// shuffled minibatches with persistent momentum.
            pub fn train(
                &self,
                data: &[DVector<f64>],
                cfg: &TrainConfig,
                rng: &mut RngState,
            ) -> Result<$name> {
                train_loop(self, data, cfg, rng)
            }
        }
    };
}

train_api!(BinaryRbmParams);
train_api!(GbRbmParams);
