//! Restricted Boltzmann machine primitives.
//!
//! Two unit types share the bipartite layout: binary/binary
//! ([`BinaryRbmParams`]) and Gaussian-visible/binary-hidden
//! ([`GbRbmParams`], unit visible variance). Weights are stored H×V so row
//! `j` holds the couplings of hidden unit `j`.
//!
//! Training is contrastive divergence ([`train`](BinaryRbmParams::train));
//! exact partition and likelihood oracles for tiny models live in
//! [`exact`](self) submodule functions exposed as inherent methods.

mod exact;
mod train;

pub use train::TrainConfig;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_finite(name: &str, iter: impl Iterator<Item = f64>) -> Result<()> {
    for v in iter {
        if !v.is_finite() {
            return Err(Error::invalid(format!("{name} contains non-finite values")));
        }
    }
    Ok(())
}

fn sample_bernoulli(probs: &DVector<f64>, rng: &mut RngState) -> DVector<f64> {
    DVector::from_fn(probs.len(), |j, _| {
        if rng.bernoulli(probs[j]) {
            1.0
        } else {
            0.0
        }
    })
}

macro_rules! rbm_common {
    ($name:ident) => {
        impl $name {
            /// Validated construction from a H×V weight matrix and bias
            /// vectors of lengths V and H.
            pub fn new(
                weights: DMatrix<f64>,
                visible_bias: DVector<f64>,
                hidden_bias: DVector<f64>,
            ) -> Result<Self> {
                if weights.ncols() != visible_bias.len() || weights.nrows() != hidden_bias.len() {
                    return Err(Error::dims(format!(
                        "weights are {}x{} but biases have lengths {} (visible) and {} (hidden)",
                        weights.nrows(),
                        weights.ncols(),
                        visible_bias.len(),
                        hidden_bias.len(),
                    )));
                }
                check_finite("weights", weights.iter().cloned())?;
                check_finite("visible_bias", visible_bias.iter().cloned())?;
                check_finite("hidden_bias", hidden_bias.iter().cloned())?;
                Ok(Self {
                    weights,
                    visible_bias,
                    hidden_bias,
                })
            }

            /// All-zero model.
            pub fn zeros(visible: usize, hidden: usize) -> Self {
                Self {
                    weights: DMatrix::zeros(hidden, visible),
                    visible_bias: DVector::zeros(visible),
                    hidden_bias: DVector::zeros(hidden),
                }
            }

            /// Small Gaussian weights, zero biases.
            pub fn random_init(
                visible: usize,
                hidden: usize,
                weight_std: f64,
                rng: &mut RngState,
            ) -> Self {
                Self {
                    weights: DMatrix::from_fn(hidden, visible, |_, _| weight_std * rng.normal()),
                    visible_bias: DVector::zeros(visible),
                    hidden_bias: DVector::zeros(hidden),
                }
            }

            pub fn visible_count(&self) -> usize {
                self.weights.ncols()
            }

            pub fn hidden_count(&self) -> usize {
                self.weights.nrows()
            }

            fn check_visible(&self, x: &DVector<f64>) -> Result<()> {
                if x.len() != self.visible_count() {
                    return Err(Error::dims(format!(
                        "visible vector has length {}, model expects {}",
                        x.len(),
                        self.visible_count()
                    )));
                }
                Ok(())
            }

            fn check_hidden(&self, h: &DVector<f64>) -> Result<()> {
                if h.len() != self.hidden_count() {
                    return Err(Error::dims(format!(
                        "hidden vector has length {}, model expects {}",
                        h.len(),
                        self.hidden_count()
                    )));
                }
                Ok(())
            }

            /// `p(h_j = 1 | x) = sigma(c_j + sum_i w_ji x_i)`, independent per unit.
            pub fn hidden_conditional(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
                self.check_visible(x)?;
                let act = &self.hidden_bias + &self.weights * x;
                Ok(act.map(sigmoid))
            }

            /// Pre-activation of the visible layer given hidden states:
            /// `b + W^T h`.
            fn visible_activation(&self, h: &DVector<f64>) -> DVector<f64> {
                &self.visible_bias + self.weights.transpose() * h
            }

            /// One full alternating Gibbs sweep from visible state `x`:
            /// sample `h' ~ p(h|x)` then `x'` from the visible conditional
            /// given `h'`.
            pub fn gibbs_sweep(
                &self,
                x: &DVector<f64>,
                rng: &mut RngState,
            ) -> Result<(DVector<f64>, DVector<f64>)> {
                let hp = self.hidden_conditional(x)?;
                let h = sample_bernoulli(&hp, rng);
                let x_new = self.sample_visible(&h, rng)?;
                Ok((x_new, h))
            }
        }
    };
}

/// Binary-visible, binary-hidden RBM parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRbmParams {
    pub weights: DMatrix<f64>,
    pub visible_bias: DVector<f64>,
    pub hidden_bias: DVector<f64>,
}

/// Gaussian-visible (unit variance), binary-hidden RBM parameters.
///
/// The unit-variance assumption is structural: training data has to be
/// standardized per coordinate before it reaches this model.
#[derive(Debug, Clone, PartialEq)]
pub struct GbRbmParams {
    pub weights: DMatrix<f64>,
    pub visible_bias: DVector<f64>,
    pub hidden_bias: DVector<f64>,
}

rbm_common!(BinaryRbmParams);
rbm_common!(GbRbmParams);

impl BinaryRbmParams {
    /// Joint energy `E(x, h) = -(b.x + h^T W x + c.h)`.
    pub fn energy(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
        self.check_visible(x)?;
        self.check_hidden(h)?;
        let interaction = h.dot(&(&self.weights * x));
        Ok(-(self.visible_bias.dot(x) + interaction + self.hidden_bias.dot(h)))
    }

    /// `p(x_i = 1 | h) = sigma(b_i + sum_j w_ji h_j)`, independent per unit.
    pub fn visible_conditional(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_hidden(h)?;
        Ok(self.visible_activation(h).map(sigmoid))
    }

    pub fn sample_visible(&self, h: &DVector<f64>, rng: &mut RngState) -> Result<DVector<f64>> {
        let probs = self.visible_conditional(h)?;
        Ok(sample_bernoulli(&probs, rng))
    }

    /// Free energy `-ln sum_h exp(-E(x, h))`, analytic in the hidden sum.
    pub fn free_energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_visible(x)?;
        let act = &self.hidden_bias + &self.weights * x;
        Ok(-self.visible_bias.dot(x) - act.iter().map(|&a| softplus(a)).sum::<f64>())
    }
}

impl GbRbmParams {
    /// Joint energy `E(x, h) = sum_i (x_i - b_i)^2 / 2 - h^T W x - c.h`.
    pub fn energy(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
        self.check_visible(x)?;
        self.check_hidden(h)?;
        let quad = (x - &self.visible_bias).norm_squared() / 2.0;
        let interaction = h.dot(&(&self.weights * x));
        Ok(quad - interaction - self.hidden_bias.dot(h))
    }

    /// Mean of the Gaussian visible conditional: `b + W^T h` (unit variance).
    pub fn visible_conditional(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_hidden(h)?;
        Ok(self.visible_activation(h))
    }

    pub fn sample_visible(&self, h: &DVector<f64>, rng: &mut RngState) -> Result<DVector<f64>> {
        let mean = self.visible_conditional(h)?;
        Ok(DVector::from_fn(mean.len(), |i, _| mean[i] + rng.normal()))
    }

    /// Free energy `-ln sum_h exp(-E(x, h))`.
    pub fn free_energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_visible(x)?;
        let act = &self.hidden_bias + &self.weights * x;
        let quad = (x - &self.visible_bias).norm_squared() / 2.0;
        Ok(quad - act.iter().map(|&a| softplus(a)).sum::<f64>())
    }
}

/// Shared training-side access for the CD engine.
pub(crate) trait CdTarget {
    fn dims(&self) -> (usize, usize); // (visible, hidden)
    fn hidden_probs(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn sample_visible_units(&self, h: &DVector<f64>, rng: &mut RngState) -> Result<DVector<f64>>;
    /// Sufficient statistic driving the visible-bias gradient.
    fn visible_bias_stat(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_delta(&mut self, dw: &DMatrix<f64>, dvb: &DVector<f64>, dhb: &DVector<f64>);
    fn weights_ref(&self) -> &DMatrix<f64>;
}

macro_rules! cd_target {
    ($name:ident, $stat:expr) => {
        impl CdTarget for $name {
            fn dims(&self) -> (usize, usize) {
                (self.visible_count(), self.hidden_count())
            }
            fn hidden_probs(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
                self.hidden_conditional(x)
            }
            fn sample_visible_units(
                &self,
                h: &DVector<f64>,
                rng: &mut RngState,
            ) -> Result<DVector<f64>> {
                self.sample_visible(h, rng)
            }
            fn visible_bias_stat(&self, x: &DVector<f64>) -> DVector<f64> {
                let stat: fn(&$name, &DVector<f64>) -> DVector<f64> = $stat;
                stat(self, x)
            }
            fn apply_delta(&mut self, dw: &DMatrix<f64>, dvb: &DVector<f64>, dhb: &DVector<f64>) {
                self.weights += dw;
                self.visible_bias += dvb;
                self.hidden_bias += dhb;
            }
            fn weights_ref(&self) -> &DMatrix<f64> {
                &self.weights
            }
        }
    };
}

cd_target!(BinaryRbmParams, |_, x| x.clone());
cd_target!(GbRbmParams, |p, x| x - &p.visible_bias);
