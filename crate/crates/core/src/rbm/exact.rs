//! Exact partition and likelihood oracles for tiny models.
//!
//! Binary models enumerate the smaller of the two layers and marginalize the
//! other analytically; Gaussian-visible models integrate the visible layer in
//! closed form and enumerate hidden states. Both refuse models beyond the
//! documented size limits.

use nalgebra::DVector;
use std::f64::consts::PI;

use super::{log_sum_exp, softplus, BinaryRbmParams, GbRbmParams};
use crate::error::{Error, Result};

/// Maximum `V + H` for exact binary sums, `H` for Gaussian-visible sums.
pub const EXACT_SIZE_LIMIT: usize = 20;

fn binary_states(n: usize) -> impl Iterator<Item = DVector<f64>> {
    (0..(1u64 << n)).map(move |bits| DVector::from_fn(n, move |i, _| ((bits >> i) & 1) as f64))
}

impl BinaryRbmParams {
    /// Exact `ln Z`, with `Z = sum_{x,h} exp(-E(x,h))`.
    ///
    /// Enumerates the smaller layer and sums the other in closed form;
    /// refuses models with `V + H > 20`.
    pub fn exact_log_partition(&self) -> Result<f64> {
        let (v, h) = (self.visible_count(), self.hidden_count());
        if v + h > EXACT_SIZE_LIMIT {
            return Err(Error::ModelTooLarge(format!(
                "binary exact partition needs V + H <= {EXACT_SIZE_LIMIT}, got {v} + {h}"
            )));
        }
        if h <= v {
            // ln Z = lse_h [ c.h + sum_i softplus(b_i + (W^T h)_i) ]
            Ok(log_sum_exp(binary_states(h).map(|hs| {
                let act = &self.visible_bias + self.weights.transpose() * &hs;
                self.hidden_bias.dot(&hs) + act.iter().map(|&a| softplus(a)).sum::<f64>()
            })))
        } else {
            Ok(log_sum_exp(
                binary_states(v).map(|xs| -self.free_energy(&xs).expect("dims fixed")),
            ))
        }
    }

    /// Mean exact log-likelihood of `data` under the Boltzmann distribution.
    pub fn exact_log_likelihood(&self, data: &[DVector<f64>]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput("likelihood of an empty dataset".into()));
        }
        let log_z = self.exact_log_partition()?;
        let mut total = 0.0;
        for x in data {
            total += -self.free_energy(x)? - log_z;
        }
        Ok(total / data.len() as f64)
    }
}

impl GbRbmParams {
    /// Exact `ln Z` with the visible layer integrated analytically:
    /// `Z = (2 pi)^{V/2} sum_h exp(c.h + (|b + W^T h|^2 - |b|^2) / 2)`.
    ///
    /// Refuses models with `H > 20`.
    pub fn exact_log_partition(&self) -> Result<f64> {
        let (v, h) = (self.visible_count(), self.hidden_count());
        if h > EXACT_SIZE_LIMIT {
            return Err(Error::ModelTooLarge(format!(
                "Gaussian-visible exact partition needs H <= {EXACT_SIZE_LIMIT}, got {h}"
            )));
        }
        let b_sq = self.visible_bias.norm_squared();
        let sum = log_sum_exp(binary_states(h).map(|hs| {
            let mean = &self.visible_bias + self.weights.transpose() * &hs;
            self.hidden_bias.dot(&hs) + (mean.norm_squared() - b_sq) / 2.0
        }));
        Ok(v as f64 / 2.0 * (2.0 * PI).ln() + sum)
    }

    /// Mean exact log-density of `data`.
    pub fn exact_log_likelihood(&self, data: &[DVector<f64>]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput("likelihood of an empty dataset".into()));
        }
        let log_z = self.exact_log_partition()?;
        let mut total = 0.0;
        for x in data {
            total += -self.free_energy(x)? - log_z;
        }
        Ok(total / data.len() as f64)
    }
}
