//! Combining prior samples with measurements.
//!
//! The measurement likelihood is a multivariate Gaussian around the measured
//! shape. The prior over shapes is estimated locally from sampler output,
//! either as a single Gaussian (closed-form MAP, [`fuse_gaussian`]) or as a
//! Gaussian kernel density over the samples maximized by a fixed-point
//! iteration ([`fuse_kde`]).
//!
//! Everything here is dimension-generic: the face pipeline passes 52-vectors,
//! the oracle tests pass 2-vectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::shape::ShapeVector;

/// Gaussian measurement-noise model: the covariance of
/// `measurement - truth`.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    sigma: DMatrix<f64>,
}

impl MeasurementModel {
    /// Validates symmetry (within 1e-10) and positive definiteness.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::dims(format!(
                "measurement covariance must be square, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "measurement covariance contains non-finite values",
            ));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::invalid(format!(
                "measurement covariance is asymmetric (max deviation {asym:.3e})"
            )));
        }
        if sigma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(
                "measurement covariance".into(),
            ));
        }
        Ok(Self { sigma })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        if variance <= 0.0 || !variance.is_finite() {
            return Err(Error::invalid("variance must be positive"));
        }
        Self::new(DMatrix::identity(dim, dim) * variance)
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

/// Mean and covariance summarizing a set of prior samples.
#[derive(Debug, Clone)]
pub struct SampleStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl SampleStats {
    pub fn from_samples(samples: &[DVector<f64>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("sample statistics need samples".into()));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::dims("samples have mixed dimensions"));
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(dim);
        for s in samples {
            mean += s;
        }
        mean /= n;
        let mut cov = DMatrix::zeros(dim, dim);
        if samples.len() > 1 {
            for s in samples {
                let d = s - &mean;
                cov.ger(1.0 / (n - 1.0), &d, &d, 1.0);
            }
        }
        Ok(Self { mean, covariance: cov })
    }

    pub fn from_shapes(shapes: &[ShapeVector]) -> Result<Self> {
        let vecs: Vec<DVector<f64>> = shapes.iter().map(|s| s.coords().clone()).collect();
        Self::from_samples(&vecs)
    }
}

/// Kernel bandwidth choice for [`fuse_kde`].
#[derive(Debug, Clone)]
pub enum Bandwidth {
    /// Diagonal of per-coordinate sample variances scaled by Silverman's
    /// factor `(4 / (D (dim + 2)))^(2 / (dim + 4))`.
    Silverman,
    Fixed(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct KdeConfig {
    pub bandwidth: Bandwidth,
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Silverman,
            max_iterations: 100,
            convergence_tol: 1e-8,
        }
    }
}

/// Which fusion rule a pipeline stage applies.
#[derive(Debug, Clone)]
pub enum FusionMethod {
    Gaussian,
    Kde(KdeConfig),
}

impl FusionMethod {
    pub fn kde_default() -> Self {
        FusionMethod::Kde(KdeConfig::default())
    }
}

/// Result of the KDE fixed-point maximization.
#[derive(Debug, Clone)]
pub struct KdeOutcome {
    pub estimate: DVector<f64>,
    /// Log-posterior (up to an additive constant) at the start and after
    /// every iteration; nondecreasing by construction.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Estimate the measurement covariance from `(ground_truth, measurement)`
/// pairs: the sample covariance of the residuals plus `ridge * I`.
pub fn estimate_sigma_l(
    pairs: &[(ShapeVector, ShapeVector)],
    ridge: f64,
) -> Result<MeasurementModel> {
    let vecs: Vec<(DVector<f64>, DVector<f64>)> = pairs
        .iter()
        .map(|(t, m)| (t.coords().clone(), m.coords().clone()))
        .collect();
    estimate_sigma_l_vectors(&vecs, ridge)
}

pub fn estimate_sigma_l_vectors(
    pairs: &[(DVector<f64>, DVector<f64>)],
    ridge: f64,
) -> Result<MeasurementModel> {
    if pairs.len() < 2 {
        return Err(Error::EmptyInput(
            "measurement covariance estimation needs at least two pairs".into(),
        ));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::invalid("ridge must be finite and >= 0"));
    }
    let residuals: Vec<DVector<f64>> = pairs.iter().map(|(t, m)| m - t).collect();
    let stats = SampleStats::from_samples(&residuals)?;
    let dim = stats.mean.len();
    let mut sigma = stats.covariance;
    // Centered covariance: residual mean is an estimate of measurement bias
    // and does not belong in the noise covariance.
    for i in 0..dim {
        sigma[(i, i)] += ridge;
    }
    MeasurementModel::new(sigma)
}

fn checked_cholesky(
    matrix: &DMatrix<f64>,
    what: &str,
) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = matrix.clone().cholesky() {
        return Ok(c);
    }
    // Prior covariances estimated from few samples can be rank deficient;
    // retry once with a trace-scaled ridge.
    let n = matrix.nrows();
    let ridge = 1e-4 * matrix.trace() / n as f64;
    if ridge > 0.0 {
        let mut reg = matrix.clone();
        for i in 0..n {
            reg[(i, i)] += ridge;
        }
        if let Some(c) = reg.cholesky() {
            return Ok(c);
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        "{what} (even after ridge regularization)"
    )))
}

/// Closed-form MAP fusion of a Gaussian prior with a Gaussian measurement:
/// `X* = (Sl^-1 + Sp^-1)^-1 (Sp^-1 mu_p + Sl^-1 X_m)`.
pub fn fuse_gaussian(
    stats: &SampleStats,
    x_m: &DVector<f64>,
    mm: &MeasurementModel,
) -> Result<DVector<f64>> {
    let dim = mm.dim();
    if stats.mean.len() != dim || x_m.len() != dim || stats.covariance.nrows() != dim {
        return Err(Error::dims(format!(
            "fusion dimensions disagree: prior {}, measurement {}, covariance {}",
            stats.mean.len(),
            x_m.len(),
            dim
        )));
    }
    let chol_l = checked_cholesky(mm.sigma(), "measurement covariance")?;
    let chol_p = checked_cholesky(&stats.covariance, "prior sample covariance")?;
    let sigma_l_inv = chol_l.inverse();
    let sigma_p_inv = chol_p.inverse();
    let posterior_precision = &sigma_l_inv + &sigma_p_inv;
    let chol_post = posterior_precision
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?;
    let rhs = &sigma_p_inv * &stats.mean + &sigma_l_inv * x_m;
    Ok(chol_post.solve(&rhs))
}

/// Bandwidth matrix for a sample set under `cfg.bandwidth`.
fn kde_bandwidth(samples: &[DVector<f64>], bandwidth: &Bandwidth) -> Result<DMatrix<f64>> {
    let dim = samples[0].len();
    match bandwidth {
        Bandwidth::Fixed(m) => {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::dims("fixed bandwidth has wrong dimensions"));
            }
            Ok(m.clone())
        }
        Bandwidth::Silverman => {
            let d = samples.len() as f64;
            let k = dim as f64;
            let factor = (4.0 / (d * (k + 2.0))).powf(2.0 / (k + 4.0));
            let mut mean = DVector::zeros(dim);
            for s in samples {
                mean += s;
            }
            mean /= d;
            let mut var = DVector::zeros(dim);
            if samples.len() > 1 {
                for s in samples {
                    let diff = s - &mean;
                    var += diff.component_mul(&diff);
                }
                var /= d - 1.0;
            }
            let floor = 1e-12 + 1e-8 * var.max();
            Ok(DMatrix::from_fn(dim, dim, |i, j| {
                if i == j {
                    (var[i] * factor).max(floor)
                } else {
                    0.0
                }
            }))
        }
    }
}

/// Maximize `P(X_m | X) * p_kde(X)` by the fixed-point update
/// `X <- (Sl^-1 + Sk^-1)^-1 (Sk^-1 sum_d gamma_d X_d + Sl^-1 X_m)`, where
/// `gamma_d` are kernel responsibilities at the current iterate. Starts at
/// `X_m`; each step is a minorize-maximize step, so the objective never
/// decreases.
pub fn fuse_kde(
    samples: &[DVector<f64>],
    x_m: &DVector<f64>,
    mm: &MeasurementModel,
    cfg: &KdeConfig,
) -> Result<KdeOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("KDE fusion needs prior samples".into()));
    }
    let dim = mm.dim();
    if x_m.len() != dim || samples.iter().any(|s| s.len() != dim) {
        return Err(Error::dims("KDE fusion dimensions disagree"));
    }
    if cfg.max_iterations == 0 || cfg.convergence_tol <= 0.0 {
        return Err(Error::invalid(
            "KDE fusion needs max_iterations >= 1 and a positive tolerance",
        ));
    }

    let sigma_k = kde_bandwidth(samples, &cfg.bandwidth)?;
    let chol_k = checked_cholesky(&sigma_k, "KDE bandwidth")?;
    let chol_l = checked_cholesky(mm.sigma(), "measurement covariance")?;
    let sigma_k_inv = chol_k.inverse();
    let sigma_l_inv = chol_l.inverse();
    let precision = &sigma_k_inv + &sigma_l_inv;
    let chol_post = precision
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("KDE posterior precision".into()))?;

    let log_kernel = |x: &DVector<f64>, center: &DVector<f64>| -> f64 {
        let d = x - center;
        -0.5 * d.dot(&chol_k.solve(&d))
    };
    let objective = |x: &DVector<f64>| -> f64 {
        let dm = x - x_m;
        let likelihood = -0.5 * dm.dot(&chol_l.solve(&dm));
        let prior = crate::rbm::log_sum_exp(samples.iter().map(|s| log_kernel(x, s)));
        likelihood + prior
    };

    let mut x = x_m.clone();
    let mut trace = vec![objective(&x)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        // Responsibilities via a stable softmax over log kernel weights.
        let logw: Vec<f64> = samples.iter().map(|s| log_kernel(&x, s)).collect();
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logw.iter().map(|w| (w - m).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut weighted_mean = DVector::zeros(dim);
        for (w, s) in weights.iter().zip(samples) {
            weighted_mean += s * (*w / total);
        }
        let rhs = &sigma_k_inv * &weighted_mean + &sigma_l_inv * x_m;
        let x_next = chol_post.solve(&rhs);
        let step = (&x_next - &x).norm();
        x = x_next;
        trace.push(objective(&x));
        iterations += 1;
        if step < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    Ok(KdeOutcome {
        estimate: x,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Fuse prior shape samples with a measured shape using `method`.
pub fn fuse_shape(
    samples: &[ShapeVector],
    measured: &ShapeVector,
    mm: &MeasurementModel,
    method: &FusionMethod,
) -> Result<ShapeVector> {
    let fused = match method {
        FusionMethod::Gaussian => {
            let stats = SampleStats::from_shapes(samples)?;
            fuse_gaussian(&stats, measured.coords(), mm)?
        }
        FusionMethod::Kde(cfg) => {
            let vecs: Vec<DVector<f64>> =
                samples.iter().map(|s| s.coords().clone()).collect();
            fuse_kde(&vecs, measured.coords(), mm, cfg)?.estimate
        }
    };
    ShapeVector::from_vector(fused)
}
