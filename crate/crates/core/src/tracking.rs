//! Sequence tracking: constant-velocity Kalman filtering around the
//! per-frame sample-and-fuse refinement, and the interocular-normalized
//! error metric used by all reports.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::frontal::{FrontalPriorModel, SamplerConfig};
use crate::fusion::{FusionMethod, MeasurementModel};
use crate::pose::PosePriorModel;
use crate::rng::RngState;
use crate::shape::{landmarks, ShapeVector, LANDMARK_COUNT, SHAPE_DIM};

/// 2x2 symmetric covariance block of one (position, velocity) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub pp: f64,
    pub pv: f64,
    pub vv: f64,
}

impl Cov2 {
    fn is_psd(&self, tol: f64) -> bool {
        self.pp >= -tol && self.vv >= -tol && self.pp * self.vv - self.pv * self.pv >= -tol
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let tr = self.pp + self.vv;
        let det = self.pp * self.vv - self.pv * self.pv;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        tr / 2.0 - disc
    }
}

/// Constant-velocity filter state over all 52 coordinates.
///
/// Dynamics are independent per coordinate, so the full 104x104 covariance
/// is block diagonal and stored as 52 two-by-two blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub covariance: Vec<Cov2>,
    pub process_noise_q: f64,
    pub measurement_noise_r: f64,
}

impl KalmanState {
    /// Initialize at a shape with zero velocity and diagonal uncertainty.
    pub fn new(
        initial: &ShapeVector,
        initial_variance: f64,
        process_noise_q: f64,
        measurement_noise_r: f64,
    ) -> Result<Self> {
        if initial_variance < 0.0 || process_noise_q < 0.0 || measurement_noise_r <= 0.0 {
            return Err(Error::invalid(
                "Kalman noise parameters must be nonnegative (r strictly positive)",
            ));
        }
        Ok(Self {
            position: initial.coords().clone(),
            velocity: DVector::zeros(SHAPE_DIM),
            covariance: vec![
                Cov2 {
                    pp: initial_variance,
                    pv: 0.0,
                    vv: initial_variance,
                };
                SHAPE_DIM
            ],
            process_noise_q,
            measurement_noise_r,
        })
    }

    pub fn position_shape(&self) -> Result<ShapeVector> {
        ShapeVector::from_vector(self.position.clone())
    }
}

/// One predict-update cycle with an identity observation of the positions.
///
/// Returns the new state and its posterior position estimate.
pub fn kalman_step(state: &KalmanState, z: &ShapeVector) -> Result<(KalmanState, ShapeVector)> {
    for (i, c) in state.covariance.iter().enumerate() {
        if !c.is_psd(1e-9) {
            return Err(Error::NotPositiveDefinite(format!(
                "Kalman covariance block {i}"
            )));
        }
    }
    let mut next = state.clone();
    let q = state.process_noise_q;
    let r = state.measurement_noise_r;
    for i in 0..SHAPE_DIM {
        let c = state.covariance[i];
        // Predict: x' = x + v, constant velocity, unit frame interval;
        // continuous white-noise acceleration process covariance.
        let pos = state.position[i] + state.velocity[i];
        let pp = c.pp + 2.0 * c.pv + c.vv + q / 3.0;
        let pv = c.pv + c.vv + q / 2.0;
        let vv = c.vv + q;

        // Update with the measured position, Joseph-stabilized.
        let s = pp + r;
        let kp = pp / s;
        let kv = pv / s;
        let innovation = z.coords()[i] - pos;
        next.position[i] = pos + kp * innovation;
        next.velocity[i] = state.velocity[i] + kv * innovation;
        let one_kp = 1.0 - kp;
        let npp = one_kp * one_kp * pp + kp * kp * r;
        let npv = one_kp * (pv - kv * pp) + kp * kv * r;
        let nvv = vv - 2.0 * kv * pv + kv * kv * pp + kv * kv * r;
        next.covariance[i] = Cov2 {
            pp: npp,
            pv: npv,
            vv: nvv,
        };
    }
    let posterior = next.position_shape()?;
    Ok((next, posterior))
}

/// One frame of a tracked sequence.
#[derive(Debug, Clone)]
pub struct Frame {
    pub measurement: ShapeVector,
    pub ground_truth: Option<ShapeVector>,
    pub pose_deg: f64,
    pub expression: String,
}

/// An ordered, nonempty measurement sequence.
#[derive(Debug, Clone)]
pub struct ShapeSequence {
    pub frames: Vec<Frame>,
}

impl ShapeSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("sequence has no frames".into()));
        }
        Ok(Self { frames })
    }
}

/// Shape prior used per frame; `None` is the measurement-only baseline.
#[derive(Debug, Clone, Copy)]
pub enum ShapePrior<'a> {
    None,
    Frontal(&'a FrontalPriorModel),
    Pose(&'a PosePriorModel),
}

/// Per-point errors of one frame with ground truth.
#[derive(Debug, Clone)]
pub struct FrameErrors {
    pub frame_index: usize,
    pub per_point: Vec<f64>,
}

/// Mean error per facial component, mirroring the report table layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentMeans {
    pub eyebrow: f64,
    pub eye: f64,
    pub nose: f64,
    pub mouth: f64,
}

/// Tracking result: per-frame per-point errors, component means, the overall
/// mean and the improvement against the measurement-only baseline.
#[derive(Debug, Clone)]
pub struct TrackReport {
    pub frame_errors: Vec<FrameErrors>,
    pub component_means: ComponentMeans,
    pub overall_mean: f64,
    pub baseline_overall_mean: f64,
    /// `(baseline - tracked) / baseline * 100`.
    pub improvement_pct: f64,
    pub tracked: Vec<ShapeVector>,
}

/// Interocular-normalized per-point error:
/// `error_i = |P_i - Phat_i| / D_I`, with `D_I` the ground-truth frame's
/// interocular distance.
pub fn interocular_error(tracked: &ShapeVector, truth: &ShapeVector) -> Result<Vec<f64>> {
    let d_i = truth.interocular_distance();
    if d_i <= 1e-12 {
        return Err(Error::DegenerateGeometry(
            "ground truth has zero interocular distance".into(),
        ));
    }
    Ok((0..LANDMARK_COUNT)
        .map(|i| {
            let (tx, ty) = tracked.point(i);
            let (gx, gy) = truth.point(i);
            ((tx - gx).powi(2) + (ty - gy).powi(2)).sqrt() / d_i
        })
        .collect())
}

fn mean_over(indices: std::ops::Range<usize>, frames: &[FrameErrors]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for f in frames {
        for i in indices.clone() {
            total += f.per_point[i];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn summarize(frame_errors: Vec<FrameErrors>, baseline: f64, tracked: Vec<ShapeVector>) -> TrackReport {
    let overall = mean_over(0..LANDMARK_COUNT, &frame_errors);
    let component_means = ComponentMeans {
        eyebrow: mean_over(landmarks::EYEBROWS, &frame_errors),
        eye: mean_over(landmarks::EYES, &frame_errors),
        nose: mean_over(landmarks::NOSE, &frame_errors),
        mouth: mean_over(landmarks::MOUTH, &frame_errors),
    };
    let improvement_pct = if baseline > 0.0 {
        (baseline - overall) / baseline * 100.0
    } else {
        0.0
    };
    TrackReport {
        frame_errors,
        component_means,
        overall_mean: overall,
        baseline_overall_mean: baseline,
        improvement_pct,
        tracked,
    }
}

/// Track a sequence with per-frame prior refinement.
///
/// Per frame: Kalman predict, take the frame measurement, sample the prior
/// locally around it, fuse samples with the measurement, and feed the fused
/// shape to the Kalman update. The first frame initializes the filter. With
/// [`ShapePrior::None`] the report contains the raw measurement errors and
/// no filtering is applied.
pub fn track_sequence(
    seq: &ShapeSequence,
    prior: ShapePrior<'_>,
    mm: &MeasurementModel,
    fusion: &FusionMethod,
    sampler: &SamplerConfig,
    rng: &mut RngState,
) -> Result<TrackReport> {
    if seq.frames.is_empty() {
        return Err(Error::EmptyInput("sequence has no frames".into()));
    }
    if mm.dim() != SHAPE_DIM {
        return Err(Error::dims(format!(
            "measurement model dimension {} does not match shapes",
            mm.dim()
        )));
    }

    // Baseline: raw measurement errors, always computed for the improvement
    // figure.
    let mut baseline_errors = Vec::new();
    for (idx, frame) in seq.frames.iter().enumerate() {
        if let Some(truth) = &frame.ground_truth {
            baseline_errors.push(FrameErrors {
                frame_index: idx,
                per_point: interocular_error(&frame.measurement, truth)?,
            });
        }
    }
    let baseline_mean = mean_over(0..LANDMARK_COUNT, &baseline_errors);

    if matches!(prior, ShapePrior::None) {
        let tracked = seq.frames.iter().map(|f| f.measurement.clone()).collect();
        return Ok(summarize(baseline_errors, baseline_mean, tracked));
    }

    // r from the measurement model scale, per-coordinate average variance.
    let r = mm.sigma().trace() / mm.dim() as f64;
    let q = 1e-4;
    let mut state = KalmanState::new(&seq.frames[0].measurement, r.max(1e-6), q, r.max(1e-12))?;

    let mut frame_errors = Vec::new();
    let mut tracked = Vec::with_capacity(seq.frames.len());
    for (idx, frame) in seq.frames.iter().enumerate() {
        let refined = match prior {
            ShapePrior::Frontal(model) => {
                model.correct_shape(&frame.measurement, sampler, mm, fusion, rng)?
            }
            ShapePrior::Pose(model) => {
                model.correct_shape(&frame.measurement, sampler, mm, fusion, rng)?
            }
            ShapePrior::None => unreachable!("handled above"),
        };
        let posterior = if idx == 0 {
            // First frame initializes the filter at the refined estimate.
            state.position = refined.coords().clone();
            state.position_shape()?
        } else {
            let (next, posterior) = kalman_step(&state, &refined)?;
            state = next;
            posterior
        };
        if let Some(truth) = &frame.ground_truth {
            frame_errors.push(FrameErrors {
                frame_index: idx,
                per_point: interocular_error(&posterior, truth)?,
            });
        }
        tracked.push(posterior);
    }
    Ok(summarize(frame_errors, baseline_mean, tracked))
}
