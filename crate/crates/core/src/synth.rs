//! Synthetic 26-landmark face generation.
//!
//! A fixed canonical 3D template (versioned JSON asset) is deformed by
//! hand-authored per-expression displacement modes, perturbed per identity,
//! and optionally rotated about the vertical axis and projected
//! orthographically. Corruption models produce outlier points, noisy half
//! faces and global additive noise for the correction experiments, and
//! [`make_dataset`] emits training corpora and onset-to-apex sequences.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::shape::{landmarks, ShapeVector, LANDMARK_COUNT, SHAPE_DIM};
use crate::tracking::{Frame, ShapeSequence};

/// Canonical frontal template: 26 landmarks with depth coordinates,
/// bilaterally symmetric, interocular distance 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFace3D {
    points: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct TemplateDoc {
    format_version: u32,
    landmark_map: LandmarkMapDoc,
    points: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkMapDoc {
    eyebrows: [usize; 2],
    eyes: [usize; 2],
    nose: [usize; 2],
    mouth: [usize; 2],
}

static STANDARD_TEMPLATE: std::sync::OnceLock<CanonicalFace3D> = std::sync::OnceLock::new();

impl CanonicalFace3D {
    /// The template shipped with the crate.
    pub fn standard() -> &'static CanonicalFace3D {
        STANDARD_TEMPLATE.get_or_init(|| {
            CanonicalFace3D::from_json_str(include_str!("../assets/canonical_face.json"))
                .expect("embedded template is valid")
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let doc: TemplateDoc = serde_json::from_str(json)?;
        if doc.format_version > crate::io::FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: doc.format_version,
                supported: crate::io::FORMAT_VERSION,
            });
        }
        let map = &doc.landmark_map;
        let expected = [
            (map.eyebrows, landmarks::EYEBROWS),
            (map.eyes, landmarks::EYES),
            (map.nose, landmarks::NOSE),
            (map.mouth, landmarks::MOUTH),
        ];
        for (got, want) in expected {
            if got[0] != want.start || got[1] != want.end {
                return Err(Error::Schema {
                    field: "landmark_map".into(),
                    message: format!(
                        "component range [{}, {}) does not match the supported layout [{}, {})",
                        got[0], got[1], want.start, want.end
                    ),
                });
            }
        }
        Self::new(doc.points)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Validates landmark count, finiteness, bilateral symmetry and the
    /// canonical eye frame.
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::dims(format!(
                "template must have {LANDMARK_COUNT} points, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("template contains non-finite values"));
        }
        let tol = 1e-9;
        for (i, &j) in landmarks::MIRROR.iter().enumerate() {
            let a = points[i];
            let b = points[j];
            if (a[0] + b[0]).abs() > tol || (a[1] - b[1]).abs() > tol || (a[2] - b[2]).abs() > tol
            {
                return Err(Error::invalid(format!(
                    "template breaks bilateral symmetry at landmark pair ({i}, {j})"
                )));
            }
        }
        let face = Self { points };
        let frontal = face.frontal_shape();
        if !frontal.is_normalized(1e-9) {
            return Err(Error::NotNormalized(
                "template is not in the canonical eye frame".into(),
            ));
        }
        Ok(face)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn depth(&self, landmark: usize) -> f64 {
        self.points[landmark][2]
    }

    /// The template's frontal 2D shape.
    pub fn frontal_shape(&self) -> ShapeVector {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p[0], p[1])).collect();
        ShapeVector::from_points(&pts).expect("validated template")
    }
}

/// The six non-neutral basic expressions plus neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpressionLabel {
    Neutral,
    Anger,
    Disgust,
    Fear,
    Happiness,
    Sadness,
    Surprise,
}

impl ExpressionLabel {
    pub const ALL: [ExpressionLabel; 7] = [
        ExpressionLabel::Neutral,
        ExpressionLabel::Anger,
        ExpressionLabel::Disgust,
        ExpressionLabel::Fear,
        ExpressionLabel::Happiness,
        ExpressionLabel::Sadness,
        ExpressionLabel::Surprise,
    ];

    /// All labels except neutral.
    pub const EXPRESSIVE: [ExpressionLabel; 6] = [
        ExpressionLabel::Anger,
        ExpressionLabel::Disgust,
        ExpressionLabel::Fear,
        ExpressionLabel::Happiness,
        ExpressionLabel::Sadness,
        ExpressionLabel::Surprise,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExpressionLabel::Neutral => "neutral",
            ExpressionLabel::Anger => "anger",
            ExpressionLabel::Disgust => "disgust",
            ExpressionLabel::Fear => "fear",
            ExpressionLabel::Happiness => "happiness",
            ExpressionLabel::Sadness => "sadness",
            ExpressionLabel::Surprise => "surprise",
        }
    }
}

impl std::fmt::Display for ExpressionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExpressionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExpressionLabel::ALL
            .iter()
            .find(|l| l.as_str() == s)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown expression label `{s}`")))
    }
}

/// Displacement mode of one expression at unit intensity, as a 52-vector.
/// Eye landmarks never move so normalization cannot absorb expression
/// signal.
pub fn expression_mode(label: ExpressionLabel) -> DVector<f64> {
    let mut d = DVector::zeros(SHAPE_DIM);
    let mut set = |i: usize, dx: f64, dy: f64| {
        d[2 * i] = dx;
        d[2 * i + 1] = dy;
    };
    match label {
        ExpressionLabel::Neutral => {}
        ExpressionLabel::Anger => {
            set(0, 0.0, -0.04);
            set(1, 0.0, -0.08);
            set(2, 0.03, -0.10);
            set(3, -0.03, -0.10);
            set(4, 0.0, -0.08);
            set(5, 0.0, -0.04);
            set(16, 0.0, 0.02);
            set(17, 0.0, 0.02);
            set(18, 0.02, -0.02);
            set(19, 0.0, -0.02);
            set(20, 0.0, -0.02);
            set(21, 0.0, -0.02);
            set(22, 0.0, -0.02);
            set(23, -0.02, -0.02);
            set(24, 0.0, 0.04);
            set(25, 0.0, 0.04);
        }
        ExpressionLabel::Disgust => {
            set(0, 0.0, -0.02);
            set(1, 0.0, -0.05);
            set(2, 0.0, -0.04);
            set(3, 0.0, -0.04);
            set(4, 0.0, -0.05);
            set(5, 0.0, -0.02);
            set(14, 0.0, 0.02);
            set(15, 0.0, 0.02);
            set(16, 0.0, 0.06);
            set(17, 0.0, 0.06);
            set(18, 0.01, 0.0);
            set(19, 0.0, 0.05);
            set(20, 0.0, 0.06);
            set(21, 0.0, 0.06);
            set(22, 0.0, 0.05);
            set(23, -0.01, 0.0);
            set(24, 0.0, 0.01);
            set(25, 0.0, 0.01);
        }
        ExpressionLabel::Fear => {
            set(0, 0.0, 0.08);
            set(1, 0.0, 0.12);
            set(2, 0.0, 0.14);
            set(3, 0.0, 0.14);
            set(4, 0.0, 0.12);
            set(5, 0.0, 0.08);
            set(18, -0.04, -0.04);
            set(19, 0.0, 0.01);
            set(20, 0.0, 0.02);
            set(21, 0.0, 0.02);
            set(22, 0.0, 0.01);
            set(23, 0.04, -0.04);
            set(24, 0.0, -0.12);
            set(25, 0.0, -0.12);
        }
        ExpressionLabel::Happiness => {
            set(1, 0.0, 0.02);
            set(4, 0.0, 0.02);
            set(16, 0.0, 0.02);
            set(17, 0.0, 0.02);
            set(18, -0.06, 0.08);
            set(19, 0.0, 0.02);
            set(20, 0.0, 0.01);
            set(21, 0.0, 0.01);
            set(22, 0.0, 0.02);
            set(23, 0.06, 0.08);
            set(24, 0.0, -0.04);
            set(25, 0.0, -0.04);
        }
        ExpressionLabel::Sadness => {
            set(0, 0.0, -0.03);
            set(1, 0.0, 0.02);
            set(2, 0.02, 0.08);
            set(3, -0.02, 0.08);
            set(4, 0.0, 0.02);
            set(5, 0.0, -0.03);
            set(18, 0.0, -0.08);
            set(19, 0.0, -0.01);
            set(22, 0.0, -0.01);
            set(23, 0.0, -0.08);
            set(24, 0.0, 0.02);
            set(25, 0.0, 0.02);
        }
        ExpressionLabel::Surprise => {
            set(0, 0.0, 0.18);
            set(1, 0.0, 0.20);
            set(2, 0.0, 0.18);
            set(3, 0.0, 0.18);
            set(4, 0.0, 0.20);
            set(5, 0.0, 0.18);
            set(14, 0.0, 0.02);
            set(15, 0.0, 0.02);
            set(18, 0.02, -0.10);
            set(19, 0.0, 0.03);
            set(20, 0.0, 0.04);
            set(21, 0.0, 0.04);
            set(22, 0.0, 0.03);
            set(23, -0.02, -0.10);
            set(24, 0.0, -0.25);
            set(25, 0.0, -0.25);
        }
    }
    d
}

/// An expression at a given intensity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpressionSpec {
    pub label: ExpressionLabel,
    pub intensity: f64,
}

impl ExpressionSpec {
    pub fn new(label: ExpressionLabel, intensity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(Error::invalid(format!(
                "expression intensity must lie in [0, 1], got {intensity}"
            )));
        }
        Ok(Self { label, intensity })
    }

    pub fn neutral() -> Self {
        Self {
            label: ExpressionLabel::Neutral,
            intensity: 0.0,
        }
    }

    /// Intensity-scaled displacement.
    pub fn deformation(&self) -> DVector<f64> {
        expression_mode(self.label) * self.intensity
    }
}

/// Generate a normalized frontal shape: template, plus expression
/// displacement, plus an identity perturbation drawn from a stream derived
/// from `identity_seed` (std `identity_noise_std` per coordinate).
pub fn generate_shape(
    expr: &ExpressionSpec,
    identity_seed: u64,
    identity_noise_std: f64,
) -> ShapeVector {
    let template = CanonicalFace3D::standard().frontal_shape();
    let mut coords = template.into_vector() + expr.deformation();
    if identity_noise_std > 0.0 {
        let mut rng = RngState::for_stage(identity_seed, "identity-perturbation");
        for c in coords.iter_mut() {
            *c += identity_noise_std * rng.normal();
        }
    }
    ShapeVector::from_vector_unchecked(coords)
        .normalized_by_eyes()
        .expect("template eyes are well separated")
}

/// Yaw rotation coefficients `(cos, sin)` for `theta_deg`, built so that
/// negating the angle negates the sine bit-exactly.
pub fn yaw_rotation(theta_deg: f64) -> (f64, f64) {
    let r = theta_deg.to_radians();
    (r.abs().cos(), r.abs().sin() * r.signum())
}

/// Maximum yaw magnitude accepted by [`project_pose`], degrees.
pub const MAX_POSE_DEG: f64 = 50.0;

/// Rotate a frontal shape about the vertical axis by `theta_deg` using the
/// template's depth coordinates, project orthographically
/// (`x' = x cos + z sin`, `y' = y`) and re-normalize by the eyes.
pub fn project_pose(
    shape: &ShapeVector,
    theta_deg: f64,
    z_template: &CanonicalFace3D,
) -> Result<ShapeVector> {
    if !theta_deg.is_finite() || theta_deg.abs() >= MAX_POSE_DEG {
        return Err(Error::invalid(format!(
            "pose angle must satisfy |theta| < {MAX_POSE_DEG} degrees, got {theta_deg}"
        )));
    }
    let (cos_t, sin_t) = yaw_rotation(theta_deg);
    let mut out = DVector::zeros(SHAPE_DIM);
    for i in 0..LANDMARK_COUNT {
        let (x, y) = shape.point(i);
        let z = z_template.depth(i);
        out[2 * i] = x * cos_t + z * sin_t;
        out[2 * i + 1] = y;
    }
    ShapeVector::from_vector_unchecked(out).normalized_by_eyes()
}

/// Corruption applied to a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Displace each target landmark by `magnitude` in a random direction.
    OutlierPoint,
    /// Gaussian noise (std `magnitude`) on all left-half landmarks.
    HalfFace,
    /// Gaussian noise (std `magnitude`) on every coordinate.
    AdditiveNoise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    pub mode: CorruptionMode,
    /// Target landmark indices; used by `OutlierPoint` only.
    pub targets: Vec<usize>,
    /// Interocular units.
    pub magnitude: f64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.magnitude < 0.0 || !self.magnitude.is_finite() {
            return Err(Error::invalid("corruption magnitude must be >= 0"));
        }
        if let Some(&bad) = self.targets.iter().find(|&&i| i >= LANDMARK_COUNT) {
            return Err(Error::invalid(format!(
                "corruption target {bad} is out of range (< {LANDMARK_COUNT})"
            )));
        }
        if self.mode == CorruptionMode::OutlierPoint && self.targets.is_empty() {
            return Err(Error::invalid("outlier corruption needs target indices"));
        }
        Ok(())
    }
}

/// Apply a corruption model to a shape.
pub fn corrupt(shape: &ShapeVector, spec: &CorruptionSpec, rng: &mut RngState) -> Result<ShapeVector> {
    spec.validate()?;
    let mut out = shape.clone();
    if spec.magnitude == 0.0 {
        return Ok(out);
    }
    match spec.mode {
        CorruptionMode::OutlierPoint => {
            for &i in &spec.targets {
                let angle = rng.uniform() * std::f64::consts::TAU;
                let (x, y) = out.point(i);
                out.set_point(
                    i,
                    x + spec.magnitude * angle.cos(),
                    y + spec.magnitude * angle.sin(),
                );
            }
        }
        CorruptionMode::HalfFace => {
            for &i in landmarks::LEFT_HALF.iter() {
                let (x, y) = out.point(i);
                out.set_point(
                    i,
                    x + spec.magnitude * rng.normal(),
                    y + spec.magnitude * rng.normal(),
                );
            }
        }
        CorruptionMode::AdditiveNoise => {
            for i in 0..LANDMARK_COUNT {
                let (x, y) = out.point(i);
                out.set_point(
                    i,
                    x + spec.magnitude * rng.normal(),
                    y + spec.magnitude * rng.normal(),
                );
            }
        }
    }
    Ok(out)
}

/// A labeled generated shape.
#[derive(Debug, Clone)]
pub struct LabeledShape {
    pub id: u64,
    pub expression: ExpressionLabel,
    pub pose_deg: f64,
    pub shape: ShapeVector,
}

/// A (frontal, posed) training pair.
#[derive(Debug, Clone)]
pub struct ShapePair {
    pub id: u64,
    pub expression: ExpressionLabel,
    pub pose_deg: f64,
    pub frontal: ShapeVector,
    pub posed: ShapeVector,
}

/// One generated sequence with its identifier.
#[derive(Debug, Clone)]
pub struct GeneratedSequence {
    pub id: u64,
    pub expression: ExpressionLabel,
    pub sequence: ShapeSequence,
}

/// Measurement noise structure for generated sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub count: usize,
    pub frames: usize,
    pub measurement_noise_std: f64,
    /// Probability that a frame carries an extra outlier landmark.
    pub outlier_frame_prob: f64,
    pub outlier_magnitude: f64,
    pub pose_deg: f64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            count: 10,
            frames: 20,
            measurement_noise_std: 0.05,
            outlier_frame_prob: 0.1,
            outlier_magnitude: 0.4,
            pose_deg: 0.0,
        }
    }
}

/// Dataset generation settings.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    /// Number of frontal shapes.
    pub shape_count: usize,
    pub expressions: Vec<ExpressionLabel>,
    /// Pose angles for the paired corpus; empty means no pairs.
    pub pose_angles_deg: Vec<f64>,
    pub identity_noise_std: f64,
    pub sequences: Option<SequenceSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            shape_count: 1000,
            expressions: ExpressionLabel::ALL.to_vec(),
            pose_angles_deg: vec![],
            identity_noise_std: 0.02,
            sequences: None,
        }
    }
}

/// Generated corpora: frontal shapes, pose-transfer pairs, sequences.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub shapes: Vec<LabeledShape>,
    pub pairs: Vec<ShapePair>,
    pub sequences: Vec<GeneratedSequence>,
}

/// Generate a dataset: frontal shapes cycling through the configured
/// expressions with random intensities, matching `(frontal, posed)` pairs
/// for each requested angle, and onset-to-apex sequences with measurement
/// noise and occasional outlier frames.
pub fn make_dataset(cfg: &DatasetConfig, rng: &mut RngState) -> Result<Dataset> {
    if cfg.shape_count == 0 {
        return Err(Error::invalid("dataset needs at least one shape"));
    }
    if cfg.expressions.is_empty() {
        return Err(Error::invalid("dataset needs at least one expression"));
    }
    let template = CanonicalFace3D::standard();
    let mut out = Dataset::default();
    let mut next_id = 0u64;

    for k in 0..cfg.shape_count {
        let label = cfg.expressions[k % cfg.expressions.len()];
        let intensity = if label == ExpressionLabel::Neutral {
            0.0
        } else {
            rng.uniform()
        };
        let expr = ExpressionSpec::new(label, intensity)?;
        let identity_seed = rng.draw_seed();
        let shape = generate_shape(&expr, identity_seed, cfg.identity_noise_std);
        for &angle in &cfg.pose_angles_deg {
            let posed = project_pose(&shape, angle, template)?;
            out.pairs.push(ShapePair {
                id: next_id,
                expression: label,
                pose_deg: angle,
                frontal: shape.clone(),
                posed,
            });
            next_id += 1;
        }
        out.shapes.push(LabeledShape {
            id: next_id,
            expression: label,
            pose_deg: 0.0,
            shape,
        });
        next_id += 1;
    }

    if let Some(seq_spec) = &cfg.sequences {
        let expressive: Vec<ExpressionLabel> = cfg
            .expressions
            .iter()
            .copied()
            .filter(|l| *l != ExpressionLabel::Neutral)
            .collect();
        if expressive.is_empty() {
            return Err(Error::invalid(
                "sequence generation needs a non-neutral expression",
            ));
        }
        for s in 0..seq_spec.count {
            let label = expressive[s % expressive.len()];
            let identity_seed = rng.draw_seed();
            let mut frames = Vec::with_capacity(seq_spec.frames);
            for t in 0..seq_spec.frames {
                let intensity = if seq_spec.frames > 1 {
                    t as f64 / (seq_spec.frames - 1) as f64
                } else {
                    1.0
                };
                let expr = ExpressionSpec::new(label, intensity)?;
                let mut truth = generate_shape(&expr, identity_seed, cfg.identity_noise_std);
                if seq_spec.pose_deg != 0.0 {
                    truth = project_pose(&truth, seq_spec.pose_deg, template)?;
                }
                let mut measurement = corrupt(
                    &truth,
                    &CorruptionSpec {
                        mode: CorruptionMode::AdditiveNoise,
                        targets: vec![],
                        magnitude: seq_spec.measurement_noise_std,
                    },
                    rng,
                )?;
                if seq_spec.outlier_frame_prob > 0.0 && rng.bernoulli(seq_spec.outlier_frame_prob)
                {
                    let target = rng.index(LANDMARK_COUNT);
                    measurement = corrupt(
                        &measurement,
                        &CorruptionSpec {
                            mode: CorruptionMode::OutlierPoint,
                            targets: vec![target],
                            magnitude: seq_spec.outlier_magnitude,
                        },
                        rng,
                    )?;
                }
                frames.push(Frame {
                    measurement,
                    ground_truth: Some(truth),
                    pose_deg: seq_spec.pose_deg,
                    expression: label.as_str().to_string(),
                });
            }
            out.sequences.push(GeneratedSequence {
                id: s as u64,
                expression: label,
                sequence: ShapeSequence::new(frames)?,
            });
        }
    }
    Ok(out)
}
