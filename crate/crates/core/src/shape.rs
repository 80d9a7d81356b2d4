//! Landmark shape vectors in the eye-normalized frame.
//!
//! A face shape is 26 landmarks, stored as 52 interleaved coordinates
//! `[p1x, p1y, ..., p26x, p26y]`. The canonical frame places the midpoint of
//! the two eye centers at the origin, the eye line horizontal and the
//! interocular distance at 1, so coordinates read directly in interocular
//! units.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of tracked landmarks.
pub const LANDMARK_COUNT: usize = 26;
/// Dimension of a flattened shape vector.
pub const SHAPE_DIM: usize = 2 * LANDMARK_COUNT;

/// Landmark index layout shared by the generator, the priors and the
/// per-component error reports.
pub mod landmarks {
    use std::ops::Range;

    pub const EYEBROWS: Range<usize> = 0..6;
    pub const EYES: Range<usize> = 6..14;
    pub const NOSE: Range<usize> = 14..18;
    pub const MOUTH: Range<usize> = 18..26;

    pub const LEFT_EYE: Range<usize> = 6..10;
    pub const RIGHT_EYE: Range<usize> = 10..14;

    /// The 13 landmarks on the left half of the face (viewer's left,
    /// negative x in the canonical frame).
    pub const LEFT_HALF: [usize; 13] = [0, 1, 2, 6, 7, 8, 9, 14, 16, 18, 19, 20, 25];

    /// Bilateral mirror pairing: landmark `i` maps to `MIRROR[i]` when the
    /// face is reflected about the vertical axis. Within each eye the
    /// pairing preserves landmark order, keeping eye-center sums bit-exact
    /// under mirroring.
    pub const MIRROR: [usize; 26] = [
        5, 4, 3, 2, 1, 0, // eyebrows
        10, 11, 12, 13, 6, 7, 8, 9, // eyes
        15, 14, 17, 16, // nose
        23, 22, 21, 20, 19, 18, 25, 24, // mouth
    ];
}

/// 26 landmark positions as a flat 52-vector, eye-normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeVector {
    coords: DVector<f64>,
}

impl ShapeVector {
    pub fn from_vector(coords: DVector<f64>) -> Result<Self> {
        if coords.len() != SHAPE_DIM {
            return Err(Error::dims(format!(
                "shape vector must have length {SHAPE_DIM}, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("shape vector contains non-finite values"));
        }
        Ok(Self { coords })
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::from_vector(DVector::from_column_slice(coords))
    }

    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        let mut flat = Vec::with_capacity(points.len() * 2);
        for &(x, y) in points {
            flat.push(x);
            flat.push(y);
        }
        Self::from_slice(&flat)
    }

    pub(crate) fn from_vector_unchecked(coords: DVector<f64>) -> Self {
        debug_assert_eq!(coords.len(), SHAPE_DIM);
        Self { coords }
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.coords
    }

    pub fn point(&self, landmark: usize) -> (f64, f64) {
        (self.coords[2 * landmark], self.coords[2 * landmark + 1])
    }

    pub fn set_point(&mut self, landmark: usize, x: f64, y: f64) {
        self.coords[2 * landmark] = x;
        self.coords[2 * landmark + 1] = y;
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..LANDMARK_COUNT).map(|i| self.point(i))
    }

    /// Center of an eye: the mean of its four landmarks.
    fn eye_center(&self, range: std::ops::Range<usize>) -> (f64, f64) {
        let n = range.len() as f64;
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in range {
            let (x, y) = self.point(i);
            cx += x;
            cy += y;
        }
        (cx / n, cy / n)
    }

    pub fn left_eye_center(&self) -> (f64, f64) {
        self.eye_center(landmarks::LEFT_EYE)
    }

    pub fn right_eye_center(&self) -> (f64, f64) {
        self.eye_center(landmarks::RIGHT_EYE)
    }

    pub fn interocular_distance(&self) -> f64 {
        let (lx, ly) = self.left_eye_center();
        let (rx, ry) = self.right_eye_center();
        ((rx - lx).powi(2) + (ry - ly).powi(2)).sqrt()
    }

    /// Whether the shape sits in the canonical eye frame within `tol`:
    /// eye-center midpoint at the origin, eye line horizontal, interocular
    /// distance 1.
    pub fn is_normalized(&self, tol: f64) -> bool {
        let (lx, ly) = self.left_eye_center();
        let (rx, ry) = self.right_eye_center();
        let (mx, my) = ((lx + rx) / 2.0, (ly + ry) / 2.0);
        let dy = ry - ly;
        let dist = ((rx - lx).powi(2) + dy * dy).sqrt();
        mx.abs() <= tol && my.abs() <= tol && dy.abs() <= tol && (dist - 1.0).abs() <= tol
    }

    /// Map the shape into the canonical eye frame: translate the eye-center
    /// midpoint to the origin, rotate the eye line horizontal, scale the
    /// interocular distance to 1.
    pub fn normalized_by_eyes(&self) -> Result<ShapeVector> {
        let (lx, ly) = self.left_eye_center();
        let (rx, ry) = self.right_eye_center();
        let (dx, dy) = (rx - lx, ry - ly);
        let dist = (dx * dx + dy * dy).sqrt();
        if dist < 1e-12 {
            return Err(Error::DegenerateGeometry(
                "eye centers coincide, cannot normalize".into(),
            ));
        }
        let (mx, my) = ((lx + rx) / 2.0, (ly + ry) / 2.0);
        // Rotation undoing the eye-line angle, built directly from the eye
        // vector so no trig round-trip is involved.
        let (cos_t, sin_t) = (dx / dist, dy / dist);
        let mut out = DVector::zeros(SHAPE_DIM);
        for i in 0..LANDMARK_COUNT {
            let (px, py) = self.point(i);
            let (tx, ty) = (px - mx, py - my);
            out[2 * i] = (tx * cos_t + ty * sin_t) / dist;
            out[2 * i + 1] = (-tx * sin_t + ty * cos_t) / dist;
        }
        Ok(ShapeVector::from_vector_unchecked(out))
    }

    /// Reflect about the vertical axis, remapping landmarks through the
    /// bilateral pairing so the result is again a valid left/right layout.
    pub fn mirrored(&self) -> ShapeVector {
        let mut out = DVector::zeros(SHAPE_DIM);
        for i in 0..LANDMARK_COUNT {
            let j = landmarks::MIRROR[i];
            let (x, y) = self.point(j);
            out[2 * i] = -x;
            out[2 * i + 1] = y;
        }
        ShapeVector::from_vector_unchecked(out)
    }
}

/// Per-coordinate affine map used to feed unit-scale data to the
/// Gaussian-visible models; stored alongside every trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Identity map (zero mean, unit scale).
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit per-coordinate mean and standard deviation. Coordinates with
    /// (near-)zero spread keep unit scale.
    pub fn fit(shapes: &[ShapeVector]) -> Result<Self> {
        if shapes.len() < 2 {
            return Err(Error::EmptyInput(
                "standardizer needs at least two shapes".into(),
            ));
        }
        let n = shapes.len() as f64;
        let mut mean = vec![0.0; SHAPE_DIM];
        for s in shapes {
            for (m, v) in mean.iter_mut().zip(s.coords().iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; SHAPE_DIM];
        for s in shapes {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(s.coords().iter()) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / (n - 1.0)).sqrt();
                if s < 1e-8 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, shape: &ShapeVector) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            (shape.coords()[i] - self.mean[i]) / self.std[i]
        })
    }

    pub fn destandardize(&self, v: &DVector<f64>) -> Result<ShapeVector> {
        if v.len() != self.dim() {
            return Err(Error::dims(format!(
                "standardizer dimension {} does not match vector length {}",
                self.dim(),
                v.len()
            )));
        }
        ShapeVector::from_vector(DVector::from_fn(self.dim(), |i, _| {
            v[i] * self.std[i] + self.mean[i]
        }))
    }

    pub fn is_valid(&self) -> bool {
        self.mean.len() == self.std.len()
            && self.mean.iter().all(|v| v.is_finite())
            && self.std.iter().all(|v| v.is_finite() && *v > 0.0)
    }
}
