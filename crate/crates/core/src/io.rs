//! On-disk formats: model JSON documents, JSON-Lines corpora and report
//! CSVs. Every document carries a `format_version`; loading refuses versions
//! newer than this build supports. Floating point goes through serde_json's
//! shortest round-trip encoding, so save-then-load reproduces every `f64`
//! bit-exactly.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontal::FrontalPriorModel;
use crate::pose::{PosePriorModel, ThreeWayParams};
use crate::rbm::{BinaryRbmParams, GbRbmParams};
use crate::shape::{ShapeVector, Standardizer};
use crate::synth::{ExpressionLabel, GeneratedSequence, LabeledShape, ShapePair};
use crate::tracking::{Frame, ShapeSequence, TrackReport};

/// Version written into and accepted from every file this build produces.
pub const FORMAT_VERSION: u32 = 1;

fn check_version(found: u32) -> Result<()> {
    if found > FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn schema(field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        field: field.into(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// RBM parameter documents
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RbmDoc {
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "V")]
    visible: usize,
    #[serde(rename = "H")]
    hidden: usize,
    /// Row-major H x V.
    weights: Vec<f64>,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    standardizer: Option<Standardizer>,
}

fn matrix_to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn matrix_from_row_major(field: &str, data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(schema(
            field,
            format!("expected {} values ({rows}x{cols}), got {}", rows * cols, data.len()),
        ));
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| data[r * cols + c]))
}

fn rbm_doc(kind: &str, weights: &DMatrix<f64>, vb: &DVector<f64>, hb: &DVector<f64>, st: Option<&Standardizer>) -> RbmDoc {
    RbmDoc {
        kind: kind.into(),
        visible: weights.ncols(),
        hidden: weights.nrows(),
        weights: matrix_to_row_major(weights),
        visible_bias: vb.iter().copied().collect(),
        hidden_bias: hb.iter().copied().collect(),
        standardizer: st.cloned(),
    }
}

impl RbmDoc {
    fn parts(&self, expect_kind: &str) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
        if self.kind != expect_kind {
            return Err(schema(
                "type",
                format!("expected `{expect_kind}`, found `{}`", self.kind),
            ));
        }
        if self.visible_bias.len() != self.visible {
            return Err(schema("visible_bias", "length does not match V"));
        }
        if self.hidden_bias.len() != self.hidden {
            return Err(schema("hidden_bias", "length does not match H"));
        }
        let w = matrix_from_row_major("weights", &self.weights, self.hidden, self.visible)?;
        Ok((
            w,
            DVector::from_column_slice(&self.visible_bias),
            DVector::from_column_slice(&self.hidden_bias),
        ))
    }
}

// ---------------------------------------------------------------------------
// Model documents
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FrontalDoc {
    format_version: u32,
    layer1: RbmDoc,
    layer2: RbmDoc,
    #[serde(rename = "H1")]
    h1: usize,
    #[serde(rename = "H2")]
    h2: usize,
}

#[derive(Serialize, Deserialize)]
struct ThreeWayDoc {
    #[serde(rename = "V")]
    visible: usize,
    #[serde(rename = "K")]
    hidden: usize,
    #[serde(rename = "F")]
    factors: usize,
    /// Row-major V x F.
    factor_x: Vec<f64>,
    factor_y: Vec<f64>,
    /// Row-major K x F.
    factor_h: Vec<f64>,
    bias_x: Vec<f64>,
    bias_y: Vec<f64>,
    bias_h: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    format_version: u32,
    frontal: FrontalDoc,
    transfer: ThreeWayDoc,
    standardizer_x: Standardizer,
    standardizer_y: Standardizer,
}

fn frontal_doc(model: &FrontalPriorModel) -> FrontalDoc {
    FrontalDoc {
        format_version: FORMAT_VERSION,
        layer1: rbm_doc(
            "gb",
            &model.layer1.weights,
            &model.layer1.visible_bias,
            &model.layer1.hidden_bias,
            Some(&model.standardizer),
        ),
        layer2: rbm_doc(
            "binary",
            &model.layer2.weights,
            &model.layer2.visible_bias,
            &model.layer2.hidden_bias,
            None,
        ),
        h1: model.layer1.hidden_count(),
        h2: model.layer2.hidden_count(),
    }
}

fn frontal_from_doc(doc: &FrontalDoc) -> Result<FrontalPriorModel> {
    check_version(doc.format_version)?;
    let (w1, vb1, hb1) = doc.layer1.parts("gb")?;
    let (w2, vb2, hb2) = doc.layer2.parts("binary")?;
    let standardizer = doc
        .layer1
        .standardizer
        .clone()
        .ok_or_else(|| schema("layer1.standardizer", "missing for a Gaussian-visible layer"))?;
    if doc.h1 != w1.nrows() || doc.h2 != w2.nrows() {
        return Err(schema("H1", "hidden sizes disagree with layer shapes"));
    }
    FrontalPriorModel::new(
        GbRbmParams::new(w1, vb1, hb1)?,
        BinaryRbmParams::new(w2, vb2, hb2)?,
        standardizer,
    )
}

fn pose_doc(model: &PosePriorModel) -> PoseDoc {
    let t = &model.transfer;
    PoseDoc {
        format_version: FORMAT_VERSION,
        frontal: frontal_doc(&model.frontal),
        transfer: ThreeWayDoc {
            visible: t.visible_count(),
            hidden: t.hidden_count(),
            factors: t.factor_count(),
            factor_x: matrix_to_row_major(&t.factor_x),
            factor_y: matrix_to_row_major(&t.factor_y),
            factor_h: matrix_to_row_major(&t.factor_h),
            bias_x: t.bias_x.iter().copied().collect(),
            bias_y: t.bias_y.iter().copied().collect(),
            bias_h: t.bias_h.iter().copied().collect(),
        },
        standardizer_x: model.standardizer_x.clone(),
        standardizer_y: model.standardizer_y.clone(),
    }
}

fn pose_from_doc(doc: &PoseDoc) -> Result<PosePriorModel> {
    check_version(doc.format_version)?;
    let frontal = frontal_from_doc(&doc.frontal)?;
    let t = &doc.transfer;
    let transfer = ThreeWayParams::new(
        matrix_from_row_major("factor_x", &t.factor_x, t.visible, t.factors)?,
        matrix_from_row_major("factor_y", &t.factor_y, t.visible, t.factors)?,
        matrix_from_row_major("factor_h", &t.factor_h, t.hidden, t.factors)?,
        DVector::from_column_slice(&t.bias_x),
        DVector::from_column_slice(&t.bias_y),
        DVector::from_column_slice(&t.bias_h),
    )?;
    PosePriorModel::new(
        frontal,
        transfer,
        doc.standardizer_x.clone(),
        doc.standardizer_y.clone(),
    )
}

/// A model file is either a frontal prior or a full pose prior.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum LoadedModel {
    Frontal(FrontalPriorModel),
    Pose(PosePriorModel),
}

pub fn frontal_model_json(model: &FrontalPriorModel) -> String {
    serde_json::to_string_pretty(&frontal_doc(model)).expect("frontal document serializes")
}

pub fn pose_model_json(model: &PosePriorModel) -> String {
    serde_json::to_string_pretty(&pose_doc(model)).expect("pose document serializes")
}

pub fn save_frontal_model(model: &FrontalPriorModel, path: &Path) -> Result<()> {
    fs::write(path, frontal_model_json(model))?;
    Ok(())
}

pub fn save_pose_model(model: &PosePriorModel, path: &Path) -> Result<()> {
    fs::write(path, pose_model_json(model))?;
    Ok(())
}

/// Load either model kind, telling them apart by the `transfer` field.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let text = fs::read_to_string(path)?;
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(v) = probe.get("format_version").and_then(|v| v.as_u64()) {
        check_version(v as u32)?;
    } else {
        return Err(schema("format_version", "missing or not an integer"));
    }
    if probe.get("transfer").is_some() {
        let doc: PoseDoc = serde_json::from_str(&text)?;
        Ok(LoadedModel::Pose(pose_from_doc(&doc)?))
    } else if probe.get("layer1").is_some() {
        let doc: FrontalDoc = serde_json::from_str(&text)?;
        Ok(LoadedModel::Frontal(frontal_from_doc(&doc)?))
    } else {
        Err(schema("layer1", "file is neither a frontal nor a pose model"))
    }
}

// ---------------------------------------------------------------------------
// Corpora (JSON Lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ShapeRecord {
    format_version: u32,
    id: u64,
    expression_label: String,
    pose_deg: f64,
    coords: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    format_version: u32,
    id: u64,
    expression_label: String,
    pose_deg: f64,
    x: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SequenceFrameRecord {
    format_version: u32,
    sequence_id: u64,
    frame: usize,
    expression: String,
    pose_deg: f64,
    measurement: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth: Option<Vec<f64>>,
}

fn shape_from_coords(field: &str, coords: &[f64]) -> Result<ShapeVector> {
    ShapeVector::from_slice(coords).map_err(|e| schema(field, e.to_string()))
}

fn parse_label(label: &str) -> Result<ExpressionLabel> {
    label.parse()
}

pub fn write_shape_corpus(shapes: &[LabeledShape], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for s in shapes {
        let record = ShapeRecord {
            format_version: FORMAT_VERSION,
            id: s.id,
            expression_label: s.expression.as_str().into(),
            pose_deg: s.pose_deg,
            coords: s.shape.coords().iter().copied().collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

pub fn read_shape_corpus(path: &Path) -> Result<Vec<LabeledShape>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut shapes = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ShapeRecord = serde_json::from_str(&line)?;
        check_version(record.format_version)?;
        shapes.push(LabeledShape {
            id: record.id,
            expression: parse_label(&record.expression_label)?,
            pose_deg: record.pose_deg,
            shape: shape_from_coords("coords", &record.coords)?,
        });
    }
    Ok(shapes)
}

pub fn write_pair_corpus(pairs: &[ShapePair], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for p in pairs {
        let record = PairRecord {
            format_version: FORMAT_VERSION,
            id: p.id,
            expression_label: p.expression.as_str().into(),
            pose_deg: p.pose_deg,
            x: p.frontal.coords().iter().copied().collect(),
            y: p.posed.coords().iter().copied().collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

pub fn read_pair_corpus(path: &Path) -> Result<Vec<ShapePair>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut pairs = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line)?;
        check_version(record.format_version)?;
        pairs.push(ShapePair {
            id: record.id,
            expression: parse_label(&record.expression_label)?,
            pose_deg: record.pose_deg,
            frontal: shape_from_coords("x", &record.x)?,
            posed: shape_from_coords("y", &record.y)?,
        });
    }
    Ok(pairs)
}

pub fn write_sequences(sequences: &[GeneratedSequence], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for gs in sequences {
        for (t, frame) in gs.sequence.frames.iter().enumerate() {
            let record = SequenceFrameRecord {
                format_version: FORMAT_VERSION,
                sequence_id: gs.id,
                frame: t,
                expression: frame.expression.clone(),
                pose_deg: frame.pose_deg,
                measurement: frame.measurement.coords().iter().copied().collect(),
                ground_truth: frame
                    .ground_truth
                    .as_ref()
                    .map(|g| g.coords().iter().copied().collect()),
            };
            writeln!(out, "{}", serde_json::to_string(&record)?)?;
        }
    }
    Ok(())
}

pub fn read_sequences(path: &Path) -> Result<Vec<GeneratedSequence>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut by_id: Vec<(u64, Vec<(usize, Frame)>)> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SequenceFrameRecord = serde_json::from_str(&line)?;
        check_version(record.format_version)?;
        let frame = Frame {
            measurement: shape_from_coords("measurement", &record.measurement)?,
            ground_truth: record
                .ground_truth
                .as_deref()
                .map(|g| shape_from_coords("ground_truth", g))
                .transpose()?,
            pose_deg: record.pose_deg,
            expression: record.expression.clone(),
        };
        match by_id.iter_mut().find(|(id, _)| *id == record.sequence_id) {
            Some((_, frames)) => frames.push((record.frame, frame)),
            None => by_id.push((record.sequence_id, vec![(record.frame, frame)])),
        }
    }
    let mut out = Vec::new();
    for (id, mut frames) in by_id {
        frames.sort_by_key(|(t, _)| *t);
        let expression = frames
            .first()
            .map(|(_, f)| f.expression.parse().unwrap_or(ExpressionLabel::Neutral))
            .unwrap_or(ExpressionLabel::Neutral);
        out.push(GeneratedSequence {
            id,
            expression,
            sequence: ShapeSequence::new(frames.into_iter().map(|(_, f)| f).collect())?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Per-point error rows: `frame,point,error`.
pub fn report_csv(report: &TrackReport) -> String {
    let mut out = String::from("frame,point,error\n");
    for fe in &report.frame_errors {
        for (p, e) in fe.per_point.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", fe.frame_index, p, e));
        }
    }
    out
}
