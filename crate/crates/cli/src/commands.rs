//! Command implementations and config resolution.
//!
//! Every command resolves its settings from (flags, config file, defaults)
//! in that precedence, echoes the resolved configuration and the seed into
//! its summary, and derives all randomness from one master seed split per
//! stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use faceshape::frontal::{train_frontal, SamplerConfig};
use faceshape::fusion::{estimate_sigma_l, FusionMethod, KdeConfig, MeasurementModel};
use faceshape::io::{self, LoadedModel};
use faceshape::pose::train_pose;
use faceshape::rng::stage_seed;
use faceshape::shape::{ShapeVector, LANDMARK_COUNT};
use faceshape::synth::{
    corrupt, make_dataset, CorruptionMode, CorruptionSpec, DatasetConfig, ExpressionLabel,
    LabeledShape, SequenceSpec,
};
use faceshape::tracking::{interocular_error, track_sequence, ShapePrior, TrackReport};
use faceshape::{RngState, TrainConfig};

use crate::{
    Cli, CliError, Command, CorrectArgs, CorruptFlag, EvalArgs, FusionFlag, GenDataArgs,
    SampleArgs, TrackArgs, TrainFrontalArgs, TrainPoseArgs,
};

const DEFAULT_SEED: u64 = 42;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_config_file(cli.config.as_deref())?;
    match cli.command {
        Some(Command::GenData(a)) => gen_data(Some(&a), &file),
        Some(Command::TrainFrontal(a)) => train_frontal_cmd(Some(&a), &file),
        Some(Command::TrainPose(a)) => train_pose_cmd(Some(&a), &file),
        Some(Command::Sample(a)) => sample_cmd(Some(&a), &file),
        Some(Command::Correct(a)) => correct_cmd(Some(&a), &file),
        Some(Command::Track(a)) => track_cmd(Some(&a), &file),
        Some(Command::Eval(a)) => eval_cmd(Some(&a), &file),
        None => {
            let command: Option<String> = get(&file, "command")?;
            match command.as_deref() {
                Some("gen-data") => gen_data(None, &file),
                Some("train-frontal") => train_frontal_cmd(None, &file),
                Some("train-pose") => train_pose_cmd(None, &file),
                Some("sample") => sample_cmd(None, &file),
                Some("correct") => correct_cmd(None, &file),
                Some("track") => track_cmd(None, &file),
                Some("eval") => eval_cmd(None, &file),
                Some(other) => Err(CliError::config(format!("unknown command `{other}`"))),
                None => Err(CliError::config(
                    "no command given on the command line or in the config file",
                )),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

fn load_config_file(path: Option<&Path>) -> Result<Value, CliError> {
    match path {
        None => Ok(Value::Object(Default::default())),
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Missing(p.to_path_buf()));
            }
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read config file: {e}")))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("config file is not valid JSON: {e}")))?;
            if !value.is_object() {
                return Err(CliError::config("config file must hold a JSON object"));
            }
            Ok(value)
        }
    }
}

fn get<T: DeserializeOwned>(file: &Value, key: &str) -> Result<Option<T>, CliError> {
    match file.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| CliError::config(format!("config field `{key}`: {e}"))),
    }
}

fn pick<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

fn required<T>(cli: Option<T>, file: Option<T>, key: &str) -> Result<T, CliError> {
    cli.or(file)
        .ok_or_else(|| CliError::config(format!("missing required setting `{key}`")))
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| {
        CliError::config(format!("cannot create directory {}: {e}", path.display()))
    })
}

fn positive(value: f64, key: &str) -> Result<f64, CliError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(CliError::config(format!("`{key}` must be positive, got {value}")))
    }
}

fn nonnegative(value: f64, key: &str) -> Result<f64, CliError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(CliError::config(format!(
            "`{key}` must be nonnegative, got {value}"
        )))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::data(format!("serialization failed: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| CliError::data(format!("write failed: {e}")))?;
    Ok(())
}

/// Common summary envelope; `timings` is the only nondeterministic field.
#[derive(Serialize)]
struct Summary<C: Serialize, R: Serialize> {
    format_version: u32,
    command: &'static str,
    seed: u64,
    config: C,
    results: R,
    timings: Timings,
}

#[derive(Serialize)]
struct Timings {
    total_seconds: f64,
}

fn summary<C: Serialize, R: Serialize>(
    command: &'static str,
    seed: u64,
    config: C,
    results: R,
    started: Instant,
) -> Summary<C, R> {
    Summary {
        format_version: io::FORMAT_VERSION,
        command,
        seed,
        config,
        results,
        timings: Timings {
            total_seconds: started.elapsed().as_secs_f64(),
        },
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GenDataConfig {
    out_dir: PathBuf,
    count: usize,
    pose_deg: Vec<f64>,
    sequences: usize,
    frames: usize,
    noise_std: f64,
    outlier_prob: f64,
    outlier_magnitude: f64,
    sequence_pose_deg: f64,
    identity_noise: f64,
}

fn gen_data(args: Option<&GenDataArgs>, file: &Value) -> Result<(), CliError> {
    let started = Instant::now();
    let a = args.cloned_or_default();
    let seed = pick(a.seed, get(file, "seed")?, DEFAULT_SEED);
    let cfg = GenDataConfig {
        out_dir: required(a.out_dir.clone(), get(file, "out_dir")?, "out_dir")?,
        count: pick(a.count, get(file, "count")?, 1000),
        pose_deg: pick(a.pose_deg.clone(), get(file, "pose_deg")?, vec![]),
        sequences: pick(a.sequences, get(file, "sequences")?, 0),
        frames: pick(a.frames, get(file, "frames")?, 20),
        noise_std: nonnegative(pick(a.noise_std, get(file, "noise_std")?, 0.05), "noise_std")?,
        outlier_prob: nonnegative(
            pick(a.outlier_prob, get(file, "outlier_prob")?, 0.1),
            "outlier_prob",
        )?,
        outlier_magnitude: nonnegative(
            pick(a.outlier_magnitude, get(file, "outlier_magnitude")?, 0.4),
            "outlier_magnitude",
        )?,
        sequence_pose_deg: pick(a.sequence_pose_deg, get(file, "sequence_pose_deg")?, 0.0),
        identity_noise: nonnegative(
            pick(a.identity_noise, get(file, "identity_noise")?, 0.02),
            "identity_noise",
        )?,
    };
    if cfg.count == 0 {
        return Err(CliError::config("`count` must be at least 1"));
    }
    ensure_dir(&cfg.out_dir)?;

    let ds_cfg = DatasetConfig {
        shape_count: cfg.count,
        expressions: ExpressionLabel::ALL.to_vec(),
        pose_angles_deg: cfg.pose_deg.clone(),
        identity_noise_std: cfg.identity_noise,
        sequences: (cfg.sequences > 0).then_some(SequenceSpec {
            count: cfg.sequences,
            frames: cfg.frames,
            measurement_noise_std: cfg.noise_std,
            outlier_frame_prob: cfg.outlier_prob,
            outlier_magnitude: cfg.outlier_magnitude,
            pose_deg: cfg.sequence_pose_deg,
        }),
    };
    let mut rng = RngState::for_stage(seed, "gen-data");
    let ds = make_dataset(&ds_cfg, &mut rng)?;

    io::write_shape_corpus(&ds.shapes, &cfg.out_dir.join("shapes.jsonl"))?;
    if !ds.pairs.is_empty() {
        io::write_pair_corpus(&ds.pairs, &cfg.out_dir.join("pairs.jsonl"))?;
    }
    if !ds.sequences.is_empty() {
        io::write_sequences(&ds.sequences, &cfg.out_dir.join("sequences.jsonl"))?;
    }

    #[derive(Serialize)]
    struct Counts {
        shapes: usize,
        pairs: usize,
        sequences: usize,
    }
    let out_dir = cfg.out_dir.clone();
    let s = summary(
        "gen-data",
        seed,
        cfg,
        Counts {
            shapes: ds.shapes.len(),
            pairs: ds.pairs.len(),
            sequences: ds.sequences.len(),
        },
        started,
    );
    write_json(&out_dir.join("manifest.json"), &s)?;
    println!(
        "generated {} shapes, {} pairs, {} sequences in {}",
        ds.shapes.len(),
        ds.pairs.len(),
        ds.sequences.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Training commands
// ---------------------------------------------------------------------------

fn train_config(
    epochs: usize,
    learning_rate: f64,
    cd_steps: usize,
    batch_size: usize,
    momentum: f64,
    weight_decay: f64,
    rng_seed: u64,
) -> Result<TrainConfig, CliError> {
    let cfg = TrainConfig {
        cd_steps,
        learning_rate,
        epochs,
        batch_size,
        momentum,
        weight_decay,
        rng_seed,
    };
    cfg.validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainFrontalConfig {
    shapes: PathBuf,
    out: PathBuf,
    hidden1: usize,
    hidden2: usize,
    epochs: usize,
    learning_rate: f64,
    cd_steps: usize,
    batch_size: usize,
    momentum: f64,
    weight_decay: f64,
}

fn train_frontal_cmd(args: Option<&TrainFrontalArgs>, file: &Value) -> Result<(), CliError> {
    let a = args.cloned_or_default();
    let seed = pick(a.seed, get(file, "seed")?, DEFAULT_SEED);
    let cfg = TrainFrontalConfig {
        shapes: required(a.shapes.clone(), get(file, "shapes")?, "shapes")?,
        out: required(a.out.clone(), get(file, "out")?, "out")?,
        hidden1: pick(a.hidden1, get(file, "hidden1")?, 50),
        hidden2: pick(a.hidden2, get(file, "hidden2")?, 25),
        epochs: pick(a.epochs, get(file, "epochs")?, 500),
        learning_rate: pick(a.learning_rate, get(file, "learning_rate")?, 0.01),
        cd_steps: pick(a.cd_steps, get(file, "cd_steps")?, 1),
        batch_size: pick(a.batch_size, get(file, "batch_size")?, 32),
        momentum: pick(a.momentum, get(file, "momentum")?, 0.5),
        weight_decay: pick(a.weight_decay, get(file, "weight_decay")?, 1e-4),
    };
    require_file(&cfg.shapes)?;
    let train_cfg = train_config(
        cfg.epochs,
        cfg.learning_rate,
        cfg.cd_steps,
        cfg.batch_size,
        cfg.momentum,
        cfg.weight_decay,
        stage_seed(seed, "train-frontal"),
    )?;
    let shapes: Vec<ShapeVector> = io::read_shape_corpus(&cfg.shapes)?
        .into_iter()
        .map(|s| s.shape)
        .collect();
    let model = train_frontal(&shapes, (cfg.hidden1, cfg.hidden2), &train_cfg)?;
    io::save_frontal_model(&model, &cfg.out)?;
    println!("trained frontal model -> {}", cfg.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainPoseConfig {
    pairs: PathBuf,
    frontal_model: PathBuf,
    out: PathBuf,
    hidden_k: usize,
    factors: usize,
    epochs: usize,
    learning_rate: f64,
    cd_steps: usize,
    batch_size: usize,
    momentum: f64,
    weight_decay: f64,
}

fn train_pose_cmd(args: Option<&TrainPoseArgs>, file: &Value) -> Result<(), CliError> {
    let a = args.cloned_or_default();
    let seed = pick(a.seed, get(file, "seed")?, DEFAULT_SEED);
    let cfg = TrainPoseConfig {
        pairs: required(a.pairs.clone(), get(file, "pairs")?, "pairs")?,
        frontal_model: required(
            a.frontal_model.clone(),
            get(file, "frontal_model")?,
            "frontal_model",
        )?,
        out: required(a.out.clone(), get(file, "out")?, "out")?,
        hidden_k: pick(a.hidden_k, get(file, "hidden_k")?, 20),
        factors: pick(a.factors, get(file, "factors")?, 32),
        epochs: pick(a.epochs, get(file, "epochs")?, 300),
        learning_rate: pick(a.learning_rate, get(file, "learning_rate")?, 0.005),
        cd_steps: pick(a.cd_steps, get(file, "cd_steps")?, 1),
        batch_size: pick(a.batch_size, get(file, "batch_size")?, 32),
        momentum: pick(a.momentum, get(file, "momentum")?, 0.5),
        weight_decay: pick(a.weight_decay, get(file, "weight_decay")?, 1e-4),
    };
    require_file(&cfg.pairs)?;
    require_file(&cfg.frontal_model)?;
    let train_cfg = train_config(
        cfg.epochs,
        cfg.learning_rate,
        cfg.cd_steps,
        cfg.batch_size,
        cfg.momentum,
        cfg.weight_decay,
        stage_seed(seed, "train-pose"),
    )?;
    let frontal = match io::load_model(&cfg.frontal_model)? {
        LoadedModel::Frontal(m) => m,
        LoadedModel::Pose(_) => {
            return Err(CliError::data(
                "`frontal_model` holds a pose model; a frontal model is required",
            ))
        }
    };
    let pairs: Vec<(ShapeVector, ShapeVector)> = io::read_pair_corpus(&cfg.pairs)?
        .into_iter()
        .map(|p| (p.frontal, p.posed))
        .collect();
    let model = train_pose(&pairs, frontal, (cfg.hidden_k, cfg.factors), &train_cfg)?;
    io::save_pose_model(&model, &cfg.out)?;
    println!("trained pose model -> {}", cfg.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SampleConfig {
    model: PathBuf,
    init: PathBuf,
    index: usize,
    out: PathBuf,
    samples: usize,
    sweeps: usize,
    chain: bool,
}

fn sample_cmd(args: Option<&SampleArgs>, file: &Value) -> Result<(), CliError> {
    let a = args.cloned_or_default();
    let seed = pick(a.seed, get(file, "seed")?, DEFAULT_SEED);
    let cfg = SampleConfig {
        model: required(a.model.clone(), get(file, "model")?, "model")?,
        init: required(a.init.clone(), get(file, "init")?, "init")?,
        index: pick(a.index, get(file, "index")?, 0),
        out: required(a.out.clone(), get(file, "out")?, "out")?,
        samples: pick(a.samples, get(file, "samples")?, 100),
        sweeps: pick(a.sweeps, get(file, "sweeps")?, 2),
        chain: a.chain || get(file, "chain")?.unwrap_or(false),
    };
    require_file(&cfg.model)?;
    require_file(&cfg.init)?;
    let records = io::read_shape_corpus(&cfg.init)?;
    let record = records
        .get(cfg.index)
        .ok_or_else(|| CliError::config(format!("`index` {} is out of range", cfg.index)))?;
    let sampler = SamplerConfig {
        sweeps_per_sample: cfg.sweeps,
        sample_count: cfg.samples,
        restart_from_measurement: !cfg.chain,
    };
    let mut rng = RngState::for_stage(seed, "sample");
    let samples = match io::load_model(&cfg.model)? {
        LoadedModel::Frontal(m) => m.sample_local_prior(&record.shape, &sampler, &mut rng)?,
        LoadedModel::Pose(m) => m.sample_prior(&record.shape, &sampler, &mut rng)?,
    };
    let labeled: Vec<LabeledShape> = samples
        .into_iter()
        .enumerate()
        .map(|(i, shape)| LabeledShape {
            id: i as u64,
            expression: record.expression,
            pose_deg: record.pose_deg,
            shape,
        })
        .collect();
    io::write_shape_corpus(&labeled, &cfg.out)?;
    println!("wrote {} samples -> {}", labeled.len(), cfg.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// correct
// ---------------------------------------------------------------------------

fn fusion_method(flag: FusionFlag) -> FusionMethod {
    match flag {
        FusionFlag::Gaussian => FusionMethod::Gaussian,
        FusionFlag::Kde => FusionMethod::Kde(KdeConfig::default()),
    }
}

fn corruption_spec(flag: CorruptFlag, magnitude: f64, rng: &mut RngState) -> CorruptionSpec {
    match flag {
        CorruptFlag::Outlier => CorruptionSpec {
            mode: CorruptionMode::OutlierPoint,
            targets: vec![rng.index(LANDMARK_COUNT)],
            magnitude,
        },
        CorruptFlag::Half => CorruptionSpec {
            mode: CorruptionMode::HalfFace,
            targets: vec![],
            magnitude,
        },
        CorruptFlag::Noise => CorruptionSpec {
            mode: CorruptionMode::AdditiveNoise,
            targets: vec![],
            magnitude,
        },
    }
}

fn corrupted_points(spec: &CorruptionSpec) -> Vec<usize> {
    match spec.mode {
        CorruptionMode::OutlierPoint => spec.targets.clone(),
        CorruptionMode::HalfFace => faceshape::shape::landmarks::LEFT_HALF.to_vec(),
        CorruptionMode::AdditiveNoise => (0..LANDMARK_COUNT).collect(),
    }
}

#[derive(Serialize)]
struct CorrectConfig {
    model: PathBuf,
    shapes: PathBuf,
    corrupt: CorruptFlag,
    magnitude: f64,
    fusion: FusionFlag,
    samples: usize,
    sweeps: usize,
    ridge: f64,
    estimation_count: usize,
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct CorrectResults {
    trials: usize,
    corrupted_point_error_before: f64,
    corrupted_point_error_after: f64,
    corrupted_point_reduction_pct: f64,
    overall_error_before: f64,
    overall_error_after: f64,
}

fn correct_cmd(args: Option<&CorrectArgs>, file: &Value) -> Result<(), CliError> {
    let started = Instant::now();
    let a = args.cloned_or_default();
    let seed = pick(a.seed, get(file, "seed")?, DEFAULT_SEED);
    let cfg = CorrectConfig {
        model: required(a.model.clone(), get(file, "model")?, "model")?,
        shapes: required(a.shapes.clone(), get(file, "shapes")?, "shapes")?,
        corrupt: required(a.corrupt, get(file, "corrupt")?, "corrupt")?,
        magnitude: positive(pick(a.magnitude, get(file, "magnitude")?, 0.5), "magnitude")?,
        fusion: pick(a.fusion, get(file, "fusion")?, FusionFlag::Gaussian),
        samples: pick(a.samples, get(file, "samples")?, 100),
        sweeps: pick(a.sweeps, get(file, "sweeps")?, 2),
        ridge: nonnegative(pick(a.ridge, get(file, "ridge")?, 1e-6), "ridge")?,
        estimation_count: pick(a.estimation_count, get(file, "estimation_count")?, 400),
        out_dir: required(a.out_dir.clone(), get(file, "out_dir")?, "out_dir")?,
    };
    require_file(&cfg.model)?;
    require_file(&cfg.shapes)?;
    ensure_dir(&cfg.out_dir)?;

    let model = io::load_model(&cfg.model)?;
    let records = io::read_shape_corpus(&cfg.shapes)?;
    if records.is_empty() {
        return Err(CliError::data("shape corpus is empty"));
    }

    // Measurement covariance from corruption-matched pairs over the corpus.
    let mut est_rng = RngState::for_stage(seed, "correct-sigma");
    let est_pairs: Vec<(ShapeVector, ShapeVector)> = (0..cfg.estimation_count.max(2))
        .map(|i| {
            let truth = &records[i % records.len()].shape;
            let spec = corruption_spec(cfg.corrupt, cfg.magnitude, &mut est_rng);
            let measured = corrupt(truth, &spec, &mut est_rng)?;
            Ok((truth.clone(), measured))
        })
        .collect::<Result<_, faceshape::Error>>()?;
    let mm = estimate_sigma_l(&est_pairs, cfg.ridge)?;

    let sampler = SamplerConfig {
        sweeps_per_sample: cfg.sweeps,
        sample_count: cfg.samples,
        restart_from_measurement: true,
    };
    let method = fusion_method(cfg.fusion);
    let mut rng = RngState::for_stage(seed, "correct");

    let mut corrected_out = Vec::with_capacity(records.len());
    let mut measured_out = Vec::with_capacity(records.len());
    let mut csv = String::from("frame,point,error\n");
    let mut before_pt = 0.0;
    let mut after_pt = 0.0;
    let mut pt_count = 0usize;
    let mut before_all = 0.0;
    let mut after_all = 0.0;
    let mut all_count = 0usize;
    for (idx, record) in records.iter().enumerate() {
        let spec = corruption_spec(cfg.corrupt, cfg.magnitude, &mut rng);
        let targets = corrupted_points(&spec);
        let measured = corrupt(&record.shape, &spec, &mut rng)?;
        let corrected = match &model {
            LoadedModel::Frontal(m) => {
                m.correct_shape(&measured, &sampler, &mm, &method, &mut rng)?
            }
            LoadedModel::Pose(m) => m.correct_shape(&measured, &sampler, &mm, &method, &mut rng)?,
        };
        let err_before = interocular_error(&measured, &record.shape)?;
        let err_after = interocular_error(&corrected, &record.shape)?;
        for p in 0..LANDMARK_COUNT {
            csv.push_str(&format!("{idx},{p},{}\n", err_after[p]));
            before_all += err_before[p];
            after_all += err_after[p];
            all_count += 1;
        }
        for &p in &targets {
            before_pt += err_before[p];
            after_pt += err_after[p];
            pt_count += 1;
        }
        measured_out.push(LabeledShape {
            id: record.id,
            expression: record.expression,
            pose_deg: record.pose_deg,
            shape: measured,
        });
        corrected_out.push(LabeledShape {
            id: record.id,
            expression: record.expression,
            pose_deg: record.pose_deg,
            shape: corrected,
        });
    }

    io::write_shape_corpus(&measured_out, &cfg.out_dir.join("measurements.jsonl"))?;
    io::write_shape_corpus(&corrected_out, &cfg.out_dir.join("corrected.jsonl"))?;
    fs::write(cfg.out_dir.join("report.csv"), csv)
        .map_err(|e| CliError::data(format!("write failed: {e}")))?;

    let before_mean = before_pt / pt_count as f64;
    let after_mean = after_pt / pt_count as f64;
    let results = CorrectResults {
        trials: records.len(),
        corrupted_point_error_before: before_mean,
        corrupted_point_error_after: after_mean,
        corrupted_point_reduction_pct: (before_mean - after_mean) / before_mean * 100.0,
        overall_error_before: before_all / all_count as f64,
        overall_error_after: after_all / all_count as f64,
    };
    println!(
        "corrected {} shapes: corrupted-point error {:.4} -> {:.4} ({:.1}% reduction)",
        results.trials,
        results.corrupted_point_error_before,
        results.corrupted_point_error_after,
        results.corrupted_point_reduction_pct
    );
    let out_dir = cfg.out_dir.clone();
    let s = summary("correct", seed, cfg, results, started);
    write_json(&out_dir.join("summary.json"), &s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// track
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TrackConfig {
    model: PathBuf,
    sequences: PathBuf,
    fusion: FusionFlag,
    samples: usize,
    sweeps: usize,
    ridge: f64,
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct ComponentTable {
    eyebrow: f64,
    eye: f64,
    nose: f64,
    mouth: f64,
}

#[derive(Serialize)]
struct TrackResults {
    sequences: usize,
    component_means: ComponentTable,
    overall_mean: f64,
    baseline_overall_mean: f64,
    improvement_pct: f64,
    per_sequence_overall: Vec<f64>,
}

fn track_cmd(args: Option<&TrackArgs>, file: &Value) -> Result<(), CliError> {
    let started = Instant::now();
    let a = args.cloned_or_default();
    let seed = pick(a.seed, get(file, "seed")?, DEFAULT_SEED);
    let cfg = TrackConfig {
        model: required(a.model.clone(), get(file, "model")?, "model")?,
        sequences: required(a.sequences.clone(), get(file, "sequences")?, "sequences")?,
        fusion: pick(a.fusion, get(file, "fusion")?, FusionFlag::Gaussian),
        samples: pick(a.samples, get(file, "samples")?, 100),
        sweeps: pick(a.sweeps, get(file, "sweeps")?, 2),
        ridge: nonnegative(pick(a.ridge, get(file, "ridge")?, 1e-6), "ridge")?,
        out_dir: required(a.out_dir.clone(), get(file, "out_dir")?, "out_dir")?,
    };
    require_file(&cfg.model)?;
    require_file(&cfg.sequences)?;
    ensure_dir(&cfg.out_dir)?;

    let model = io::load_model(&cfg.model)?;
    let sequences = io::read_sequences(&cfg.sequences)?;
    if sequences.is_empty() {
        return Err(CliError::data("sequence corpus is empty"));
    }

    // Measurement covariance from the frames carrying ground truth.
    let pairs: Vec<(ShapeVector, ShapeVector)> = sequences
        .iter()
        .flat_map(|gs| gs.sequence.frames.iter())
        .filter_map(|f| {
            f.ground_truth
                .as_ref()
                .map(|t| (t.clone(), f.measurement.clone()))
        })
        .collect();
    if pairs.len() < 2 {
        return Err(CliError::data(
            "sequences carry fewer than two ground-truth frames; cannot estimate \
             the measurement covariance",
        ));
    }
    let mm: MeasurementModel = estimate_sigma_l(&pairs, cfg.ridge)?;

    let sampler = SamplerConfig {
        sweeps_per_sample: cfg.sweeps,
        sample_count: cfg.samples,
        restart_from_measurement: true,
    };
    let method = fusion_method(cfg.fusion);
    let mut rng = RngState::for_stage(seed, "track");

    let mut reports: Vec<TrackReport> = Vec::with_capacity(sequences.len());
    for gs in &sequences {
        let prior = match &model {
            LoadedModel::Frontal(m) => ShapePrior::Frontal(m),
            LoadedModel::Pose(m) => ShapePrior::Pose(m),
        };
        reports.push(track_sequence(
            &gs.sequence,
            prior,
            &mm,
            &method,
            &sampler,
            &mut rng,
        )?);
    }

    // Aggregate over all frames of all sequences; the report CSV uses a
    // cumulative frame index across sequences.
    let mut csv = String::from("frame,point,error\n");
    let mut curve = String::from("frame,error,baseline_error\n");
    let mut tracked_shapes = Vec::new();
    let mut frame_offset = 0usize;
    let mut err_sum = 0.0;
    let mut err_count = 0usize;
    let mut base_sum = 0.0;
    let mut base_count = 0usize;
    let mut comp = [0.0f64; 4];
    let mut comp_count = [0usize; 4];
    for (gs, report) in sequences.iter().zip(&reports) {
        for fe in &report.frame_errors {
            let global = frame_offset + fe.frame_index;
            let frame_mean: f64 = fe.per_point.iter().sum::<f64>() / fe.per_point.len() as f64;
            let baseline = interocular_error(
                &gs.sequence.frames[fe.frame_index].measurement,
                gs.sequence.frames[fe.frame_index]
                    .ground_truth
                    .as_ref()
                    .expect("frame errors imply ground truth"),
            )?;
            let baseline_mean: f64 = baseline.iter().sum::<f64>() / baseline.len() as f64;
            curve.push_str(&format!("{global},{frame_mean},{baseline_mean}\n"));
            for (p, e) in fe.per_point.iter().enumerate() {
                csv.push_str(&format!("{global},{p},{e}\n"));
                err_sum += e;
                err_count += 1;
                let c = match p {
                    0..=5 => 0,
                    6..=13 => 1,
                    14..=17 => 2,
                    _ => 3,
                };
                comp[c] += e;
                comp_count[c] += 1;
            }
            for e in baseline {
                base_sum += e;
                base_count += 1;
            }
        }
        for (t, shape) in report.tracked.iter().enumerate() {
            tracked_shapes.push(LabeledShape {
                id: (frame_offset + t) as u64,
                expression: gs.expression,
                pose_deg: gs.sequence.frames[t].pose_deg,
                shape: shape.clone(),
            });
        }
        frame_offset += gs.sequence.frames.len();
    }
    let overall = err_sum / err_count.max(1) as f64;
    let baseline = base_sum / base_count.max(1) as f64;
    let results = TrackResults {
        sequences: sequences.len(),
        component_means: ComponentTable {
            eyebrow: comp[0] / comp_count[0].max(1) as f64,
            eye: comp[1] / comp_count[1].max(1) as f64,
            nose: comp[2] / comp_count[2].max(1) as f64,
            mouth: comp[3] / comp_count[3].max(1) as f64,
        },
        overall_mean: overall,
        baseline_overall_mean: baseline,
        improvement_pct: if baseline > 0.0 {
            (baseline - overall) / baseline * 100.0
        } else {
            0.0
        },
        per_sequence_overall: reports.iter().map(|r| r.overall_mean).collect(),
    };

    fs::write(cfg.out_dir.join("report.csv"), csv)
        .map_err(|e| CliError::data(format!("write failed: {e}")))?;
    fs::write(cfg.out_dir.join("frame_curve.csv"), curve)
        .map_err(|e| CliError::data(format!("write failed: {e}")))?;
    io::write_shape_corpus(&tracked_shapes, &cfg.out_dir.join("tracked.jsonl"))?;
    println!(
        "tracked {} sequences: overall error {:.4} vs baseline {:.4} ({:.1}% improvement)",
        results.sequences, results.overall_mean, results.baseline_overall_mean,
        results.improvement_pct
    );
    let out_dir = cfg.out_dir.clone();
    let s = summary("track", seed, cfg, results, started);
    write_json(&out_dir.join("summary.json"), &s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalConfig {
    tracked: PathBuf,
    truth: PathBuf,
    out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalResults {
    shapes: usize,
    component_means: ComponentTable,
    overall_mean: f64,
}

fn eval_cmd(args: Option<&EvalArgs>, file: &Value) -> Result<(), CliError> {
    let started = Instant::now();
    let a = args.cloned_or_default();
    let seed = pick(a.seed, get(file, "seed")?, DEFAULT_SEED);
    let cfg = EvalConfig {
        tracked: required(a.tracked.clone(), get(file, "tracked")?, "tracked")?,
        truth: required(a.truth.clone(), get(file, "truth")?, "truth")?,
        out_dir: a.out_dir.clone().or(get(file, "out_dir")?),
    };
    require_file(&cfg.tracked)?;
    require_file(&cfg.truth)?;

    let tracked = io::read_shape_corpus(&cfg.tracked)?;
    let truth = io::read_shape_corpus(&cfg.truth)?;
    if tracked.len() != truth.len() {
        return Err(CliError::data(format!(
            "corpora differ in length: {} tracked vs {} truth",
            tracked.len(),
            truth.len()
        )));
    }
    if tracked.is_empty() {
        return Err(CliError::data("corpora are empty"));
    }

    let mut csv = String::from("frame,point,error\n");
    let mut total = 0.0;
    let mut count = 0usize;
    let mut comp = [0.0f64; 4];
    let mut comp_count = [0usize; 4];
    for (idx, (t, g)) in tracked.iter().zip(truth.iter()).enumerate() {
        let errors = interocular_error(&t.shape, &g.shape)?;
        for (p, e) in errors.iter().enumerate() {
            csv.push_str(&format!("{idx},{p},{e}\n"));
            total += e;
            count += 1;
            let c = match p {
                0..=5 => 0,
                6..=13 => 1,
                14..=17 => 2,
                _ => 3,
            };
            comp[c] += e;
            comp_count[c] += 1;
        }
    }
    let results = EvalResults {
        shapes: tracked.len(),
        component_means: ComponentTable {
            eyebrow: comp[0] / comp_count[0].max(1) as f64,
            eye: comp[1] / comp_count[1].max(1) as f64,
            nose: comp[2] / comp_count[2].max(1) as f64,
            mouth: comp[3] / comp_count[3].max(1) as f64,
        },
        overall_mean: total / count as f64,
    };
    println!("overall error: {:.6}", results.overall_mean);
    if let Some(dir) = &cfg.out_dir {
        ensure_dir(dir)?;
        fs::write(dir.join("report.csv"), csv)
            .map_err(|e| CliError::data(format!("write failed: {e}")))?;
        let dir = dir.clone();
        let s = summary("eval", seed, cfg, results, started);
        write_json(&dir.join("summary.json"), &s)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Small helper: clone-or-default for optional borrowed args.
// ---------------------------------------------------------------------------

trait ClonedOrDefault {
    type Owned;
    fn cloned_or_default(self) -> Self::Owned;
}

macro_rules! cloned_or_default {
    ($($t:ty),*) => {
        $(impl ClonedOrDefault for Option<&$t> {
            type Owned = $t;
            fn cloned_or_default(self) -> $t {
                self.map(|a| a.clone()).unwrap_or_default()
            }
        })*
    };
}

cloned_or_default!(
    GenDataArgs,
    TrainFrontalArgs,
    TrainPoseArgs,
    SampleArgs,
    CorrectArgs,
    TrackArgs,
    EvalArgs
);
