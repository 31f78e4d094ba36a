//! The `folk` command line: dataset generation, teacher run, distillation,
//! inference, evaluation and benchmarking.

use crate::config::RunConfig;
use crate::dataio::{
    self, read_adapter, read_consensus, read_scene, scene_to_container, write_adapter,
    write_consensus, write_container, DataError,
};
use crate::pipeline::{
    distill_batch, ground_truth, par_map, run_student, run_teacher, scene_bank, teacher_accuracy,
    PipelineError,
};
use crate::synth::{generate_scene, generate_text_bank, SynthConfig};
use clap::{Args, Parser, Subcommand};
use folk_core::eval::{
    average_precision, matching_rate, mean_average_precision, per_class_ap,
    subset_average_precision, EvalOptions, EvalScene, Prediction, StageTimings, STAGE_NAMES,
};
use folk_core::label_guide::TextBank;
use folk_core::student::train;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const DATASET_FILE: &str = "dataset.json";
pub const DATASET_FORMAT: &str = "folk-dataset";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "folk", version, about = "Open-vocabulary 3D instance labeling by label-guided distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of scene containers.
    Synth(SynthArgs),
    /// Run the image-based teacher and write per-scene consensus containers.
    Teacher(TeacherArgs),
    /// Distill teacher consensus into a point-feature adapter.
    Distill(DistillArgs),
    /// Label proposals with a trained adapter.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Time the teacher and student paths per scene.
    Bench(BenchArgs),
}

/// Overrides for every run configuration key. Unset flags keep the value
/// from `--config`, or the default.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with run configuration keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Views kept after ranking by visible point count.
    #[arg(long)]
    pub k_pre: Option<usize>,
    /// Minimum rotation angle between selected views, degrees.
    #[arg(long)]
    pub theta_th_deg: Option<f64>,
    /// Only frames whose index is a multiple of this are considered.
    #[arg(long)]
    pub frame_stride: Option<usize>,
    /// Completion window radius, pixels.
    #[arg(long)]
    pub r: Option<usize>,
    /// Density kernel radius, pixels.
    #[arg(long)]
    pub k_s: Option<usize>,
    /// Density kernel Gaussian sigma; defaults to k_s / 3.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Density threshold for directional expansion.
    #[arg(long)]
    pub rho_th: Option<f64>,
    /// Expansion directions per pixel.
    #[arg(long = "S")]
    pub s: Option<usize>,
    /// Directional expansion rounds.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Contrastive loss weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cross-entropy loss weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adapter initialization and batch order seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Depth agreement for a projected point to count as visible, meters.
    #[arg(long)]
    pub depth_tolerance: Option<f64>,
    /// Proposal NMS IoU threshold.
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Comma-separated class indices left out of evaluation.
    #[arg(long, value_delimiter = ',')]
    pub ignore_classes: Option<Vec<usize>>,
}

impl ConfigArgs {
    /// Loads the config file, applies flag overrides and validates.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json_file(p).map_err(CliError::Validation)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $key:ident),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { c.$key = v; })*
            };
        }
        set!(
            k_pre => k_pre, theta_th_deg => theta_th_deg, frame_stride => frame_stride,
            r => r, k_s => k_s, rho_th => rho_th, s => s, iterations => iterations,
            tau => tau, alpha => alpha, beta => beta, lr => lr, steps => steps, seed => seed,
            depth_tolerance => depth_tolerance, nms_iou => nms_iou, ignore_classes => ignore_classes,
        );
        if self.sigma.is_some() {
            c.sigma = self.sigma;
        }
        c.validate().map_err(CliError::Validation)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Worker threads for per-scene work.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Half-open range of scene positions in the dataset, `START:END`.
    #[arg(long, value_name = "START:END")]
    pub scenes: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// JSON file with synthetic-data keys.
    #[arg(long, value_name = "FILE")]
    pub synth_config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "num-scenes")]
    pub num_scenes: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub instances_per_scene: Option<usize>,
    #[arg(long)]
    pub views_per_scene: Option<usize>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TeacherArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub consensus: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub adapter: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub adapter: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Parses arguments and runs the command. Usage errors exit with 1, like
/// every other validation failure.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Teacher(a) => cmd_teacher(&a),
        Command::Distill(a) => cmd_distill(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn runtime(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    fs::write(path, text).map_err(runtime(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(runtime(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(runtime(path))
}

/// Parses `START:END`, either side optional, into a range clamped to `len`.
pub fn parse_scene_range(spec: &str, len: usize) -> Result<std::ops::Range<usize>> {
    let bad = || CliError::Validation(format!("--scenes: expected START:END, got {spec:?}"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    let start = if a.is_empty() { 0 } else { a.parse().map_err(|_| bad())? };
    let end = if b.is_empty() { len } else { b.parse().map_err(|_| bad())? };
    if start > end || end > len {
        return Err(CliError::Validation(format!(
            "--scenes {spec}: range out of bounds for {len} scenes"
        )));
    }
    Ok(start..end)
}

/// Scene ids of a dataset in order: from `dataset.json` when present,
/// otherwise every subdirectory holding a manifest, sorted by name.
pub fn dataset_scene_ids(dir: &Path) -> Result<Vec<String>> {
    let index = dir.join(DATASET_FILE);
    if index.exists() {
        let v: Value = read_json(&index)?;
        return v
            .get("scenes")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(|s| s.as_str().map(String::from)).collect::<Option<Vec<_>>>())
            .ok_or_else(|| CliError::Validation(format!("{}: missing scenes list", index.display())));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(runtime(dir))? {
        let entry = entry.map_err(runtime(dir))?;
        if entry.path().join(dataio::MANIFEST_FILE).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::Validation(format!("{}: no scene containers", dir.display())));
    }
    Ok(ids)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(CliError::Validation(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn selected_scenes(dataset: &Path, run: &RunArgs) -> Result<Vec<String>> {
    require(dataset, "dataset")?;
    let ids = dataset_scene_ids(dataset)?;
    let range = match &run.scenes {
        Some(spec) => parse_scene_range(spec, ids.len())?,
        None => 0..ids.len(),
    };
    Ok(ids[range].to_vec())
}

fn check_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(CliError::Validation("--jobs must be >= 1".into()));
    }
    Ok(())
}

fn timings_json(t: &StageTimings) -> Value {
    let a = t.as_array();
    json!({
        STAGE_NAMES[0]: a[0],
        STAGE_NAMES[1]: a[1],
        STAGE_NAMES[2]: a[2],
        "total": t.total(),
    })
}

fn resolve_synth(a: &SynthArgs) -> Result<SynthConfig> {
    let mut c = match &a.synth_config {
        Some(p) => read_json::<SynthConfig>(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.num_scenes {
        c.scenes = v;
    }
    if let Some(v) = a.num_classes {
        c.num_classes = v;
    }
    if let Some(v) = a.embed_dim {
        c.embed_dim = v;
    }
    if let Some(v) = a.instances_per_scene {
        c.instances_per_scene = v;
    }
    if let Some(v) = a.views_per_scene {
        c.views_per_scene = v;
    }
    if let Some(v) = a.feature_noise {
        c.feature_noise = v;
    }
    c.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(c)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    check_jobs(a.jobs)?;
    let config = resolve_synth(a)?;
    let echo = serde_json::to_value(&config).expect("config serializes");
    let bank = generate_text_bank(&config).map_err(|e| CliError::Validation(e.to_string()))?;
    create_dir(&a.out)?;
    let indices: Vec<usize> = (0..config.scenes).collect();
    let ids = par_map(a.jobs, &indices, |&i| -> Result<String> {
        let scene = generate_scene(&config, &bank, i).map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut c = scene_to_container(&scene)?;
        c.meta["synth_config"] = echo.clone();
        write_container(&c, &a.out.join(&scene.meta.scene_id))?;
        Ok(scene.meta.scene_id)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    write_json(
        &a.out.join(DATASET_FILE),
        &json!({
            "format": DATASET_FORMAT,
            "version": 1,
            "scenes": ids,
            "classes": bank.names(),
            "synth_config": echo,
        }),
    )?;
    println!("wrote {} scenes to {}", ids.len(), a.out.display());
    Ok(())
}

struct TeacherSummary {
    scene_id: String,
    kept: usize,
    labeled: usize,
    unembeddable: Vec<usize>,
    correct: usize,
    with_gt: usize,
    timings: StageTimings,
}

pub fn cmd_teacher(a: &TeacherArgs) -> Result<()> {
    let config = a.config.resolve()?;
    check_jobs(a.run.jobs)?;
    let ids = selected_scenes(&a.dataset, &a.run)?;
    let echo = config.to_json();
    create_dir(&a.out)?;
    let summaries = par_map(a.run.jobs, &ids, |id| -> Result<TeacherSummary> {
        let scene = read_scene(&a.dataset.join(id))?;
        let t = run_teacher(&scene, &config)?;
        write_consensus(&t.consensus, &echo, &a.out.join(id))?;
        let (correct, with_gt) = teacher_accuracy(&scene, &t);
        Ok(TeacherSummary {
            scene_id: id.clone(),
            kept: t.consensus.instances.len(),
            labeled: t.consensus.labeled().count(),
            unembeddable: t.unembeddable().collect(),
            correct,
            with_gt,
            timings: t.timings,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut report = Vec::new();
    let mut timings = Vec::new();
    let (mut correct, mut with_gt) = (0, 0);
    for s in &summaries {
        for p in &s.unembeddable {
            eprintln!("warning: {}: proposal {p} has no usable view; excluded from distillation", s.scene_id);
        }
        correct += s.correct;
        with_gt += s.with_gt;
        report.push(json!({
            "scene_id": s.scene_id,
            "kept_proposals": s.kept,
            "labeled": s.labeled,
            "unembeddable": s.unembeddable,
            "correct": s.correct,
            "with_ground_truth": s.with_gt,
        }));
        timings.push(json!({ "scene_id": s.scene_id, "stages": timings_json(&s.timings) }));
    }
    let accuracy = (with_gt > 0).then(|| correct as f64 / with_gt as f64);
    write_json(
        &a.out.join("teacher_report.json"),
        &json!({ "config": echo, "scenes": report, "correct": correct, "with_ground_truth": with_gt, "accuracy": accuracy }),
    )?;
    write_json(
        &a.out.join("timings.json"),
        &json!({ "stage_names": STAGE_NAMES, "scenes": timings }),
    )?;
    match accuracy {
        Some(acc) => println!("teacher: {} scenes, pseudo-label accuracy {:.4} ({correct}/{with_gt})", ids.len(), acc),
        None => println!("teacher: {} scenes", ids.len()),
    }
    Ok(())
}

fn same_bank(a: &TextBank, b: &TextBank) -> bool {
    a.names() == b.names() && a.embeddings() == b.embeddings()
}

pub fn cmd_distill(a: &DistillArgs) -> Result<()> {
    let config = a.config.resolve()?;
    check_jobs(a.run.jobs)?;
    let ids = selected_scenes(&a.dataset, &a.run)?;
    require(&a.consensus, "consensus directory")?;
    let loaded = par_map(a.run.jobs, &ids, |id| -> Result<_> {
        let scene = read_scene(&a.dataset.join(id))?;
        let consensus = read_consensus(&a.consensus.join(id))?;
        if consensus.scene_id != scene.meta.scene_id {
            return Err(CliError::Validation(format!(
                "{id}: consensus belongs to scene {}",
                consensus.scene_id
            )));
        }
        let bank = scene_bank(&scene)?.clone();
        let batch = distill_batch(&scene, &consensus)?;
        Ok((bank, scene.meta.point_feature_dim, batch))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let (bank, input_dim) = match loaded.first() {
        Some((b, d, _)) => (b.clone(), *d),
        None => return Err(CliError::Validation("no scenes selected".into())),
    };
    let mut batches = Vec::new();
    for (id, (b, d, batch)) in ids.iter().zip(loaded) {
        if !same_bank(&b, &bank) || d != input_dim {
            return Err(CliError::Validation(format!("{id}: text bank or feature dim differs from {}", ids[0])));
        }
        batches.extend(batch);
    }
    if batches.is_empty() {
        return Err(CliError::Validation("no scene has two or more labeled instances".into()));
    }
    let outcome = train(&batches, &bank, input_dim, &config.distill_config())
        .map_err(|e| CliError::Runtime(format!("training: {e}")))?;
    let echo = config.to_json();
    create_dir(&a.out)?;
    write_adapter(&outcome.params, &echo, &a.out)?;
    let mut log = serde_json::to_string(&json!({ "config": echo, "batches": batches.len() })).expect("json");
    log.push('\n');
    for e in &outcome.log {
        log.push_str(
            &serde_json::to_string(&json!({
                "step": e.step, "batch": e.batch, "contrastive": e.contrastive, "ce": e.ce, "total": e.total,
            }))
            .expect("json"),
        );
        log.push('\n');
    }
    let log_path = a.out.join("train_log.jsonl");
    fs::write(&log_path, log).map_err(runtime(&log_path))?;
    let last = outcome.log.last().map_or(f64::NAN, |e| e.total);
    println!("distill: {} batches, {} steps, final loss {last:.6}", batches.len(), config.steps);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub proposal: usize,
    pub label: usize,
    pub class_name: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenePredictions {
    pub scene_id: String,
    pub image_accesses: u64,
    pub timings: Value,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub config: Value,
    pub stage_names: Vec<String>,
    pub scenes: Vec<ScenePredictions>,
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let config = a.config.resolve()?;
    check_jobs(a.run.jobs)?;
    let ids = selected_scenes(&a.dataset, &a.run)?;
    require(&a.adapter, "adapter")?;
    let params = read_adapter(&a.adapter)?;
    let scenes = par_map(a.run.jobs, &ids, |id| -> Result<ScenePredictions> {
        let scene = read_scene(&a.dataset.join(id))?;
        let bank = scene_bank(&scene)?;
        let s = run_student(&scene, &params, &config)?;
        Ok(ScenePredictions {
            scene_id: s.scene_id,
            image_accesses: s.image_accesses,
            timings: timings_json(&s.timings),
            predictions: s
                .predictions
                .iter()
                .map(|(i, inf)| PredictionRecord {
                    proposal: *i,
                    label: inf.label,
                    class_name: bank.names()[inf.label].clone(),
                    confidence: inf.confidence,
                })
                .collect(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n: usize = scenes.iter().map(|s| s.predictions.len()).sum();
    let file = PredictionsFile {
        config: config.to_json(),
        stage_names: STAGE_NAMES.iter().map(|s| s.to_string()).collect(),
        scenes,
    };
    write_json(&a.out, &serde_json::to_value(&file).expect("serializes"))?;
    println!("infer: {n} predictions over {} scenes", ids.len());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let config = a.config.resolve()?;
    require(&a.predictions, "predictions file")?;
    require(&a.dataset, "dataset")?;
    let file: PredictionsFile = read_json(&a.predictions)?;
    let mut preds = Vec::with_capacity(file.scenes.len());
    let mut gts = Vec::with_capacity(file.scenes.len());
    let (mut correct, mut with_gt) = (0usize, 0usize);
    let mut class_names: Option<Vec<String>> = None;
    for sp in &file.scenes {
        let scene = read_scene(&a.dataset.join(&sp.scene_id))?;
        let mut p = Vec::with_capacity(sp.predictions.len());
        for r in &sp.predictions {
            let prop = scene.proposals.get(r.proposal).ok_or_else(|| {
                CliError::Validation(format!("{}: prediction for missing proposal {}", sp.scene_id, r.proposal))
            })?;
            if let Some(gt) = prop.gt_label() {
                with_gt += 1;
                correct += usize::from(gt == r.label);
            }
            p.push(Prediction::new(prop.point_indices.clone(), r.label, r.confidence));
        }
        if class_names.is_none() {
            class_names = scene.text_bank.as_ref().map(|b| b.names().to_vec());
        }
        preds.push(p);
        gts.push(ground_truth(&scene));
    }
    let eval: Vec<EvalScene<'_>> = preds
        .iter()
        .zip(&gts)
        .map(|(p, g)| EvalScene { preds: p, gts: g })
        .collect();
    let opts = EvalOptions {
        ignore_classes: config.ignore_classes.clone(),
    };
    let names = class_names.unwrap_or_default();
    let per_class: Vec<Value> = per_class_ap(&eval, 0.5, &opts)
        .into_iter()
        .map(|(c, ap)| json!({ "class": c, "name": names.get(c), "ap50": ap }))
        .collect();
    let subsets: serde_json::Map<String, Value> = config
        .subsets
        .iter()
        .map(|(name, classes)| {
            let ap = |th| subset_average_precision(&eval, th, classes, &opts);
            (name.clone(), json!({ "ap50": ap(0.5), "ap25": ap(0.25) }))
        })
        .collect();
    let rate = matching_rate(&eval);
    let map = mean_average_precision(&eval, &opts);
    let report = json!({
        "config": config.to_json(),
        "scenes": file.scenes.len(),
        "AP": map,
        "AP50": average_precision(&eval, 0.5, &opts),
        "AP25": average_precision(&eval, 0.25, &opts),
        "per_class_ap50": per_class,
        "subsets": subsets,
        "matching_rate": { "proposals_per_scene": rate.proposals_per_scene, "rate_percent": rate.rate_percent },
        "label_accuracy": (with_gt > 0).then(|| correct as f64 / with_gt as f64),
    });
    write_json(&a.out, &report)?;
    println!("eval: AP {map:.4} over {} scenes", file.scenes.len());
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let config = a.config.resolve()?;
    check_jobs(a.run.jobs)?;
    let ids = selected_scenes(&a.dataset, &a.run)?;
    require(&a.adapter, "adapter")?;
    let params = read_adapter(&a.adapter)?;
    let rows = par_map(a.run.jobs, &ids, |id| -> Result<Value> {
        let scene = read_scene(&a.dataset.join(id))?;
        let t = run_teacher(&scene, &config)?;
        let s = run_student(&scene, &params, &config)?;
        let speedup = t.timings.total() / s.timings.total().max(f64::MIN_POSITIVE);
        Ok(json!({
            "scene_id": id,
            "teacher": timings_json(&t.timings),
            "student": timings_json(&s.timings),
            "student_image_accesses": s.image_accesses,
            "speedup": speedup,
        }))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mean = |who: &str, key: &str| {
        rows.iter().map(|r| r[who][key].as_f64().unwrap_or(0.0)).sum::<f64>() / rows.len().max(1) as f64
    };
    let mut summary = serde_json::Map::new();
    for who in ["teacher", "student"] {
        let mut m = serde_json::Map::new();
        for key in STAGE_NAMES.iter().copied().chain(["total"]) {
            m.insert(key.to_string(), json!(mean(who, key)));
        }
        summary.insert(who.to_string(), Value::Object(m));
    }
    let speedup = mean("teacher", "total") / mean("student", "total").max(f64::MIN_POSITIVE);
    write_json(
        &a.out,
        &json!({
            "config": config.to_json(),
            "stage_names": STAGE_NAMES,
            "scenes": rows,
            "mean_seconds": summary,
            "mean_speedup": speedup,
        }),
    )?;
    println!("bench: {} scenes, mean speedup {speedup:.1}x", ids.len());
    Ok(())
}
