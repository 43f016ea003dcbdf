use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use partpose::eval::{greedy_grid_search, run_eval, write_artifacts, EvalConfig, FeatureCache, Grids, Method, Task};
use partpose::features::{extract_features, FeatureTable, GroupedDesignMatrix, HopConfig, Standardization};
use partpose::io::{
    detect_layer1, manifest_digest, read_manifest, read_parts, read_pgm, sha256_hex, write_manifest, EdgeDetectorConfig,
};
use partpose::solver::{AdmmConfig, BlockSolver, CategoryModel, FeatureSpec, LogisticForm, Model, PoseModel};
use partpose::synth::{hold_out_last, SynthConfig};
use partpose::types::{CategoryLabel, DatasetManifest, ImageRecord, PoseLabel};
use partpose::{Error, Result};

const DEFAULT_EVAL: &str = include_str!("../../../configs/default_eval.json");

#[derive(Parser)]
#[command(
    name = "partpose",
    version,
    about = "Object pose estimation and categorization from layered part detections"
)]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic turntable dataset.
    Synth(SynthArgs),
    /// Detect layer-1 parts in a directory of PGM images.
    Detect(DetectArgs),
    /// Extract and cache the feature table of a dataset.
    Features(FeaturesArgs),
    /// Train a pose or category model.
    Train(TrainArgs),
    /// Apply a model to a part file.
    Predict(PredictArgs),
    /// Run an evaluation and write tables and plots.
    Eval(EvalArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// JSON file with any of the settings below; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Built-in template names or template JSON files.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    templates: Option<Vec<String>>,
    /// Objects per category (one value, or one per template).
    #[arg(long = "objects", value_delimiter = ',')]
    #[serde(rename = "objects_per_category", skip_serializing_if = "Option::is_none")]
    objects: Option<Vec<usize>>,
    #[arg(long = "pose-step")]
    #[serde(rename = "pose_step_deg", skip_serializing_if = "Option::is_none")]
    pose_step: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
    #[arg(long = "elevation")]
    #[serde(rename = "elevation_deg", skip_serializing_if = "Option::is_none")]
    elevation: Option<f64>,
    #[arg(long = "layers")]
    #[serde(rename = "num_layers", skip_serializing_if = "Option::is_none")]
    layers: Option<u32>,
    #[arg(long = "jitter")]
    #[serde(rename = "jitter_px", skip_serializing_if = "Option::is_none")]
    jitter: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct DetectArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Directory laid out as `<category>/<object>__<pose>.pgm`.
    #[arg(long)]
    #[serde(skip)]
    images: PathBuf,
    /// Output directory for the part file and manifest.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long = "orientations")]
    #[serde(rename = "n_orientations", skip_serializing_if = "Option::is_none")]
    orientations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[arg(long = "nms-radius")]
    #[serde(rename = "nms_radius", skip_serializing_if = "Option::is_none")]
    nms_radius: Option<f64>,
}

#[derive(Args, Serialize)]
struct FeaturesArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    manifest: PathBuf,
    /// Output file; defaults to the feature cache.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Grid cells per image axis.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cells: Option<usize>,
    /// Orientation bin width in degrees.
    #[arg(long = "bin-size")]
    #[serde(rename = "bin_size", skip_serializing_if = "Option::is_none")]
    bin_size: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureSettings {
    cells: usize,
    bin_size: f64,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    manifest: PathBuf,
    /// Model file to write.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// `pose` or `category`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<String>,
    /// `proposed`, `layer-N` or `hog`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cells: Option<usize>,
    #[arg(long = "bin-size")]
    #[serde(rename = "bin_size", skip_serializing_if = "Option::is_none")]
    bin_size: Option<f64>,
    /// Regularization as a fraction of lambda_max.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[arg(long = "max-iters")]
    #[serde(rename = "max_iters", skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
    /// Sets both residual tolerances.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[arg(long = "inner-iters")]
    #[serde(rename = "inner_iters", skip_serializing_if = "Option::is_none")]
    inner_iters: Option<usize>,
    /// `spectral` or `proximal-gradient`.
    #[arg(long = "block-solver")]
    #[serde(rename = "block_solver", skip_serializing_if = "Option::is_none")]
    block_solver: Option<String>,
    /// `conventional` or `as-written`.
    #[arg(long = "logistic-form")]
    #[serde(rename = "logistic_form", skip_serializing_if = "Option::is_none")]
    logistic_form: Option<String>,
    /// Train on every record instead of the manifest's training objects.
    #[arg(long = "all-rows")]
    #[serde(rename = "all_rows", skip_serializing_if = "std::ops::Not::not")]
    all_rows: bool,
    /// Choose cells, bin size and alpha by cross-validated grid search.
    #[arg(long = "grid-search")]
    #[serde(rename = "grid_search", skip_serializing_if = "std::ops::Not::not")]
    grid_search: bool,
}

fn default_task() -> Task {
    Task::Pose
}
fn default_method() -> Method {
    Method::Proposed
}
fn default_cells() -> usize {
    4
}
fn default_bin_size() -> f64 {
    32.0
}
fn default_folds() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSettings {
    #[serde(default = "default_task")]
    task: Task,
    #[serde(default = "default_method")]
    method: Method,
    #[serde(default = "default_cells")]
    cells: usize,
    #[serde(default = "default_bin_size")]
    bin_size: f64,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(default)]
    max_iters: Option<usize>,
    #[serde(default)]
    tol: Option<f64>,
    #[serde(default)]
    inner_iters: Option<usize>,
    #[serde(default)]
    block_solver: Option<BlockSolver>,
    #[serde(default)]
    logistic_form: Option<LogisticForm>,
    #[serde(default)]
    all_rows: bool,
    #[serde(default)]
    grid_search: bool,
    #[serde(default)]
    grids: Option<Grids>,
    #[serde(default = "default_folds")]
    cv_folds: usize,
}

impl TrainSettings {
    fn solver(&self) -> AdmmConfig {
        let d = AdmmConfig::default();
        AdmmConfig {
            rho: self.rho.unwrap_or(d.rho),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            tol_primal: self.tol.unwrap_or(d.tol_primal),
            tol_dual: self.tol.unwrap_or(d.tol_dual),
            inner_iters: self.inner_iters.unwrap_or(d.inner_iters),
            alpha: self.alpha.unwrap_or(d.alpha),
            block_solver: self.block_solver.unwrap_or(d.block_solver),
            logistic_form: self.logistic_form.unwrap_or(d.logistic_form),
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Part file (JSON Lines) to score.
    #[arg(long)]
    parts: PathBuf,
    /// Predictions CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Evaluation config; the shipped default when omitted.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Directory for results.csv, results.json and the plots.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
}

fn input(msg: impl Into<String>) -> Error {
    Error::input(msg)
}

fn read_json_object(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))? {
        Value::Object(m) => Ok(m),
        _ => Err(input(format!("{}: expected a JSON object", path.display()))),
    }
}

/// Defaults, then the config file, then flags.
fn resolve<T: DeserializeOwned>(defaults: Value, config: Option<&Path>, flags: &impl Serialize) -> Result<T> {
    let mut merged = match defaults {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    if let Some(p) = config {
        merged.extend(read_json_object(p)?);
    }
    if let Value::Object(f) = serde_json::to_value(flags)? {
        merged.extend(f);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| input(format!("settings: {e}")))
}

fn config_base(config: Option<&Path>) -> PathBuf {
    config
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args([
            "-C",
            env!("CARGO_MANIFEST_DIR"),
            "describe",
            "--always",
            "--dirty",
            "--tags",
        ])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

/// Records how an output was produced: command, resolved settings, seed and
/// source revision.
fn write_run_manifest(path: &Path, command: &str, settings: &impl Serialize, seed: Value) -> Result<()> {
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "git_describe": git_describe(),
        "seed": seed,
        "settings": settings,
    });
    write_text(path, &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.run.json"))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let defaults = json!({ "templates": ["cup", "ball", "bottle", "teapot"], "objects_per_category": [5] });
    let cfg: SynthConfig = resolve(defaults, a.config.as_deref(), a)?;
    let manifest = cfg.generate(&config_base(a.config.as_deref()))?;
    let path = write_manifest(&manifest, &a.out)?;
    write_run_manifest(&a.out.join("run.json"), "synth", &cfg, json!(cfg.seed))?;
    println!("{} records -> {}", manifest.records.len(), path.display());
    Ok(())
}

/// `<object>__<pose>.pgm` to (object id, pose).
fn parse_image_name(path: &Path) -> Result<(String, PoseLabel)> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let (object, pose) = stem
        .rsplit_once("__")
        .ok_or_else(|| input(format!("{}: expected <object>__<pose>.pgm", path.display())))?;
    let pose: f64 = pose
        .parse()
        .map_err(|_| input(format!("{}: pose {pose:?} is not a number", path.display())))?;
    Ok((object.to_string(), PoseLabel::new(pose)?))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| input(format!("cannot list {}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let cfg: EdgeDetectorConfig = resolve(
        serde_json::to_value(EdgeDetectorConfig::default())?,
        a.config.as_deref(),
        a,
    )?;
    cfg.validate()?;
    let mut categories = Vec::new();
    let mut jobs = Vec::new();
    for dir in sorted_entries(&a.images)?.into_iter().filter(|p| p.is_dir()) {
        categories.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        let label = CategoryLabel::new(categories.len() as u32)?;
        for file in sorted_entries(&dir)? {
            if file.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
                let (object, pose) = parse_image_name(&file)?;
                jobs.push((file, object, label, pose));
            }
        }
    }
    if jobs.is_empty() {
        return Err(input(format!(
            "no <category>/*.pgm images under {}",
            a.images.display()
        )));
    }
    let mut records: Vec<ImageRecord> = jobs
        .par_iter()
        .map(|(file, object, label, pose)| {
            let img = read_pgm(file)?;
            let id = file.file_stem().unwrap().to_string_lossy().into_owned();
            let parts = detect_layer1(&img, &id, &cfg)?;
            let (h, w) = img.dim();
            ImageRecord::new(id, object.clone(), *label, *pose, w as u32, h as u32, parts)
        })
        .collect::<Result<_>>()?;
    records.sort_by(|x, y| {
        (x.category, &x.object_id, x.pose.degrees())
            .partial_cmp(&(y.category, &y.object_id, y.pose.degrees()))
            .expect("poses are finite")
    });
    let mut objects: Vec<Vec<String>> = vec![Vec::new(); categories.len()];
    for r in &records {
        let objs = &mut objects[r.category.index()];
        if !objs.contains(&r.object_id) {
            objs.push(r.object_id.clone());
        }
    }
    let manifest = DatasetManifest::new(1, categories, records, hold_out_last(&objects))?;
    let path = write_manifest(&manifest, &a.out)?;
    write_run_manifest(&a.out.join("run.json"), "detect", &cfg, Value::Null)?;
    println!("{} images -> {}", manifest.records.len(), path.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FeatureFile {
    dataset_digest: String,
    config_digest: String,
    hop: HopConfig,
    num_layers: u32,
    groups: Vec<[usize; 2]>,
    image_ids: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn cache_dir(manifest: &Path) -> PathBuf {
    std::env::var_os("PARTPOSE_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| config_base(Some(manifest)).join(".partpose-cache"))
}

fn config_digest(hop: &HopConfig, num_layers: u32) -> Result<String> {
    Ok(sha256_hex(
        serde_json::to_string(&json!({ "hop": hop, "L": num_layers }))?.as_bytes(),
    ))
}

fn feature_file(table: &FeatureTable, dataset_digest: String, hop: &HopConfig, num_layers: u32) -> Result<FeatureFile> {
    Ok(FeatureFile {
        dataset_digest,
        config_digest: config_digest(hop, num_layers)?,
        hop: *hop,
        num_layers,
        groups: table.groups.iter().map(|g| [g.start, g.end]).collect(),
        image_ids: table.image_ids.clone(),
        rows: table.rows.outer_iter().map(|r| r.to_vec()).collect(),
    })
}

fn table_from_file(f: FeatureFile) -> Result<FeatureTable> {
    let ncols = f.rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = f.rows.into_iter().flatten().collect();
    let rows = ndarray::Array2::from_shape_vec((f.image_ids.len(), ncols), flat)
        .map_err(|e| input(format!("feature cache: {e}")))?;
    Ok(FeatureTable {
        rows,
        groups: f.groups.iter().map(|g| g[0]..g[1]).collect(),
        image_ids: f.image_ids,
        diagnostics: Default::default(),
    })
}

/// Feature table of a dataset, from the cache when both digests match.
fn cached_features(manifest_path: &Path, manifest: &DatasetManifest, hop: &HopConfig) -> Result<FeatureTable> {
    let dataset_digest = manifest_digest(manifest);
    let cfg_digest = config_digest(hop, manifest.num_layers)?;
    let path = cache_dir(manifest_path).join(format!("features-{}-{}.json", &dataset_digest[..16], &cfg_digest[..16]));
    if let Ok(text) = fs::read_to_string(&path) {
        match serde_json::from_str::<FeatureFile>(&text) {
            Ok(f) if f.dataset_digest == dataset_digest && f.config_digest == cfg_digest => {
                log::info!("feature cache hit: {}", path.display());
                return table_from_file(f);
            }
            _ => log::info!("stale feature cache entry {}", path.display()),
        }
    }
    let table = extract_features(&manifest.records, manifest.num_layers, hop)?;
    let file = feature_file(&table, dataset_digest, hop, manifest.num_layers)?;
    if let Err(e) = write_text(&path, &serde_json::to_string(&file)?) {
        log::warn!("feature cache not written: {e}");
    }
    Ok(table)
}

fn cmd_features(a: &FeaturesArgs) -> Result<()> {
    let s: FeatureSettings = resolve(
        json!({ "cells": default_cells(), "bin_size": default_bin_size() }),
        a.config.as_deref(),
        a,
    )?;
    let hop = HopConfig::new(s.cells, s.bin_size)?;
    let manifest = read_manifest(&a.manifest)?;
    let table = cached_features(&a.manifest, &manifest, &hop)?;
    let file = feature_file(&table, manifest_digest(&manifest), &hop, manifest.num_layers)?;
    let out = a.out.clone().unwrap_or_else(|| {
        cache_dir(&a.manifest).join(format!(
            "features-{}-{}.json",
            &file.dataset_digest[..16],
            &file.config_digest[..16]
        ))
    });
    write_text(&out, &serde_json::to_string(&file)?)?;
    write_run_manifest(&sidecar(&out), "features", &s, Value::Null)?;
    println!(
        "{} x {} features -> {}",
        table.rows.nrows(),
        table.rows.ncols(),
        out.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut s: TrainSettings = resolve(json!({}), a.config.as_deref(), a)?;
    let mut cfg = s.solver();
    cfg.validate()?;
    let manifest = read_manifest(&a.manifest)?;
    let rows: Vec<usize> = if s.all_rows || manifest.split.train.is_empty() {
        (0..manifest.records.len()).collect()
    } else {
        (0..manifest.records.len())
            .filter(|&i| manifest.split.train.contains(&manifest.records[i].object_id))
            .collect()
    };
    if rows.is_empty() {
        return Err(input("no training records"));
    }
    if s.grid_search {
        let grids = s.grids.clone().unwrap_or_else(Grids::full);
        let cache = FeatureCache::new(&manifest.records, manifest.num_layers);
        let sel = greedy_grid_search(
            &cache,
            s.task,
            s.method,
            &grids,
            &manifest.categories,
            &rows,
            s.cv_folds,
            &cfg,
            false,
        )?;
        log::info!("grid search picked {:?} (cv loss {})", sel.setting, sel.cv_loss);
        s.cells = sel.setting.cells;
        s.bin_size = sel.setting.bin_size;
        s.alpha = Some(sel.setting.alpha);
        cfg.alpha = sel.setting.alpha;
    }
    let hop = HopConfig::new(s.cells, s.bin_size)?;
    let table = cached_features(&a.manifest, &manifest, &hop)?;
    let (cols, groups) = s.method.layout(&table, &hop)?;
    let raw = table.rows.select(Axis(0), &rows).select(Axis(1), &cols);
    let std = Standardization::fit(&raw, &(0..rows.len()).collect::<Vec<_>>())?;
    let mut dm = GroupedDesignMatrix::new(std.apply_rows(&raw)?, groups)?;
    dm.standardization = std;
    let first = &manifest.records[rows[0]];
    let spec = FeatureSpec {
        hop,
        num_layers: manifest.num_layers,
        width: first.width,
        height: first.height,
        columns: match (cols.first(), cols.last()) {
            (Some(&lo), Some(&hi)) if cols.len() < table.rows.ncols() => Some([lo, hi + 1]),
            _ => None,
        },
    };
    let model = match s.task {
        Task::Pose => {
            let poses: Vec<f64> = rows.iter().map(|&i| manifest.records[i].pose.degrees()).collect();
            let (mut m, trace) = PoseModel::fit(&dm, &poses, s.method.penalty(), &cfg)?;
            if !trace.converged {
                log::warn!("ADMM stopped at the iteration cap ({})", cfg.max_iters);
            }
            m.features = Some(spec);
            Model::Pose(m)
        }
        Task::Category => {
            let labels: Vec<CategoryLabel> = rows.iter().map(|&i| manifest.records[i].category).collect();
            let (mut m, traces) = CategoryModel::fit(&dm, &labels, &manifest.categories, &cfg)?;
            if traces.iter().any(|t| !t.converged) {
                log::warn!("ADMM stopped at the iteration cap ({})", cfg.max_iters);
            }
            m.features = Some(spec);
            Model::Category(m)
        }
    };
    write_text(&a.out, &(model.to_json()? + "\n"))?;
    write_run_manifest(&sidecar(&a.out), "train", &s, Value::Null)?;
    println!("{} model on {} rows -> {}", s.task_name(), rows.len(), a.out.display());
    Ok(())
}

impl TrainSettings {
    fn task_name(&self) -> &'static str {
        match self.task {
            Task::Pose => "pose",
            Task::Category => "category",
        }
    }
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let spec = model
        .features()
        .ok_or_else(|| input("the model does not record its feature settings"))?
        .clone();
    let records = read_parts(&a.parts)?;
    let features: Vec<Vec<f64>> = records.par_iter().map(|r| spec.extract(r)).collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| input(format!("CSV: {e}"));
    match &model {
        Model::Pose(m) => {
            w.write_record(["image_id", "object_id", "pose_deg", "predicted_deg", "error_deg"])
                .map_err(csv_err)?;
            for (r, f) in records.iter().zip(&features) {
                let p = partpose::solver::report_pose(m.predict_raw(f)?);
                let err = partpose::eval::pose_error(r.pose, p);
                w.write_record([
                    r.image_id.clone(),
                    r.object_id.clone(),
                    r.pose.degrees().to_string(),
                    p.to_string(),
                    err.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        Model::Category(m) => {
            w.write_record(["image_id", "object_id", "category", "predicted", "predicted_name"])
                .map_err(csv_err)?;
            for (r, f) in records.iter().zip(&features) {
                let c = m.predict_raw(f)?;
                w.write_record([
                    r.image_id.clone(),
                    r.object_id.clone(),
                    r.category.get().to_string(),
                    c.get().to_string(),
                    m.categories[c.index()].clone(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| input(format!("CSV: {e}")))?;
    write_text(&a.out, &String::from_utf8(bytes).expect("CSV is UTF-8"))?;
    let digests: BTreeMap<&str, String> = [
        ("model", sha256_hex(&fs::read(&a.model)?)),
        ("parts", sha256_hex(&fs::read(&a.parts)?)),
    ]
    .into_iter()
    .collect();
    write_run_manifest(&sidecar(&a.out), "predict", &json!({ "inputs": digests }), Value::Null)?;
    println!("{} predictions -> {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let defaults: Value = serde_json::from_str(DEFAULT_EVAL)?;
    let (defaults, config) = match &a.config {
        Some(p) => (json!({}), Some(p.as_path())),
        None => (defaults, None),
    };
    let cfg: EvalConfig = resolve(defaults, config, a)?;
    let start = std::time::Instant::now();
    let table = run_eval(&cfg, &config_base(config))?;
    let files = write_artifacts(&table, &a.out)?;
    write_run_manifest(&a.out.join("run.json"), "eval", &cfg, json!(cfg.seeds))?;
    let failed = table.rows.iter().filter(|r| r.value.is_none()).count();
    for f in &files {
        println!("{}", f.display());
    }
    eprintln!(
        "{} cells ({failed} failed) in {:.1} s",
        table.rows.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Features(a) => cmd_features(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
