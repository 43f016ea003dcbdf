//! Experiment protocols and the result table.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::search::{fit_and_score, greedy_grid_search, FeatureCache, Grids, Method, Selection, Task};
use crate::error::{Error, Result};
use crate::solver::AdmmConfig;
use crate::synth::{object_split, objects_by_category, SynthConfig};
use crate::types::{DatasetManifest, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Each category on its own: train and test objects of one category.
    ObjectWise,
    /// The first C categories, `n_train` training objects from each.
    CategoryWiseBalanced,
    /// The first C categories, one test object each and every remaining
    /// object for training.
    CategoryWiseUnbalanced,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::ObjectWise => "object-wise",
            Protocol::CategoryWiseBalanced => "category-wise-balanced",
            Protocol::CategoryWiseUnbalanced => "category-wise-unbalanced",
        })
    }
}

fn default_n_train() -> Vec<usize> {
    vec![1, 2, 3, 4]
}
fn one() -> usize {
    1
}
fn default_categories() -> Vec<usize> {
    vec![2]
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub task: Task,
    /// Training objects per category; ignored by the unbalanced protocol.
    #[serde(default = "default_n_train")]
    pub n_train: Vec<usize>,
    /// Test objects per category.
    #[serde(default = "one")]
    pub n_test: usize,
    /// Category counts C; the first C categories of the dataset are used.
    #[serde(default = "default_categories")]
    pub categories: Vec<usize>,
    #[serde(default = "two")]
    pub repeats: usize,
    pub grids: Grids,
    /// Empty means the proposed method, every single layer and the HOG baseline.
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub solver: AdmmConfig,
    #[serde(default = "three")]
    pub cv_folds: usize,
    /// Report squared pose errors instead of absolute ones.
    #[serde(default)]
    pub squared_error: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::input("repeats must be at least 1"));
        }
        self.grids.validate()?;
        self.solver.validate()?;
        if self.n_test == 0 {
            return Err(Error::input("at least one test object per category is required"));
        }
        if self.protocol != Protocol::CategoryWiseUnbalanced && (self.n_train.is_empty() || self.n_train.contains(&0)) {
            return Err(Error::input("the n_train schedule must be non-empty and positive"));
        }
        if self.protocol != Protocol::ObjectWise && (self.categories.is_empty() || self.categories.contains(&0)) {
            return Err(Error::input("the category schedule must be non-empty and positive"));
        }
        if self.task == Task::Category {
            if self.protocol == Protocol::ObjectWise {
                return Err(Error::input("categorization needs a category-wise protocol"));
            }
            if self.categories.iter().any(|&c| c < 2) {
                return Err(Error::input("categorization needs C >= 2"));
            }
        }
        Ok(())
    }

    pub fn methods_for(&self, num_layers: u32) -> Result<Vec<Method>> {
        let methods = if self.methods.is_empty() {
            Method::standard_set(num_layers)
        } else {
            self.methods.clone()
        };
        if let Some(m) = methods
            .iter()
            .find(|m| matches!(m, Method::Layer(l) if *l > num_layers))
        {
            return Err(Error::input(format!("method {m} needs more than {num_layers} layers")));
        }
        Ok(methods)
    }

    fn metric(&self) -> &'static str {
        match (self.task, self.squared_error) {
            (Task::Pose, false) => "pose_error",
            (Task::Pose, true) => "squared_pose_error",
            (Task::Category, _) => "accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: Protocol,
    #[serde(rename = "C")]
    pub categories: usize,
    pub n_train: usize,
    pub method: Method,
    pub repeat: usize,
    pub metric: String,
    /// `None` when the cell failed; `note` then says why.
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Selected hyperparameters, one entry per trained category group.
    pub selection: Vec<Selection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub protocol: Protocol,
    #[serde(rename = "C")]
    pub categories: usize,
    pub n_train: usize,
    pub method: Method,
    pub metric: String,
    /// Mean over successful repeats (`None` if all failed).
    pub mean: Option<f64>,
    pub repeats: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "failed".to_string(), |x| x.to_string())
}

impl ResultTable {
    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }

    /// Means over repeats per (protocol, C, n_train, method, metric), in
    /// first-appearance order.
    pub fn means(&self) -> Vec<MeanRow> {
        let mut order = Vec::new();
        let mut acc: BTreeMap<(Protocol, usize, usize, Method, String), (f64, usize, usize)> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.protocol, r.categories, r.n_train, r.method, r.metric.clone());
            let e = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0.0, 0, 0)
            });
            match r.value {
                Some(v) => {
                    e.0 += v;
                    e.1 += 1;
                }
                None => e.2 += 1,
            }
        }
        order
            .into_iter()
            .map(|k| {
                let (sum, n, failed) = acc[&k];
                MeanRow {
                    protocol: k.0,
                    categories: k.1,
                    n_train: k.2,
                    method: k.3,
                    metric: k.4,
                    mean: (n > 0).then(|| sum / n as f64),
                    repeats: n,
                    failed,
                }
            })
            .collect()
    }

    /// CSV with header `protocol,C,n_train,method,repeat,metric,value`;
    /// per-repeat rows come first, then one `mean` row per cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::input(format!("CSV: {e}"));
        w.write_record(["protocol", "C", "n_train", "method", "repeat", "metric", "value"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.protocol.to_string(),
                r.categories.to_string(),
                r.n_train.to_string(),
                r.method.to_string(),
                r.repeat.to_string(),
                r.metric.clone(),
                fmt_value(r.value),
            ])
            .map_err(csv_err)?;
        }
        for m in self.means() {
            w.write_record([
                m.protocol.to_string(),
                m.categories.to_string(),
                m.n_train.to_string(),
                m.method.to_string(),
                "mean".to_string(),
                m.metric.clone(),
                fmt_value(m.mean),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::input(format!("CSV: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            rows: &'a [ResultRow],
            means: Vec<MeanRow>,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            rows: &self.rows,
            means: self.means(),
        })? + "\n")
    }

    /// Mean value of one cell.
    pub fn mean_of(&self, categories: usize, n_train: usize, method: Method) -> Option<f64> {
        self.means()
            .into_iter()
            .find(|m| m.categories == categories && m.n_train == n_train && m.method == method)
            .and_then(|m| m.mean)
    }
}

struct Job {
    categories: usize,
    n_train: usize,
    repeat: usize,
    /// One split per trained group (one group per category for the
    /// object-wise protocol).
    splits: Vec<(Vec<usize>, Split)>,
}

fn job_rng(seed: u64, c: usize, n: usize, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((c as u64) << 40) | ((n as u64) << 20) | r as u64);
    rng
}

fn plan(cfg: &ExperimentConfig, manifest: &DatasetManifest, repeat_offset: usize) -> Result<Vec<Job>> {
    let ncat = manifest.categories.len();
    let mut jobs = Vec::new();
    match cfg.protocol {
        Protocol::ObjectWise => {
            for &n in &cfg.n_train {
                for r in 0..cfg.repeats {
                    let mut rng = job_rng(cfg.seed, 1, n, r);
                    let splits = (0..ncat)
                        .map(|c| Ok((vec![c], object_split(manifest, &[c], Some(n), cfg.n_test, &mut rng)?)))
                        .collect::<Result<_>>()?;
                    jobs.push(Job {
                        categories: 1,
                        n_train: n,
                        repeat: repeat_offset + r,
                        splits,
                    });
                }
            }
        }
        Protocol::CategoryWiseBalanced | Protocol::CategoryWiseUnbalanced => {
            let balanced = cfg.protocol == Protocol::CategoryWiseBalanced;
            let schedule: Vec<Option<usize>> = if balanced {
                cfg.n_train.iter().map(|&n| Some(n)).collect()
            } else {
                vec![None]
            };
            for &c in &cfg.categories {
                if c > ncat {
                    return Err(Error::input(format!("C = {c} but the dataset has {ncat} categories")));
                }
                let cats: Vec<usize> = (0..c).collect();
                for &n in &schedule {
                    for r in 0..cfg.repeats {
                        let mut rng = job_rng(cfg.seed, c, n.unwrap_or(0), r);
                        let split = object_split(manifest, &cats, n, cfg.n_test, &mut rng)?;
                        jobs.push(Job {
                            categories: c,
                            n_train: n.unwrap_or(split.train.len()),
                            repeat: repeat_offset + r,
                            splits: vec![(cats.clone(), split)],
                        });
                    }
                }
            }
        }
    }
    Ok(jobs)
}

fn rows_of(manifest: &DatasetManifest, objects: &[String]) -> Vec<usize> {
    manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| objects.contains(&r.object_id))
        .map(|(i, _)| i)
        .collect()
}

fn run_cell(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    cache: &FeatureCache,
    job: &Job,
    method: Method,
) -> Result<(f64, Vec<Selection>)> {
    let mut total = 0.0;
    let mut selections = Vec::new();
    for (cats, split) in &job.splits {
        let names: Vec<String> = manifest.categories[..cats.iter().max().map_or(0, |m| m + 1)].to_vec();
        let train = rows_of(manifest, &split.train);
        let test = rows_of(manifest, &split.test);
        let sel = greedy_grid_search(
            cache,
            cfg.task,
            method,
            &cfg.grids,
            &names,
            &train,
            cfg.cv_folds,
            &cfg.solver,
            cfg.squared_error,
        )?;
        total += fit_and_score(
            cache,
            cfg.task,
            method,
            &sel.setting,
            &names,
            &train,
            &test,
            &cfg.solver,
            cfg.squared_error,
        )?;
        selections.push(sel);
    }
    Ok((total / job.splits.len() as f64, selections))
}

/// Run every (C, n_train, repeat) cell for every method. All splits are
/// drawn, and checked against the available objects, before any training.
/// Repeat numbers start at `repeat_offset`.
pub fn run_experiment(cfg: &ExperimentConfig, manifest: &DatasetManifest, repeat_offset: usize) -> Result<ResultTable> {
    cfg.validate()?;
    let methods = cfg.methods_for(manifest.num_layers)?;
    if objects_by_category(manifest).iter().any(Vec::is_empty) {
        return Err(Error::input("every category needs at least one object"));
    }
    let jobs = plan(cfg, manifest, repeat_offset)?;
    let cache = FeatureCache::new(&manifest.records, manifest.num_layers);
    let cells: Vec<(&Job, Method)> = jobs.iter().flat_map(|j| methods.iter().map(move |&m| (j, m))).collect();
    let rows = cells
        .par_iter()
        .map(|&(job, method)| {
            let (value, note, selection) = match run_cell(cfg, manifest, &cache, job, method) {
                Ok((v, s)) => (Some(v), None, s),
                Err(e) => {
                    log::warn!("C={} n_train={} {method}: {e}", job.categories, job.n_train);
                    (None, Some(e.to_string()), Vec::new())
                }
            };
            ResultRow {
                protocol: cfg.protocol,
                categories: job.categories,
                n_train: job.n_train,
                method,
                repeat: job.repeat,
                metric: cfg.metric().to_string(),
                value,
                note,
                selection,
            }
        })
        .collect();
    Ok(ResultTable { rows })
}

/// Where an evaluation gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Regenerated for every seed.
    Synthetic(SynthConfig),
    /// A manifest file, shared by every seed.
    Manifest(std::path::PathBuf),
}

/// A full evaluation: one experiment per seed, pooled into one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub dataset: DatasetSource,
    pub seeds: Vec<u64>,
    pub experiment: ExperimentConfig,
}

/// Runs every seed; repeats of seed `i` are numbered from `i * repeats`.
/// Relative template and manifest paths are resolved against `base`.
pub fn run_eval(cfg: &EvalConfig, base: &std::path::Path) -> Result<ResultTable> {
    if cfg.seeds.is_empty() {
        return Err(Error::input("at least one seed is required"));
    }
    cfg.experiment.validate()?;
    let shared = match &cfg.dataset {
        DatasetSource::Manifest(p) => Some(crate::io::read_manifest(&base.join(p))?),
        DatasetSource::Synthetic(_) => None,
    };
    let mut table = ResultTable::default();
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let manifest = match (&cfg.dataset, &shared) {
            (_, Some(m)) => m.clone(),
            (DatasetSource::Synthetic(sc), None) => SynthConfig { seed, ..sc.clone() }.generate(base)?,
            (DatasetSource::Manifest(_), None) => unreachable!("manifest loaded above"),
        };
        let exp = ExperimentConfig {
            seed,
            ..cfg.experiment.clone()
        };
        log::info!("seed {seed}: {} records", manifest.records.len());
        table.extend(run_experiment(&exp, &manifest, i * exp.repeats)?);
    }
    Ok(table)
}
