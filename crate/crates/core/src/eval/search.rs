//! Methods under comparison, object-wise cross-validation and the greedy
//! coordinate search over (bSize, M, alpha).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, mean_pose_error};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureTable, GroupedDesignMatrix, HopConfig, Standardization};
use crate::solver::{AdmmConfig, CategoryModel, Penalty, PoseModel};
use crate::types::{CategoryLabel, ImageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Pose,
    Category,
}

/// Model families compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Every layer, one penalty group per layer.
    Proposed,
    /// Features of a single layer with an elementwise l1 penalty.
    Layer(u32),
    /// Only the layer-1 part-HOG columns, l1 penalty.
    Hog,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Proposed => write!(f, "proposed"),
            Method::Layer(l) => write!(f, "layer-{l}"),
            Method::Hog => write!(f, "hog"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "hog" => Ok(Method::Hog),
            _ => s
                .strip_prefix("layer-")
                .and_then(|l| l.parse::<u32>().ok())
                .filter(|&l| l >= 1)
                .map(Method::Layer)
                .ok_or_else(|| Error::input(format!("unknown method {s:?}"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl Method {
    /// The proposed method, one single-layer lasso per layer and the HOG baseline.
    pub fn standard_set(num_layers: u32) -> Vec<Method> {
        let mut v = vec![Method::Proposed];
        v.extend((1..=num_layers).map(Method::Layer));
        v.push(Method::Hog);
        v
    }

    /// Column indices into a feature table and the penalty groups over them.
    pub fn layout(self, table: &FeatureTable, hop: &HopConfig) -> Result<(Vec<usize>, Vec<Range<usize>>)> {
        match self {
            Method::Proposed => Ok(((0..table.rows.ncols()).collect(), table.groups.clone())),
            Method::Layer(l) => {
                let g = table
                    .groups
                    .get(l as usize - 1)
                    .ok_or_else(|| Error::input(format!("method {self} needs layer {l}")))?;
                Ok((g.clone().collect(), vec![0..g.len()]))
            }
            Method::Hog => {
                let g = &table.groups[0];
                let start = g.start + hop.dimension();
                let end = g.end - 1;
                Ok(((start..end).collect(), vec![0..end - start]))
            }
        }
    }

    pub fn penalty(self) -> Penalty {
        match self {
            Method::Proposed => Penalty::Group,
            _ => Penalty::L1,
        }
    }
}

/// Hyperparameter grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub bin_sizes: Vec<f64>,
    pub cells: Vec<usize>,
    pub alphas: Vec<f64>,
}

impl Grids {
    pub fn full() -> Self {
        Grids {
            bin_sizes: vec![8.0, 16.0, 32.0, 64.0],
            cells: vec![8, 16, 32, 64],
            alphas: (-6..=1).map(|e| 10f64.powi(e)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_sizes.is_empty() || self.cells.is_empty() || self.alphas.is_empty() {
            return Err(Error::input("hyperparameter grids must be non-empty"));
        }
        if self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::input("alpha values must be finite and >= 0"));
        }
        for &b in &self.bin_sizes {
            HopConfig::new(8, b)?;
        }
        if self.cells.contains(&0) {
            return Err(Error::input("grid cell counts must be positive"));
        }
        Ok(())
    }

    fn sorted(&self) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
        let mut b = self.bin_sizes.clone();
        b.sort_by(f64::total_cmp);
        b.dedup();
        let mut m = self.cells.clone();
        m.sort_unstable();
        m.dedup();
        let mut a = self.alphas.clone();
        a.sort_by(f64::total_cmp);
        a.dedup();
        (b, m, a)
    }
}

type Slot = Arc<OnceLock<std::result::Result<Arc<FeatureTable>, String>>>;

/// Feature tables of one dataset, computed once per (M, bSize).
pub struct FeatureCache<'a> {
    records: &'a [ImageRecord],
    num_layers: u32,
    tables: Mutex<HashMap<(usize, u64), Slot>>,
}

impl<'a> FeatureCache<'a> {
    pub fn new(records: &'a [ImageRecord], num_layers: u32) -> Self {
        FeatureCache {
            records,
            num_layers,
            tables: Mutex::new(HashMap::new()),
        }
    }

    pub fn records(&self) -> &'a [ImageRecord] {
        self.records
    }

    pub fn get(&self, cfg: &HopConfig) -> Result<Arc<FeatureTable>> {
        let slot = {
            let mut map = self.tables.lock().expect("feature cache lock");
            map.entry((cfg.cells, cfg.bin_size.to_bits())).or_default().clone()
        };
        slot.get_or_init(|| {
            log::debug!("extracting features for M = {}, bSize = {}", cfg.cells, cfg.bin_size);
            extract_features(self.records, self.num_layers, cfg)
                .map(Arc::new)
                .map_err(|e| e.to_string())
        })
        .clone()
        .map_err(Error::Input)
    }
}

/// One hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub bin_size: f64,
    pub cells: usize,
    pub alpha: f64,
}

impl Setting {
    pub fn hop(&self) -> Result<HopConfig> {
        HopConfig::new(self.cells, self.bin_size)
    }
}

/// Train on `train` rows, score `test` rows. Pose scores are mean pose
/// errors; category scores are accuracies in percent.
pub fn fit_and_score(
    cache: &FeatureCache,
    task: Task,
    method: Method,
    setting: &Setting,
    categories: &[String],
    train: &[usize],
    test: &[usize],
    solver: &AdmmConfig,
    squared: bool,
) -> Result<f64> {
    let hop = setting.hop()?;
    let table = cache.get(&hop)?;
    let (cols, groups) = method.layout(&table, &hop)?;
    let raw_train = table.rows.select(Axis(0), train).select(Axis(1), &cols);
    let std = Standardization::fit(&raw_train, &(0..train.len()).collect::<Vec<_>>())?;
    let mut dm = GroupedDesignMatrix::new(std.apply_rows(&raw_train)?, groups)?;
    dm.standardization = std;
    let test_rows: Array2<f64> = dm
        .standardization
        .apply_rows(&table.rows.select(Axis(0), test).select(Axis(1), &cols))?;
    let cfg = AdmmConfig {
        alpha: setting.alpha,
        ..*solver
    };
    let records = cache.records();
    match task {
        Task::Pose => {
            let poses: Vec<f64> = train.iter().map(|&i| records[i].pose.degrees()).collect();
            let (model, _) = PoseModel::fit(&dm, &poses, method.penalty(), &cfg)?;
            let pred: Vec<f64> = test_rows
                .rows()
                .into_iter()
                .map(|r| r.dot(&ArrayView1::from(&model.omega)) + model.target_mean)
                .collect();
            let truth: Vec<_> = test.iter().map(|&i| records[i].pose).collect();
            mean_pose_error(&truth, &pred, squared)
        }
        Task::Category => {
            let labels: Vec<CategoryLabel> = train.iter().map(|&i| records[i].category).collect();
            let (model, _) = CategoryModel::fit(&dm, &labels, categories, &cfg)?;
            let pred = test_rows
                .rows()
                .into_iter()
                .map(|r| crate::solver::predict_category(&model, r.as_slice().expect("rows are contiguous")))
                .collect::<Result<Vec<_>>>()?;
            let truth: Vec<_> = test.iter().map(|&i| records[i].category).collect();
            accuracy(&pred, &truth)
        }
    }
}

/// Lower is better: pose error, or 100 - accuracy.
fn loss_of(task: Task, score: f64) -> f64 {
    match task {
        Task::Pose => score,
        Task::Category => 100.0 - score,
    }
}

/// Validation folds over the training rows: `k`-fold by object when every
/// fold gets at least two objects, leave-one-object-out when there are at
/// least two objects, and interleaved poses of the single object otherwise.
pub fn cv_folds(records: &[ImageRecord], rows: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut objects: BTreeMap<(CategoryLabel, &str), Vec<usize>> = BTreeMap::new();
    for &i in rows {
        objects
            .entry((records[i].category, records[i].object_id.as_str()))
            .or_default()
            .push(i);
    }
    let n = objects.len();
    let k = k.max(2);
    if n >= 2 {
        let folds = if n >= 2 * k { k } else { n };
        let mut out = vec![Vec::new(); folds];
        for (j, rows) in objects.into_values().enumerate() {
            out[j % folds].extend(rows);
        }
        return out;
    }
    let mut by_pose: Vec<usize> = rows.to_vec();
    by_pose.sort_by(|&a, &b| records[a].pose.degrees().total_cmp(&records[b].pose.degrees()));
    let mut out = vec![Vec::new(); k.min(by_pose.len().max(1))];
    let folds = out.len();
    for (j, i) in by_pose.into_iter().enumerate() {
        out[j % folds].push(i);
    }
    out
}

/// Cross-validated loss pooled over all held-out rows.
pub fn cv_loss(
    cache: &FeatureCache,
    task: Task,
    method: Method,
    setting: &Setting,
    categories: &[String],
    folds: &[Vec<usize>],
    solver: &AdmmConfig,
    squared: bool,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (f, held) in folds.iter().enumerate() {
        if held.is_empty() {
            continue;
        }
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, r)| r.iter().copied())
            .collect();
        if train.is_empty() {
            continue;
        }
        let score = fit_and_score(cache, task, method, setting, categories, &train, held, solver, squared)?;
        total += loss_of(task, score) * held.len() as f64;
        count += held.len();
    }
    if count == 0 {
        return Err(Error::input("cross-validation has no usable folds"));
    }
    Ok(total / count as f64)
}

/// Outcome of [`greedy_grid_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub setting: Setting,
    /// Cross-validated loss of the chosen setting (NaN when nothing was
    /// evaluated because the grid had a single point).
    pub cv_loss: f64,
    /// Distinct settings evaluated.
    pub evaluations: usize,
}

/// Coordinate-wise search: bSize with M at its median and alpha at its
/// median, then M, then alpha. Ties go to the smaller value.
#[allow(clippy::too_many_arguments)]
pub fn greedy_grid_search(
    cache: &FeatureCache,
    task: Task,
    method: Method,
    grids: &Grids,
    categories: &[String],
    train: &[usize],
    folds: usize,
    solver: &AdmmConfig,
    squared: bool,
) -> Result<Selection> {
    grids.validate()?;
    let (bins, cells, alphas) = grids.sorted();
    let median = |len: usize| (len - 1) / 2;
    let mut current = Setting {
        bin_size: bins[0],
        cells: cells[median(cells.len())],
        alpha: alphas[median(alphas.len())],
    };
    if bins.len() == 1 && cells.len() == 1 && alphas.len() == 1 {
        return Ok(Selection {
            setting: current,
            cv_loss: f64::NAN,
            evaluations: 0,
        });
    }
    let fold_rows = cv_folds(cache.records(), train, folds);
    let mut memo: HashMap<(u64, usize, u64), f64> = HashMap::new();
    let mut eval = |s: &Setting| -> Result<f64> {
        let key = (s.bin_size.to_bits(), s.cells, s.alpha.to_bits());
        if let Some(v) = memo.get(&key) {
            return Ok(*v);
        }
        let v = cv_loss(cache, task, method, s, categories, &fold_rows, solver, squared)?;
        log::debug!(
            "{method} bSize={} M={} alpha={:e}: cv loss {v:.3}",
            s.bin_size,
            s.cells,
            s.alpha
        );
        memo.insert(key, v);
        Ok(v)
    };
    let mut best = f64::INFINITY;
    // each sweep contains the incumbent, so the loss never increases
    for dim in 0..3 {
        let candidates: Vec<Setting> = match dim {
            0 => bins.iter().map(|&b| Setting { bin_size: b, ..current }).collect(),
            1 => cells.iter().map(|&m| Setting { cells: m, ..current }).collect(),
            _ => alphas.iter().map(|&a| Setting { alpha: a, ..current }).collect(),
        };
        let mut sweep_best = f64::INFINITY;
        for s in candidates {
            let v = eval(&s)?;
            if v < sweep_best {
                sweep_best = v;
                current = s;
            }
        }
        best = sweep_best;
    }
    Ok(Selection {
        setting: current,
        cv_loss: best,
        evaluations: memo.len(),
    })
}
