//! Trained pose and category models, prediction, and their JSON form.

use std::ops::Range;
use std::path::Path;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::admm::{lambda_max_lasso, lambda_max_regression, sharing_admm, AdmmConfig, AdmmTrace, Loss};
use super::block::Penalty;
use super::logistic::{lambda_max_logistic, LogisticForm};
use crate::error::{Error, Result};
use crate::features::{record_features, GroupedDesignMatrix, HopConfig, Standardization};
use crate::types::{wrap_degrees, CategoryLabel, ImageRecord};

pub const MODEL_VERSION: u32 = 1;

/// How a model's feature vectors were produced, so that it can be applied
/// to new part files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub hop: HopConfig,
    pub num_layers: u32,
    pub width: u32,
    pub height: u32,
    /// Column range used out of the concatenated layer features; all of
    /// them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<[usize; 2]>,
}

impl FeatureSpec {
    /// Unstandardized feature vector of one record.
    pub fn extract(&self, record: &ImageRecord) -> Result<Vec<f64>> {
        if record.width != self.width || record.height != self.height {
            return Err(Error::input(format!(
                "image {} is {}x{}, the model was trained on {}x{}",
                record.image_id, record.width, record.height, self.width, self.height
            )));
        }
        let (row, _) = record_features(record, self.num_layers, &self.hop)?;
        match self.columns {
            None => Ok(row),
            Some([a, b]) if a <= b && b <= row.len() => Ok(row[a..b].to_vec()),
            Some([a, b]) => Err(Error::input(format!(
                "model columns {a}..{b} exceed the {} features",
                row.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseModel {
    pub groups: Vec<Range<usize>>,
    pub omega: Vec<f64>,
    pub standardization: Standardization,
    /// Mean training pose; predictions add it back.
    pub target_mean: f64,
    pub rho: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub penalty: Penalty,
    pub features: Option<FeatureSpec>,
}

fn dot(f: &[f64], w: &[f64]) -> Result<f64> {
    if f.len() != w.len() {
        return Err(Error::input(format!(
            "feature vector has {} entries, model expects {}",
            f.len(),
            w.len()
        )));
    }
    Ok(f.iter().zip(w).map(|(a, b)| a * b).sum())
}

impl PoseModel {
    /// Fit at `lambda = alpha * lambda_max` on centered targets.
    pub fn fit(
        dm: &GroupedDesignMatrix,
        poses: &[f64],
        penalty: Penalty,
        cfg: &AdmmConfig,
    ) -> Result<(PoseModel, AdmmTrace)> {
        if poses.len() != dm.nrows() || poses.is_empty() {
            return Err(Error::input(format!(
                "{} poses for {} training rows",
                poses.len(),
                dm.nrows()
            )));
        }
        let target_mean = poses.iter().sum::<f64>() / poses.len() as f64;
        let z: Vec<f64> = poses.iter().map(|p| p - target_mean).collect();
        let lambda_max = match penalty {
            Penalty::Group => lambda_max_regression(dm, &z)?,
            Penalty::L1 => lambda_max_lasso(dm, &z)?,
        };
        let lambda = cfg.alpha * lambda_max;
        let (omega, trace) = sharing_admm(
            dm.matrix.view(),
            &dm.groups,
            Loss::Squared(&z),
            penalty,
            lambda,
            cfg,
            None,
        )?;
        Ok((
            PoseModel {
                groups: dm.groups.clone(),
                omega,
                standardization: dm.standardization.clone(),
                target_mean,
                rho: cfg.rho,
                lambda,
                alpha: cfg.alpha,
                penalty,
                features: None,
            },
            trace,
        ))
    }

    /// Euclidean norm of each group of weights.
    pub fn group_norms(&self) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| super::prox::l2_norm(&self.omega[g.clone()]))
            .collect()
    }

    /// Prediction for an unstandardized feature vector.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<f64> {
        predict_pose(self, &self.standardization.apply(raw)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PoseModelDoc {
            version: MODEL_VERSION,
            kind: "pose".into(),
            groups: self.groups.iter().map(|g| [g.start, g.end]).collect(),
            omega: split_groups(&self.omega, &self.groups),
            col_means: self.standardization.means.clone(),
            col_scales: self.standardization.scales.clone(),
            target_mean: self.target_mean,
            rho: self.rho,
            lambda: self.lambda,
            alpha: self.alpha,
            penalty: self.penalty,
            features: self.features.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PoseModelDoc = serde_json::from_str(text)?;
        check_header(doc.version, &doc.kind, "pose")?;
        let groups = ranges(&doc.groups);
        let omega = join_groups(&doc.omega, &groups)?;
        let standardization = Standardization {
            means: doc.col_means,
            scales: doc.col_scales,
        };
        if standardization.dim() != omega.len() || standardization.scales.len() != omega.len() {
            return Err(Error::input("model standardization does not match its weights"));
        }
        Ok(PoseModel {
            groups,
            omega,
            standardization,
            target_mean: doc.target_mean,
            rho: doc.rho,
            lambda: doc.lambda,
            alpha: doc.alpha,
            penalty: doc.penalty,
            features: doc.features,
        })
    }
}

/// `f . w + mean training pose` for a standardized feature vector. The value
/// is not wrapped; see [`report_pose`].
pub fn predict_pose(model: &PoseModel, f: &[f64]) -> Result<f64> {
    Ok(dot(f, &model.omega)? + model.target_mean)
}

/// Pose prediction as reported: reduced to `[0, 360)`.
pub fn report_pose(prediction: f64) -> f64 {
    wrap_degrees(prediction)
}

/// One-vs-rest l1 logistic models, one weight vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryModel {
    pub groups: Vec<Range<usize>>,
    pub class_weights: Vec<Vec<f64>>,
    pub standardization: Standardization,
    pub rho: f64,
    pub lambdas: Vec<f64>,
    pub alpha: f64,
    pub logistic_form: LogisticForm,
    pub categories: Vec<String>,
    pub features: Option<FeatureSpec>,
}

impl CategoryModel {
    /// Trains `C` binary problems from the 1-of-C coding of `labels`.
    pub fn fit(
        dm: &GroupedDesignMatrix,
        labels: &[CategoryLabel],
        categories: &[String],
        cfg: &AdmmConfig,
    ) -> Result<(CategoryModel, Vec<AdmmTrace>)> {
        let c = categories.len();
        if c < 2 {
            return Err(Error::input("categorization needs at least two categories"));
        }
        if labels.len() != dm.nrows() || labels.is_empty() {
            return Err(Error::input("label count differs from row count"));
        }
        if let Some(bad) = labels.iter().find(|l| l.index() >= c) {
            return Err(Error::input(format!("label {} exceeds {c} categories", bad.get())));
        }
        let weight = cfg.logistic_form.loss_weight(dm.groups.len());
        let mut class_weights = Vec::with_capacity(c);
        let mut lambdas = Vec::with_capacity(c);
        let mut traces = Vec::with_capacity(c);
        for class in 0..c {
            let y: Vec<f64> = labels
                .iter()
                .map(|l| if l.index() == class { 1.0 } else { 0.0 })
                .collect();
            let lambda = cfg.alpha * lambda_max_logistic(dm, &y, weight)?;
            let (w, trace) = sharing_admm(
                dm.matrix.view(),
                &dm.groups,
                Loss::Logistic { labels: &y, weight },
                Penalty::L1,
                lambda,
                cfg,
                None,
            )?;
            class_weights.push(w);
            lambdas.push(lambda);
            traces.push(trace);
        }
        Ok((
            CategoryModel {
                groups: dm.groups.clone(),
                class_weights,
                standardization: dm.standardization.clone(),
                rho: cfg.rho,
                lambdas,
                alpha: cfg.alpha,
                logistic_form: cfg.logistic_form,
                categories: categories.to_vec(),
                features: None,
            },
            traces,
        ))
    }

    /// Class scores `h_c(f) = f . w_c` for a standardized feature vector.
    pub fn scores(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.class_weights.iter().map(|w| dot(f, w)).collect()
    }

    pub fn predict_raw(&self, raw: &[f64]) -> Result<CategoryLabel> {
        predict_category(self, &self.standardization.apply(raw)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CategoryModelDoc {
            version: MODEL_VERSION,
            kind: "category".into(),
            groups: self.groups.iter().map(|g| [g.start, g.end]).collect(),
            omega: self
                .class_weights
                .iter()
                .map(|w| split_groups(w, &self.groups))
                .collect(),
            col_means: self.standardization.means.clone(),
            col_scales: self.standardization.scales.clone(),
            rho: self.rho,
            lambda: self.lambdas.clone(),
            alpha: self.alpha,
            logistic_form: self.logistic_form,
            categories: self.categories.clone(),
            features: self.features.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CategoryModelDoc = serde_json::from_str(text)?;
        check_header(doc.version, &doc.kind, "category")?;
        let groups = ranges(&doc.groups);
        let class_weights = doc
            .omega
            .iter()
            .map(|w| join_groups(w, &groups))
            .collect::<Result<Vec<_>>>()?;
        if class_weights.len() != doc.categories.len() || class_weights.len() < 2 {
            return Err(Error::input("category model needs one weight vector per class"));
        }
        Ok(CategoryModel {
            groups,
            class_weights,
            standardization: Standardization {
                means: doc.col_means,
                scales: doc.col_scales,
            },
            rho: doc.rho,
            lambdas: doc.lambda,
            alpha: doc.alpha,
            logistic_form: doc.logistic_form,
            categories: doc.categories,
            features: doc.features,
        })
    }
}

/// argmax_c h_c(f); ties go to the smallest class index.
pub fn predict_category(model: &CategoryModel, f: &[f64]) -> Result<CategoryLabel> {
    let scores = model.scores(f)?;
    let mut best = 0;
    for (c, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = c;
        }
    }
    CategoryLabel::new(best as u32 + 1)
}

/// Model file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Pose(PoseModel),
    Category(CategoryModel),
}

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let head: serde_json::Value = serde_json::from_str(&text)?;
        match head.get("kind").and_then(|k| k.as_str()) {
            Some("pose") => Ok(Model::Pose(PoseModel::from_json(&text)?)),
            Some("category") => Ok(Model::Category(CategoryModel::from_json(&text)?)),
            other => Err(Error::input(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Model::Pose(m) => m.to_json(),
            Model::Category(m) => m.to_json(),
        }
    }

    pub fn features(&self) -> Option<&FeatureSpec> {
        match self {
            Model::Pose(m) => m.features.as_ref(),
            Model::Category(m) => m.features.as_ref(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PoseModelDoc {
    version: u32,
    kind: String,
    groups: Vec<[usize; 2]>,
    omega: Vec<Vec<f64>>,
    col_means: Vec<f64>,
    col_scales: Vec<f64>,
    target_mean: f64,
    rho: f64,
    lambda: f64,
    alpha: f64,
    penalty: Penalty,
    #[serde(default)]
    features: Option<FeatureSpec>,
}

#[derive(Serialize, Deserialize)]
struct CategoryModelDoc {
    version: u32,
    kind: String,
    groups: Vec<[usize; 2]>,
    omega: Vec<Vec<Vec<f64>>>,
    col_means: Vec<f64>,
    col_scales: Vec<f64>,
    rho: f64,
    lambda: Vec<f64>,
    alpha: f64,
    logistic_form: LogisticForm,
    categories: Vec<String>,
    #[serde(default)]
    features: Option<FeatureSpec>,
}

fn check_header(version: u32, kind: &str, want: &str) -> Result<()> {
    if version != MODEL_VERSION {
        return Err(Error::input(format!(
            "model file version {version}, this build reads {MODEL_VERSION}"
        )));
    }
    if kind != want {
        return Err(Error::input(format!("expected a {want} model, found {kind}")));
    }
    Ok(())
}

fn ranges(pairs: &[[usize; 2]]) -> Vec<Range<usize>> {
    pairs.iter().map(|p| p[0]..p[1]).collect()
}

fn split_groups(w: &[f64], groups: &[Range<usize>]) -> Vec<Vec<f64>> {
    groups.iter().map(|g| w[g.clone()].to_vec()).collect()
}

fn join_groups(parts: &[Vec<f64>], groups: &[Range<usize>]) -> Result<Vec<f64>> {
    let total = groups.last().map(|g| g.end).unwrap_or(0);
    crate::features::check_groups(groups, total)?;
    if parts.len() != groups.len() {
        return Err(Error::input("model has a different number of weight groups and ranges"));
    }
    let mut out = Vec::with_capacity(total);
    for (p, g) in parts.iter().zip(groups) {
        if p.len() != g.len() {
            return Err(Error::input(format!("group {g:?} stores {} weights", p.len())));
        }
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// `F w` for a batch of standardized rows.
pub fn linear_scores(dm: &GroupedDesignMatrix, omega: &[f64]) -> Result<Vec<f64>> {
    if omega.len() != dm.ncols() {
        return Err(Error::input("weight length differs from column count"));
    }
    Ok(dm.matrix.dot(&ArrayView1::from(omega)).to_vec())
}
