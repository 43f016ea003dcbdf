//! Per-layer features and the layer-blocked design matrix.
//!
//! Each layer contributes `f = (hop, hog, entropy)` of dimension
//! `M^2 B + D_h + 1`; a row of the design matrix concatenates the blocks of
//! layers `1..=L`, and each block is one penalty group for the solvers.

pub mod graph;
pub mod hog;
pub mod hop;

use std::ops::Range;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ImageRecord;

pub use graph::{
    normalized_laplacian, part_graph_from_positions, part_graph_weights, symmetric_eigenvalues, von_neumann_entropy,
    PartGraph,
};
pub use hog::{hog_descriptor, part_activation_map, part_hog_features, HogConfig};
pub use hop::{hop_features, part_orientation, HopConfig, HopHistogram};

/// HOG parameters tied to the HOP grid: cell = width / M pixels and the same
/// number of orientation bins.
pub fn hog_config_for(cfg: &HopConfig, width: u32) -> Result<HogConfig> {
    cfg.validate()?;
    let cell_size = width as usize / cfg.cells;
    if cell_size == 0 {
        return Err(Error::input(format!(
            "{} grid cells do not fit a {width}-px wide image",
            cfg.cells
        )));
    }
    Ok(HogConfig {
        cell_size,
        bins: cfg.bins(),
    })
}

/// Length of one layer block for images of the given size.
pub fn layer_dimension(cfg: &HopConfig, width: u32, height: u32) -> Result<usize> {
    let hog = hog_config_for(cfg, width)?;
    Ok(cfg.dimension() + hog.dimension(width as usize, height as usize)? + 1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    /// Parts at the image origin (orientation forced to 0).
    pub degenerate_orientations: usize,
    /// Parts outside the image rectangle, ignored by the histograms.
    pub outside_parts: usize,
    /// Parts left out of the entropy graph.
    pub excluded_graph_nodes: usize,
}

impl std::ops::AddAssign for FeatureDiagnostics {
    fn add_assign(&mut self, o: Self) {
        self.degenerate_orientations += o.degenerate_orientations;
        self.outside_parts += o.outside_parts;
        self.excluded_graph_nodes += o.excluded_graph_nodes;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatureVector {
    pub layer: u32,
    pub hop: Vec<f64>,
    pub hog: Vec<f64>,
    pub entropy: f64,
    pub diagnostics: FeatureDiagnostics,
}

impl LayerFeatureVector {
    pub fn len(&self) -> usize {
        self.hop.len() + self.hog.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.hop);
        v.extend_from_slice(&self.hog);
        v.push(self.entropy);
        v
    }
}

pub fn layer_feature_vector(record: &ImageRecord, layer: u32, cfg: &HopConfig) -> Result<LayerFeatureVector> {
    if layer == 0 {
        return Err(Error::input("layer indices start at 1"));
    }
    let hog_cfg = hog_config_for(cfg, record.width)?;
    let hop = hop_features(record.parts_at(layer), cfg, record.width, record.height);
    let hog = part_hog_features(record.parts_at(layer), record.width, record.height, &hog_cfg)?;
    let graph = part_graph_weights(record.parts_at(layer));
    let entropy = von_neumann_entropy(&graph)?;
    Ok(LayerFeatureVector {
        layer,
        hop: hop.values,
        hog,
        entropy,
        diagnostics: FeatureDiagnostics {
            degenerate_orientations: hop.degenerate,
            outside_parts: hop.outside,
            excluded_graph_nodes: graph.excluded,
        },
    })
}

/// Contiguous column ranges, one per layer.
pub fn layer_groups(num_layers: usize, dim: usize) -> Vec<Range<usize>> {
    (0..num_layers).map(|l| l * dim..(l + 1) * dim).collect()
}

/// Unstandardized features for a list of records.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Array2<f64>,
    pub groups: Vec<Range<usize>>,
    pub image_ids: Vec<String>,
    pub diagnostics: FeatureDiagnostics,
}

/// Concatenated features of layers `1..=num_layers` for one record.
pub fn record_features(
    record: &ImageRecord,
    num_layers: u32,
    cfg: &HopConfig,
) -> Result<(Vec<f64>, FeatureDiagnostics)> {
    let mut row = Vec::new();
    let mut diag = FeatureDiagnostics::default();
    for layer in 1..=num_layers {
        let f = layer_feature_vector(record, layer, cfg)?;
        diag += f.diagnostics;
        row.extend(f.to_vec());
    }
    Ok((row, diag))
}

/// Extracts features of every record in parallel; rows keep record order.
pub fn extract_features(records: &[ImageRecord], num_layers: u32, cfg: &HopConfig) -> Result<FeatureTable> {
    if num_layers == 0 {
        return Err(Error::input("at least one layer is required"));
    }
    let Some(first) = records.first() else {
        return Err(Error::input("no records to extract features from"));
    };
    let dim = layer_dimension(cfg, first.width, first.height)?;
    let per_record: Vec<(Vec<f64>, FeatureDiagnostics)> = records
        .par_iter()
        .map(|r| record_features(r, num_layers, cfg))
        .collect::<Result<_>>()?;
    let width = dim * num_layers as usize;
    let mut rows = Array2::<f64>::zeros((records.len(), width));
    let mut diagnostics = FeatureDiagnostics::default();
    for (i, ((row, diag), rec)) in per_record.into_iter().zip(records).enumerate() {
        if row.len() != width {
            return Err(Error::input(format!(
                "image {} yields {} features, expected {width} (image sizes differ?)",
                rec.image_id,
                row.len()
            )));
        }
        rows.row_mut(i).assign(&ArrayView1::from(&row));
        diagnostics += diag;
    }
    Ok(FeatureTable {
        rows,
        groups: layer_groups(num_layers as usize, dim),
        image_ids: records.iter().map(|r| r.image_id.clone()).collect(),
        diagnostics,
    })
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Fit on the given rows. Columns that are constant over those rows keep
    /// scale 1, so they standardize to exactly zero.
    pub fn fit(rows: &Array2<f64>, fit_rows: &[usize]) -> Result<Self> {
        if fit_rows.is_empty() {
            return Err(Error::input("standardization needs at least one row"));
        }
        let sub = rows.select(Axis(0), fit_rows);
        let n = fit_rows.len() as f64;
        let means: Vec<f64> = sub.mean_axis(Axis(0)).unwrap().to_vec();
        let scales = sub
            .columns()
            .into_iter()
            .zip(&means)
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd <= 1e-12 * m.abs().max(1.0) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardization { means, scales })
    }

    pub fn identity(dim: usize) -> Self {
        Standardization {
            means: vec![0.0; dim],
            scales: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check(raw.len())?;
        Ok(raw
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn invert(&self, standardized: &[f64]) -> Result<Vec<f64>> {
        self.check(standardized.len())?;
        Ok(standardized
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    pub fn apply_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(rows.ncols())?;
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.scales) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::input(format!(
                "feature vector has {len} entries, standardization expects {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Standardized N x (L D) matrix with its layer groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDesignMatrix {
    pub matrix: Array2<f64>,
    pub groups: Vec<Range<usize>>,
    pub standardization: Standardization,
}

impl GroupedDesignMatrix {
    /// Wrap an already-standardized matrix.
    pub fn new(matrix: Array2<f64>, groups: Vec<Range<usize>>) -> Result<Self> {
        check_groups(&groups, matrix.ncols())?;
        let dim = matrix.ncols();
        Ok(GroupedDesignMatrix {
            matrix,
            groups,
            standardization: Standardization::identity(dim),
        })
    }

    /// Standardize `table` with statistics of `train_rows` only.
    pub fn from_table(table: &FeatureTable, train_rows: &[usize]) -> Result<Self> {
        check_groups(&table.groups, table.rows.ncols())?;
        let standardization = Standardization::fit(&table.rows, train_rows)?;
        Ok(GroupedDesignMatrix {
            matrix: standardization.apply_rows(&table.rows)?,
            groups: table.groups.clone(),
            standardization,
        })
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Restrict to a subset of rows (standardization record is kept).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        GroupedDesignMatrix {
            matrix: self.matrix.select(Axis(0), rows),
            groups: self.groups.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Keep only the given groups, renumbering their columns contiguously.
    pub fn select_groups(&self, keep: &[usize]) -> Result<Self> {
        let mut cols = Vec::new();
        let mut groups = Vec::new();
        for &g in keep {
            let r = self
                .groups
                .get(g)
                .ok_or_else(|| Error::input(format!("no group {g}")))?
                .clone();
            let start = cols.len();
            cols.extend(r);
            groups.push(start..cols.len());
        }
        Ok(GroupedDesignMatrix {
            matrix: self.matrix.select(Axis(1), &cols),
            groups,
            standardization: Standardization {
                means: cols.iter().map(|&c| self.standardization.means[c]).collect(),
                scales: cols.iter().map(|&c| self.standardization.scales[c]).collect(),
            },
        })
    }
}

pub fn check_groups(groups: &[Range<usize>], ncols: usize) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::input("design matrix has no groups"));
    }
    let mut next = 0;
    for g in groups {
        if g.start != next || g.end <= g.start {
            return Err(Error::input(format!(
                "groups must partition the columns contiguously; got {g:?} at column {next}"
            )));
        }
        next = g.end;
    }
    if next != ncols {
        return Err(Error::input(format!("groups cover {next} columns, matrix has {ncols}")));
    }
    Ok(())
}

/// Extract features for all records and standardize on the training rows.
pub fn build_design_matrix(
    records: &[ImageRecord],
    num_layers: u32,
    train_rows: &[usize],
    cfg: &HopConfig,
) -> Result<GroupedDesignMatrix> {
    let table = extract_features(records, num_layers, cfg)?;
    GroupedDesignMatrix::from_table(&table, train_rows)
}
