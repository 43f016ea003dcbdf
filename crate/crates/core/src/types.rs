//! Domain types shared by every stage of the pipeline.
//!
//! Positions are stored in the image-centered frame: the origin sits at the
//! image center and the y-axis points up, so that `atan2(y, x)` yields the
//! usual counter-clockwise orientation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One detected part at a given layer of the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRealization {
    pub image_id: String,
    pub layer: u32,
    pub part_id: u32,
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

impl PartRealization {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Turntable orientation in degrees, normalized to `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseLabel(f64);

impl PoseLabel {
    pub fn new(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::input(format!("pose {theta} is not finite")));
        }
        Ok(PoseLabel(wrap_degrees(theta)))
    }

    pub fn degrees(self) -> f64 {
        self.0
    }
}

/// Reduce an angle in degrees to `[0, 360)`.
pub fn wrap_degrees(theta: f64) -> f64 {
    let w = theta.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// The default turntable pose set {0, 5, ..., 355}.
pub fn turntable_poses() -> Vec<PoseLabel> {
    (0..72).map(|i| PoseLabel(5.0 * i as f64)).collect()
}

/// 1-based category index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryLabel(u32);

impl CategoryLabel {
    pub fn new(c: u32) -> Result<Self> {
        if c == 0 {
            return Err(Error::input("category labels are 1-based"));
        }
        Ok(CategoryLabel(c))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// 0-based index for array addressing.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

/// All part realizations detected in one image, plus its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub object_id: String,
    pub category: CategoryLabel,
    pub pose: PoseLabel,
    pub width: u32,
    pub height: u32,
    /// Parts ordered by layer; within a layer the detection order is kept.
    pub parts: Vec<PartRealization>,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        object_id: impl Into<String>,
        category: CategoryLabel,
        pose: PoseLabel,
        width: u32,
        height: u32,
        mut parts: Vec<PartRealization>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if width == 0 || height == 0 {
            return Err(Error::input(format!("image {image_id} has zero size")));
        }
        for p in &parts {
            if p.image_id != image_id {
                return Err(Error::input(format!(
                    "part of image {} stored in record {image_id}",
                    p.image_id
                )));
            }
            if p.layer == 0 {
                return Err(Error::input(format!("image {image_id}: layer indices start at 1")));
            }
            if !(p.x.is_finite() && p.y.is_finite() && p.score.is_finite()) || p.score < 0.0 {
                return Err(Error::input(format!("image {image_id}: invalid part values")));
            }
        }
        // stable: keeps detection order inside each layer
        parts.sort_by_key(|p| p.layer);
        Ok(ImageRecord {
            image_id,
            object_id: object_id.into(),
            category,
            pose,
            width,
            height,
            parts,
        })
    }

    pub fn parts_at(&self, layer: u32) -> impl Iterator<Item = &PartRealization> {
        self.parts.iter().filter(move |p| p.layer == layer)
    }

    pub fn count_at(&self, layer: u32) -> usize {
        self.parts_at(layer).count()
    }

    pub fn max_layer(&self) -> u32 {
        self.parts.iter().map(|p| p.layer).max().unwrap_or(0)
    }
}

/// Object-wise train/test split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<&str> = self.train.iter().map(String::as_str).collect();
        if let Some(shared) = self.test.iter().find(|o| train.contains(o.as_str())) {
            return Err(Error::input(format!(
                "object {shared} appears in both train and test splits"
            )));
        }
        Ok(())
    }
}

/// A complete dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub num_layers: u32,
    pub categories: Vec<String>,
    pub records: Vec<ImageRecord>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn new(num_layers: u32, categories: Vec<String>, records: Vec<ImageRecord>, split: Split) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::input("a dataset needs at least one layer"));
        }
        split.validate()?;
        for r in &records {
            if r.max_layer() > num_layers {
                return Err(Error::input(format!(
                    "image {} has parts at layer {} but the dataset declares {num_layers} layers",
                    r.image_id,
                    r.max_layer()
                )));
            }
            if r.category.index() >= categories.len() {
                return Err(Error::input(format!(
                    "image {} uses category {} of {}",
                    r.image_id,
                    r.category.get(),
                    categories.len()
                )));
            }
        }
        Ok(DatasetManifest {
            num_layers,
            categories,
            records,
            split,
        })
    }

    /// Distinct object ids in first-appearance order.
    pub fn object_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.object_id.as_str()) {
                out.push(r.object_id.clone());
            }
        }
        out
    }

    pub fn records_of<'a>(&'a self, objects: &'a [String]) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        self.records.iter().filter(move |r| objects.contains(&r.object_id))
    }
}

/// Pixel-grid position to image-centered coordinates (y up):
/// `x = col - W/2`, `y = H/2 - row - 1/2`.
pub fn to_centered_coords(col: u32, row: u32, width: u32, height: u32) -> Result<(f64, f64)> {
    if col >= width || row >= height {
        return Err(Error::input(format!(
            "pixel ({col}, {row}) outside {width}x{height} image"
        )));
    }
    let x = col as f64 - width as f64 / 2.0;
    let y = height as f64 / 2.0 - row as f64 - 0.5;
    Ok((x, y))
}

/// Inverse of [`to_centered_coords`]; returns fractional pixel coordinates.
pub fn from_centered_coords(x: f64, y: f64, width: u32, height: u32) -> (f64, f64) {
    let col = x + width as f64 / 2.0;
    let row = height as f64 / 2.0 - 0.5 - y;
    (col, row)
}
