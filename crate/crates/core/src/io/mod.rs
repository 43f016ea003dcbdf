//! On-disk formats: JSON Lines part files, dataset manifests, PGM rasters,
//! and a stand-in layer-1 edge detector for raw grayscale images.
//!
//! A part file holds one part realization per line:
//!
//! ```text
//! {"image_id":"cup-01_000","object_id":"cup-01","category":1,"pose_deg":0,
//!  "layer":1,"part_id":3,"x":-4.5,"y":2.0,"score":0.8,"img_w":64,"img_h":64}
//! ```
//!
//! Lines without the part fields (`layer`, `part_id`, `x`, `y`, `score`)
//! declare an image with no detections, so that empty images survive a
//! round trip.

pub mod detect;
pub mod pgm;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{CategoryLabel, DatasetManifest, ImageRecord, PartRealization, PoseLabel, Split};

pub use detect::{detect_layer1, oriented_kernels, response_maps, EdgeDetectorConfig};
pub use pgm::{read_pgm, write_pgm};

const IMAGE_FIELDS: [&str; 6] = ["image_id", "object_id", "category", "pose_deg", "img_w", "img_h"];
const PART_FIELDS: [&str; 5] = ["layer", "part_id", "x", "y", "score"];

/// 17 significant digits: enough to round-trip any f64.
fn fmt_f64(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn image_prefix(r: &ImageRecord) -> String {
    let mut s = String::with_capacity(128);
    let _ = write!(
        s,
        "{{\"image_id\":{},\"object_id\":{},\"category\":{},\"pose_deg\":",
        json_str(&r.image_id),
        json_str(&r.object_id),
        r.category.get()
    );
    fmt_f64(&mut s, r.pose.degrees());
    s
}

/// Serialize records as JSON Lines (LF endings, fixed key order).
pub fn parts_to_string(records: &[ImageRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let prefix = image_prefix(r);
        let suffix = format!(",\"img_w\":{},\"img_h\":{}}}\n", r.width, r.height);
        if r.parts.is_empty() {
            out.push_str(&prefix);
            out.push_str(&suffix);
            continue;
        }
        for p in &r.parts {
            out.push_str(&prefix);
            let _ = write!(out, ",\"layer\":{},\"part_id\":{},\"x\":", p.layer, p.part_id);
            fmt_f64(&mut out, p.x);
            out.push_str(",\"y\":");
            fmt_f64(&mut out, p.y);
            out.push_str(",\"score\":");
            fmt_f64(&mut out, p.score);
            out.push_str(&suffix);
        }
    }
    out
}

pub fn write_parts(records: &[ImageRecord], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(parts_to_string(records).as_bytes())?;
    f.flush()?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn get_u64(obj: &Map<String, Value>, key: &str, line: usize) -> Result<u64> {
    obj.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err(line, format!("field {key:?} must be a non-negative integer")))
}

fn get_u32(obj: &Map<String, Value>, key: &str, line: usize) -> Result<u32> {
    u32::try_from(get_u64(obj, key, line)?).map_err(|_| parse_err(line, format!("field {key:?} is out of range")))
}

fn get_f64(obj: &Map<String, Value>, key: &str, line: usize) -> Result<f64> {
    obj.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| parse_err(line, format!("field {key:?} must be a number")))
}

fn get_str(obj: &Map<String, Value>, key: &str, line: usize) -> Result<String> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| parse_err(line, format!("field {key:?} must be a string")))
}

struct Pending {
    line: usize,
    object_id: String,
    category: CategoryLabel,
    pose: PoseLabel,
    width: u32,
    height: u32,
    parts: Vec<PartRealization>,
}

/// Parse JSON Lines part data. Unknown fields are ignored with a warning;
/// any other problem is reported with its 1-based line number.
pub fn parse_parts(reader: impl BufRead) -> Result<Vec<ImageRecord>> {
    let mut order: Vec<String> = Vec::new();
    let mut images: HashMap<String, Pending> = HashMap::new();
    let mut warned = false;
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| parse_err(n, format!("invalid JSON: {e}")))?;
        let Value::Object(obj) = value else {
            return Err(parse_err(n, "expected a JSON object"));
        };
        if !warned {
            if let Some(k) = obj
                .keys()
                .find(|k| !IMAGE_FIELDS.contains(&k.as_str()) && !PART_FIELDS.contains(&k.as_str()))
            {
                log::warn!("line {n}: ignoring unknown field {k:?} (further warnings suppressed)");
                warned = true;
            }
        }
        let image_id = get_str(&obj, "image_id", n)?;
        let object_id = get_str(&obj, "object_id", n)?;
        let category = CategoryLabel::new(get_u32(&obj, "category", n)?).map_err(|e| parse_err(n, e.to_string()))?;
        let pose = PoseLabel::new(get_f64(&obj, "pose_deg", n)?).map_err(|e| parse_err(n, e.to_string()))?;
        let width = get_u32(&obj, "img_w", n)?;
        let height = get_u32(&obj, "img_h", n)?;
        let present = PART_FIELDS.iter().filter(|k| obj.contains_key(**k)).count();
        let part = match present {
            0 => None,
            5 => {
                let layer = get_u32(&obj, "layer", n)?;
                if layer == 0 {
                    return Err(parse_err(n, "layer indices start at 1"));
                }
                let score = get_f64(&obj, "score", n)?;
                if score < 0.0 {
                    return Err(parse_err(n, "score must be non-negative"));
                }
                Some(PartRealization {
                    image_id: image_id.clone(),
                    layer,
                    part_id: get_u32(&obj, "part_id", n)?,
                    x: get_f64(&obj, "x", n)?,
                    y: get_f64(&obj, "y", n)?,
                    score,
                })
            }
            _ => return Err(parse_err(n, "part fields must be all present or all absent")),
        };
        match images.get_mut(&image_id) {
            Some(p) => {
                if p.object_id != object_id
                    || p.category != category
                    || p.pose != pose
                    || p.width != width
                    || p.height != height
                {
                    return Err(parse_err(
                        n,
                        format!("image {image_id} disagrees with its first line {}", p.line),
                    ));
                }
                p.parts.extend(part);
            }
            None => {
                order.push(image_id.clone());
                images.insert(
                    image_id,
                    Pending {
                        line: n,
                        object_id,
                        category,
                        pose,
                        width,
                        height,
                        parts: part.into_iter().collect(),
                    },
                );
            }
        }
    }
    order
        .into_iter()
        .map(|id| {
            let p = images.remove(&id).expect("every listed image is pending");
            ImageRecord::new(id, p.object_id, p.category, p.pose, p.width, p.height, p.parts)
                .map_err(|e| parse_err(p.line, e.to_string()))
        })
        .collect()
}

pub fn read_parts(path: &Path) -> Result<Vec<ImageRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?;
    parse_parts(BufReader::new(f))
}

/// Manifest document as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    #[serde(rename = "L")]
    pub num_layers: u32,
    pub categories: Vec<String>,
    /// Part files, relative to the manifest's directory.
    pub records: Vec<String>,
    #[serde(default)]
    pub splits: Split,
}

/// Load a manifest and every part file it lists.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    let mf: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for rel in &mf.records {
        let p: PathBuf = base.join(rel);
        records.extend(read_parts(&p).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", p.display()),
            },
            other => other,
        })?);
    }
    DatasetManifest::new(mf.num_layers, mf.categories, records, mf.splits)
}

/// Write `parts.jsonl` and `manifest.json` into `dir`; returns the manifest path.
pub fn write_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    write_parts(&manifest.records, &dir.join("parts.jsonl"))?;
    let mf = ManifestFile {
        num_layers: manifest.num_layers,
        categories: manifest.categories.clone(),
        records: vec!["parts.jsonl".into()],
        splits: manifest.split.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&mf)? + "\n")?;
    Ok(path)
}

/// SHA-256 over the canonical serialization of a dataset.
pub fn manifest_digest(manifest: &DatasetManifest) -> String {
    let mut h = Sha256::new();
    h.update(format!("L={}\n", manifest.num_layers));
    for c in &manifest.categories {
        h.update(json_str(c));
        h.update("\n");
    }
    h.update(serde_json::to_string(&manifest.split).expect("split serializes"));
    h.update("\n");
    h.update(parts_to_string(&manifest.records));
    hex::encode(h.finalize())
}

/// SHA-256 of arbitrary bytes, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
