//! Seeded synthetic turntable data: lathe-like objects are rotated about the
//! vertical axis, projected orthographically and summarized into a part
//! hierarchy whose layer `l` merges runs of `2^(l-1)` neighboring anchors.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{wrap_degrees, CategoryLabel, DatasetManifest, ImageRecord, PartRealization, PoseLabel, Split};

const BUILTIN: [(&str, &str); 4] = [
    ("cup", include_str!("../templates/cup.json")),
    ("ball", include_str!("../templates/ball.json")),
    ("bottle", include_str!("../templates/bottle.json")),
    ("teapot", include_str!("../templates/teapot.json")),
];

/// Names of the templates compiled into the library.
pub fn builtin_template_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_template(name: &str) -> Result<ObjectTemplate> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::input(format!("no built-in template named {name:?}")))?;
    ObjectTemplate::from_json(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ring {
    pub radius: f64,
    pub height: f64,
    pub count: usize,
    #[serde(default)]
    pub phase_deg: f64,
    /// Tilt of the surface normal above the horizontal plane.
    #[serde(default)]
    pub normal_elevation_deg: f64,
}

/// A single surface point, culled like the ring anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mark {
    pub azimuth_deg: f64,
    pub height: f64,
    pub radius: f64,
    #[serde(default)]
    pub normal_elevation_deg: f64,
    /// Highest layer the mark reaches; small details do not compose into
    /// large parts. Unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_layer: Option<u32>,
}

/// Points seen only while the pose lies in `arc_deg` (inclusive, may wrap).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureTemplate {
    pub name: String,
    pub arc_deg: [f64; 2],
    pub azimuth_deg: f64,
    /// (radial distance, height) pairs in the half-plane at `azimuth_deg`.
    pub profile: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variation {
    /// Relative half-range of the per-object radial scale.
    pub radius: f64,
    pub height: f64,
}

/// Category template as stored in the JSON template files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectTemplate {
    pub name: String,
    pub rings: Vec<Ring>,
    #[serde(default)]
    pub marks: Vec<Mark>,
    #[serde(default)]
    pub features: Vec<FeatureTemplate>,
    pub variation: Variation,
    pub jitter_px: f64,
}

/// One anchor point with an optional outward normal; anchors without a
/// normal are never culled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position: [f64; 3],
    pub normal: Option<[f64; 3]>,
    /// Anchors of one component (a ring, a mark) are merged together at
    /// higher layers, never across components.
    pub component: usize,
    /// Highest layer at which the anchor's component emits parts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_layer: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryFeature {
    pub name: String,
    pub points: Vec<[f64; 3]>,
    pub arc_deg: [f64; 2],
}

/// A concrete object: the template after per-object variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObjectSpec {
    pub category: String,
    pub object_id: String,
    pub anchors: Vec<Anchor>,
    pub features: Vec<AsymmetryFeature>,
    /// Positional jitter std in pixels, drawn independently per layer.
    pub jitter_px: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurntableSpec {
    pub poses: Vec<PoseLabel>,
    pub width: u32,
    pub height: u32,
    /// Camera elevation above the turntable plane.
    pub elevation_deg: f64,
    pub px_per_unit: f64,
    pub num_layers: u32,
}

impl Default for TurntableSpec {
    fn default() -> Self {
        TurntableSpec {
            poses: crate::types::turntable_poses(),
            width: 64,
            height: 64,
            elevation_deg: 20.0,
            px_per_unit: 1.0,
            num_layers: 4,
        }
    }
}

impl TurntableSpec {
    /// Poses `0, step, 2 step, ...` below 360.
    pub fn with_pose_step(mut self, step_deg: f64) -> Result<Self> {
        if !(step_deg > 0.0 && step_deg <= 180.0) {
            return Err(Error::input(format!("pose step {step_deg} outside (0, 180]")));
        }
        let n = (360.0 / step_deg).round() as usize;
        self.poses = (0..n)
            .map(|i| PoseLabel::new(i as f64 * step_deg))
            .collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.len() < 2 {
            return Err(Error::input("a turntable needs at least two poses"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::input("synthetic images must be at least 16x16"));
        }
        if self.num_layers == 0 {
            return Err(Error::input("at least one layer is required"));
        }
        if !(self.px_per_unit > 0.0) || !self.elevation_deg.is_finite() {
            return Err(Error::input("invalid camera parameters"));
        }
        Ok(())
    }
}

fn unit_normal(azimuth: f64, elevation: f64) -> [f64; 3] {
    [
        azimuth.cos() * elevation.cos(),
        elevation.sin(),
        azimuth.sin() * elevation.cos(),
    ]
}

impl ObjectTemplate {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: ObjectTemplate = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let anchors: usize = self.rings.iter().map(|r| r.count).sum::<usize>() + self.marks.len();
        if anchors < 4 {
            return Err(Error::input(format!(
                "template {} has {anchors} anchors, at least 4 are needed",
                self.name
            )));
        }
        for f in &self.features {
            if f.arc_deg.iter().any(|a| !(0.0..360.0).contains(a)) {
                return Err(Error::input(format!(
                    "feature {} of {}: arc must lie in [0, 360)",
                    f.name, self.name
                )));
            }
        }
        if self.jitter_px < 0.0 || self.variation.radius < 0.0 || self.variation.height < 0.0 {
            return Err(Error::input(format!("template {}: negative noise level", self.name)));
        }
        Ok(())
    }

    /// Draw one object of this category.
    pub fn instantiate(&self, object_id: impl Into<String>, seed: u64) -> SyntheticObjectSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rs = 1.0 + self.variation.radius * rng.random_range(-1.0..=1.0);
        let hs = 1.0 + self.variation.height * rng.random_range(-1.0..=1.0);
        let mut anchors = Vec::new();
        for (c, ring) in self.rings.iter().enumerate() {
            let elev = ring.normal_elevation_deg.to_radians();
            for k in 0..ring.count {
                let az = (ring.phase_deg + 360.0 * k as f64 / ring.count as f64).to_radians();
                anchors.push(Anchor {
                    position: [
                        rs * ring.radius * az.cos(),
                        hs * ring.height,
                        rs * ring.radius * az.sin(),
                    ],
                    normal: Some(unit_normal(az, elev)),
                    component: c,
                    max_layer: None,
                });
            }
        }
        for (m, mark) in self.marks.iter().enumerate() {
            let az = mark.azimuth_deg.to_radians();
            anchors.push(Anchor {
                position: [
                    rs * mark.radius * az.cos(),
                    hs * mark.height,
                    rs * mark.radius * az.sin(),
                ],
                normal: Some(unit_normal(az, mark.normal_elevation_deg.to_radians())),
                component: self.rings.len() + m,
                max_layer: mark.max_layer,
            });
        }
        let features = self
            .features
            .iter()
            .map(|f| {
                let az = f.azimuth_deg.to_radians();
                AsymmetryFeature {
                    name: f.name.clone(),
                    points: f
                        .profile
                        .iter()
                        .map(|&[r, h]| [rs * r * az.cos(), hs * h, rs * r * az.sin()])
                        .collect(),
                    arc_deg: f.arc_deg,
                }
            })
            .collect();
        SyntheticObjectSpec {
            category: self.name.clone(),
            object_id: object_id.into(),
            anchors,
            features,
            jitter_px: self.jitter_px,
            seed,
        }
    }
}

/// Whether `pose` lies on the arc from `arc[0]` counter-clockwise to `arc[1]`.
pub fn in_arc(pose: f64, arc: [f64; 2]) -> bool {
    let p = wrap_degrees(pose);
    let [a, b] = arc;
    if a <= b {
        a <= p && p <= b
    } else {
        p >= a || p <= b
    }
}

/// Camera-frame coordinates of a point after the turntable rotation:
/// `(x, y, depth)` with depth growing toward the camera.
pub fn camera_frame(p: [f64; 3], pose_deg: f64, elevation_deg: f64) -> [f64; 3] {
    let (st, ct) = pose_deg.to_radians().sin_cos();
    let (se, ce) = elevation_deg.to_radians().sin_cos();
    let x = p[0] * ct + p[2] * st;
    let z = -p[0] * st + p[2] * ct;
    [x, p[1] * ce - z * se, p[1] * se + z * ce]
}

/// Image-centered position (y up) of a 3-D point.
pub fn project(p: [f64; 3], pose_deg: f64, tt: &TurntableSpec) -> [f64; 2] {
    let c = camera_frame(p, pose_deg, tt.elevation_deg);
    [tt.px_per_unit * c[0], tt.px_per_unit * c[1]]
}

struct Visible {
    anchor: usize,
    pos: [f64; 2],
    score: f64,
}

/// Visible points of each component, each list starting right after a
/// hidden point so that merged runs stay spatially contiguous.
fn visible_components(obj: &SyntheticObjectSpec, pose: f64, tt: &TurntableSpec) -> Vec<(u32, Vec<Visible>)> {
    let mut by_component: BTreeMap<usize, (u32, Vec<(usize, Option<Visible>)>)> = BTreeMap::new();
    for (i, a) in obj.anchors.iter().enumerate() {
        let facing = match a.normal {
            Some(n) => camera_frame(n, pose, tt.elevation_deg)[2],
            None => 1.0,
        };
        let v = (facing > 0.0).then(|| Visible {
            anchor: i,
            pos: project(a.position, pose, tt),
            score: facing,
        });
        let entry = by_component.entry(a.component).or_insert((u32::MAX, Vec::new()));
        entry.0 = entry.0.min(a.max_layer.unwrap_or(u32::MAX));
        entry.1.push((i, v));
    }
    let mut out: Vec<(u32, Vec<Visible>)> = by_component
        .into_values()
        .map(|(top, mut list)| {
            if let Some(h) = list.iter().position(|(_, v)| v.is_none()) {
                list.rotate_left(h + 1);
            }
            (top, list.into_iter().filter_map(|(_, v)| v).collect())
        })
        .collect();
    let mut next = obj.anchors.len();
    for f in &obj.features {
        let shown = in_arc(pose, f.arc_deg);
        let mut comp = Vec::new();
        for p in &f.points {
            if shown {
                comp.push(Visible {
                    anchor: next,
                    pos: project(*p, pose, tt),
                    score: 1.0,
                });
            }
            next += 1;
        }
        out.push((u32::MAX, comp));
    }
    out
}

/// Random stream for one (object, pose, layer) triple.
fn jitter_rng(seed: u64, pose_index: usize, layer: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((pose_index as u64) << 8) | layer as u64);
    rng
}

/// Image id used by the generator.
pub fn image_id(object_id: &str, pose: PoseLabel) -> String {
    format!("{object_id}_{:03}", pose.degrees().round() as i64)
}

/// Render one view of an object as a layered part record.
pub fn render_parts(
    obj: &SyntheticObjectSpec,
    category: CategoryLabel,
    pose: PoseLabel,
    tt: &TurntableSpec,
) -> Result<ImageRecord> {
    tt.validate()?;
    let pose_index = tt
        .poses
        .iter()
        .position(|p| *p == pose)
        .ok_or_else(|| Error::input(format!("pose {} is not on the turntable", pose.degrees())))?;
    let comps = visible_components(obj, pose.degrees(), tt);
    let id = image_id(&obj.object_id, pose);
    let (hw, hh) = (tt.width as f64 / 2.0, tt.height as f64 / 2.0);
    let mut parts = Vec::new();
    for layer in 1..=tt.num_layers {
        let run = 1usize << (layer - 1).min(30);
        let mut rng = jitter_rng(obj.seed, pose_index, layer);
        let noise = (obj.jitter_px > 0.0)
            .then(|| Normal::new(0.0, obj.jitter_px))
            .transpose()
            .map_err(|e| Error::input(format!("jitter: {e}")))?;
        for (_, comp) in comps.iter().filter(|(top, _)| layer <= *top) {
            for chunk in comp.chunks(run) {
                let n = chunk.len() as f64;
                let mut x = chunk.iter().map(|v| v.pos[0]).sum::<f64>() / n;
                let mut y = chunk.iter().map(|v| v.pos[1]).sum::<f64>() / n;
                if let Some(d) = &noise {
                    x += d.sample(&mut rng);
                    y += d.sample(&mut rng);
                }
                parts.push(PartRealization {
                    image_id: id.clone(),
                    layer,
                    part_id: chunk[0].anchor as u32,
                    x,
                    y,
                    score: chunk.iter().map(|v| v.score).sum::<f64>() / n,
                });
            }
        }
    }
    let inside = parts.iter().filter(|p| p.x.abs() < hw && p.y.abs() < hh).count();
    if inside == 0 {
        return Err(Error::input(format!(
            "object {} projects entirely outside the {}x{} frame at pose {}",
            obj.object_id,
            tt.width,
            tt.height,
            pose.degrees()
        )));
    }
    ImageRecord::new(id, obj.object_id.clone(), category, pose, tt.width, tt.height, parts)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of object `object` of category `category`.
pub fn object_seed(seed: u64, category: usize, object: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ category as u64) ^ object as u64)
}

/// Object id `<category>-<index>`, 1-based.
pub fn object_id(category: &str, index: usize) -> String {
    format!("{category}-{:02}", index + 1)
}

/// Every pose of `objects_per_category[c]` objects of each category. The
/// default split keeps each category's last object for testing.
pub fn generate_dataset(
    templates: &[ObjectTemplate],
    objects_per_category: &[usize],
    tt: &TurntableSpec,
    seed: u64,
) -> Result<DatasetManifest> {
    if templates.is_empty() {
        return Err(Error::input("at least one category template is required"));
    }
    if objects_per_category.len() != templates.len() {
        return Err(Error::input(format!(
            "{} object counts for {} categories",
            objects_per_category.len(),
            templates.len()
        )));
    }
    tt.validate()?;
    let mut objects = Vec::new();
    let mut ids = Vec::new();
    for (c, (t, &n)) in templates.iter().zip(objects_per_category).enumerate() {
        t.validate()?;
        ids.push((0..n).map(|o| object_id(&t.name, o)).collect::<Vec<_>>());
        for o in 0..n {
            let id = object_id(&t.name, o);
            objects.push((
                CategoryLabel::new(c as u32 + 1)?,
                t.instantiate(id, object_seed(seed, c, o)),
            ));
        }
    }
    let split = hold_out_last(&ids);
    let jobs: Vec<(usize, PoseLabel)> = (0..objects.len())
        .flat_map(|o| tt.poses.iter().map(move |&p| (o, p)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(o, p)| render_parts(&objects[o].1, objects[o].0, p, tt))
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(
        tt.num_layers,
        templates.iter().map(|t| t.name.clone()).collect(),
        records,
        split,
    )
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Built-in template names or paths to template JSON files.
    pub templates: Vec<String>,
    /// Objects per category; a single entry applies to every category.
    pub objects_per_category: Vec<usize>,
    #[serde(default = "default_pose_step")]
    pub pose_step_deg: f64,
    #[serde(default = "default_size")]
    pub width: u32,
    #[serde(default = "default_size")]
    pub height: u32,
    #[serde(default = "default_elevation")]
    pub elevation_deg: f64,
    #[serde(default = "default_scale")]
    pub px_per_unit: f64,
    #[serde(default = "default_layers")]
    pub num_layers: u32,
    /// Overrides the templates' jitter when set.
    #[serde(default)]
    pub jitter_px: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_pose_step() -> f64 {
    5.0
}
fn default_size() -> u32 {
    64
}
fn default_elevation() -> f64 {
    20.0
}
fn default_scale() -> f64 {
    1.0
}
fn default_layers() -> u32 {
    4
}

impl SynthConfig {
    pub fn new(templates: &[&str], objects_per_category: usize, seed: u64) -> Self {
        SynthConfig {
            templates: templates.iter().map(|t| t.to_string()).collect(),
            objects_per_category: vec![objects_per_category],
            pose_step_deg: default_pose_step(),
            width: default_size(),
            height: default_size(),
            elevation_deg: default_elevation(),
            px_per_unit: default_scale(),
            num_layers: default_layers(),
            jitter_px: None,
            seed,
        }
    }

    pub fn turntable(&self) -> Result<TurntableSpec> {
        let tt = TurntableSpec {
            poses: Vec::new(),
            width: self.width,
            height: self.height,
            elevation_deg: self.elevation_deg,
            px_per_unit: self.px_per_unit,
            num_layers: self.num_layers,
        }
        .with_pose_step(self.pose_step_deg)?;
        tt.validate()?;
        Ok(tt)
    }

    /// Resolve template names; relative paths are taken from `base`.
    pub fn load_templates(&self, base: &std::path::Path) -> Result<Vec<ObjectTemplate>> {
        if self.templates.is_empty() {
            return Err(Error::input("at least one category template is required"));
        }
        self.templates
            .iter()
            .map(|t| {
                let mut tpl = if builtin_template_names().contains(&t.as_str()) {
                    builtin_template(t)?
                } else {
                    let path = base.join(t);
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        Error::input(format!("template {t:?}: not built in and {}: {e}", path.display()))
                    })?;
                    ObjectTemplate::from_json(&text)?
                };
                if let Some(j) = self.jitter_px {
                    tpl.jitter_px = j;
                }
                Ok(tpl)
            })
            .collect()
    }

    pub fn object_counts(&self) -> Result<Vec<usize>> {
        match self.objects_per_category.as_slice() {
            [n] => Ok(vec![*n; self.templates.len()]),
            v if v.len() == self.templates.len() => Ok(v.to_vec()),
            v => Err(Error::input(format!(
                "{} object counts for {} templates",
                v.len(),
                self.templates.len()
            ))),
        }
    }

    pub fn generate(&self, base: &std::path::Path) -> Result<DatasetManifest> {
        let templates = self.load_templates(base)?;
        generate_dataset(&templates, &self.object_counts()?, &self.turntable()?, self.seed)
    }
}

/// Default split: the last object of every category with at least two
/// objects is held out for testing.
pub fn hold_out_last(objects_by_category: &[Vec<String>]) -> Split {
    let mut split = Split::default();
    for objs in objects_by_category {
        for (o, id) in objs.iter().enumerate() {
            if o + 1 == objs.len() && objs.len() > 1 {
                split.test.push(id.clone());
            } else {
                split.train.push(id.clone());
            }
        }
    }
    split
}

/// Object ids of each category, in first-appearance order.
pub fn objects_by_category(manifest: &DatasetManifest) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new(); manifest.categories.len()];
    for r in &manifest.records {
        let list = &mut out[r.category.index()];
        if !list.contains(&r.object_id) {
            list.push(r.object_id.clone());
        }
    }
    out
}

/// Random object-wise split: `n_test` objects of each listed category for
/// testing and `n_train` of the remaining ones for training (`None` = all
/// remaining).
pub fn object_split(
    manifest: &DatasetManifest,
    categories: &[usize],
    n_train: Option<usize>,
    n_test: usize,
    rng: &mut impl Rng,
) -> Result<Split> {
    let pools = objects_by_category(manifest);
    let mut split = Split::default();
    for &c in categories {
        let mut pool = pools
            .get(c)
            .ok_or_else(|| Error::input(format!("no category with index {c}")))?
            .clone();
        let want = n_train.unwrap_or(pool.len().saturating_sub(n_test)) + n_test;
        if pool.len() < want || pool.len() <= n_test {
            return Err(Error::input(format!(
                "category {} has {} objects, {} train + {n_test} test requested",
                manifest.categories[c],
                pool.len(),
                n_train.map_or("all".to_string(), |n| n.to_string())
            )));
        }
        pool.shuffle(rng);
        split.test.extend(pool.drain(..n_test));
        split.train.extend(pool.into_iter().take(want - n_test));
    }
    split.validate()?;
    Ok(split)
}
