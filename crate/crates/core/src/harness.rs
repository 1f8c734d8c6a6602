//! Deterministic synthetic scenes: axis-aligned box objects in a box room,
//! rendered by exact ray casting from an orbit of cameras.
//!
//! Output is a [`SceneBundle`] (plus the analytic per-frame visibility and
//! the source object of every mask), so the whole pipeline can be driven
//! and checked without datasets or models. All randomness comes from the
//! spec seed; frame `i` draws from its own ChaCha stream so rendering can
//! run in parallel without changing a single byte.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Rotation3, Vector3};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{GroundTruthBox, GroundTruthVertexSet};
use crate::evidence::Aabb;
use crate::fragments::{CategoryMask, FrameInput, FramePresence};
use crate::geometry::{BinaryMask, CameraIntrinsics, CameraPose, DepthMap, Point};
use crate::pipeline::{ReferenceFrame, SceneBundle};
use crate::vocabulary::Category;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("object {index} ('{label}') is not inside the room")]
    ObjectOutsideRoom { index: usize, label: String },
    #[error("camera {frame} is inside object {index}")]
    CameraInsideObject { frame: usize, index: usize },
    #[error("camera {frame} is outside the room")]
    CameraOutsideRoom { frame: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Other names the object may be given; with the label they form its
    /// compatibility group.
    #[serde(default)]
    pub synonyms: Vec<String>,
}

impl ObjectSpec {
    pub fn aabb(&self) -> Aabb {
        Aabb { min: Point::from(self.min), max: Point::from(self.max) }
    }
}

/// Cameras evenly spaced on a horizontal circle around the room centre,
/// all looking at the centre at `target_height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraOrbit {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    #[serde(default = "default_target_height")]
    pub target_height: f64,
    /// Angle of the first camera, radians.
    #[serde(default)]
    pub phase: f64,
    /// Angular span covered by the cameras, degrees; 360 is a full orbit.
    #[serde(default = "default_arc")]
    pub arc_deg: f64,
}

fn default_arc() -> f64 {
    360.0
}

fn default_target_height() -> f64 {
    0.5
}

/// Similarity applied to the whole reconstruction: `x' = scale · Q x + t`
/// with `Q` a rotation of `yaw` radians about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDistortion {
    pub scale: f64,
    pub yaw: f64,
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub objects: Vec<ObjectSpec>,
    pub cameras: CameraOrbit,
    #[serde(default = "default_image")]
    pub width: usize,
    #[serde(default = "default_image")]
    pub height: usize,
    /// Horizontal field of view, degrees.
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default)]
    pub seed: u64,
    /// Labels per vocabulary line.
    #[serde(default = "default_k")]
    pub vocab_k: usize,
    /// Target spacing of ground-truth surface vertices, meters.
    #[serde(default = "default_spacing")]
    pub vertex_spacing: f64,
    /// When set, poses and depth are emitted in a distorted frame together
    /// with the true first-frame pose and depth as reference.
    #[serde(default)]
    pub estimated: Option<FrameDistortion>,
}

fn default_image() -> usize {
    64
}
fn default_fov() -> f64 {
    70.0
}
fn default_k() -> usize {
    5
}
fn default_spacing() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Chance that a mask's label is redrawn uniformly from its object's
    /// group (label plus synonyms).
    #[serde(default)]
    pub label_swap_p: f64,
    /// Standard deviation of additive depth noise, meters.
    #[serde(default)]
    pub depth_sigma: f64,
    /// `s_query` is drawn from `[1 − jitter, 1]`.
    #[serde(default)]
    pub confidence_jitter: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.label_swap_p) {
            return Err(HarnessError::InvalidNoise(format!("label_swap_p={} outside [0, 1]", self.label_swap_p)));
        }
        if !(self.depth_sigma >= 0.0 && self.depth_sigma.is_finite()) {
            return Err(HarnessError::InvalidNoise(format!("depth_sigma={} must be ≥ 0", self.depth_sigma)));
        }
        if !(0.0..=1.0).contains(&self.confidence_jitter) {
            return Err(HarnessError::InvalidNoise(format!(
                "confidence_jitter={} outside [0, 1]",
                self.confidence_jitter
            )));
        }
        Ok(())
    }
}

/// Spec file layout: a scene spec with an optional `noise` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpecFile {
    #[serde(flatten)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub bundle: SceneBundle,
    /// Visible pixels per (frame, object).
    pub visibility: Vec<Vec<usize>>,
    /// Source object of every emitted mask, per frame, aligned with
    /// `bundle.frames[i].masks`.
    pub mask_objects: Vec<Vec<usize>>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let room = Aabb::new(Point::from(self.room_min), Point::from(self.room_max))
            .ok_or_else(|| HarnessError::InvalidSpec("room min exceeds max".into()))?;
        if self.width == 0 || self.height == 0 {
            return Err(HarnessError::InvalidSpec("image size must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(HarnessError::InvalidSpec(format!("field of view {} outside (0, 180)", self.fov_deg)));
        }
        if self.vocab_k == 0 {
            return Err(HarnessError::InvalidSpec("vocab_k must be at least 1".into()));
        }
        if self.vertex_spacing.is_nan() || self.vertex_spacing <= 0.0 {
            return Err(HarnessError::InvalidSpec("vertex_spacing must be positive".into()));
        }
        if let Some(d) = &self.estimated {
            if !(d.scale > 0.0 && d.scale.is_finite()) {
                return Err(HarnessError::InvalidSpec(format!("distortion scale {}", d.scale)));
            }
        }
        for (index, o) in self.objects.iter().enumerate() {
            let inside = (0..3).all(|i| o.min[i] <= o.max[i] && room.min[i] <= o.min[i] && o.max[i] <= room.max[i]);
            if !inside {
                return Err(HarnessError::ObjectOutsideRoom { index, label: o.label.clone() });
            }
            if Category::canonicalize(&o.label).is_none() {
                return Err(HarnessError::InvalidSpec(format!("object {index} has an empty label")));
            }
        }
        for (frame, pose) in self.poses()?.iter().enumerate() {
            let c = pose.center();
            if !strictly_inside(&room, &c) {
                return Err(HarnessError::CameraOutsideRoom { frame });
            }
            if let Some(index) = self.objects.iter().position(|o| o.aabb().contains(&c)) {
                return Err(HarnessError::CameraInsideObject { frame, index });
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = (self.width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan();
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn poses(&self) -> Result<Vec<CameraPose>, HarnessError> {
        let o = &self.cameras;
        let cx = (self.room_min[0] + self.room_max[0]) / 2.0;
        let cy = (self.room_min[1] + self.room_max[1]) / 2.0;
        let target = Point::new(cx, cy, o.target_height);
        (0..o.count)
            .map(|i| {
                // a full circle spaces `count` views evenly; a partial arc
                // includes both end points
                let a = if o.arc_deg >= 360.0 {
                    o.phase + std::f64::consts::TAU * i as f64 / o.count as f64
                } else {
                    o.phase + o.arc_deg.to_radians() * i as f64 / (o.count.max(2) - 1) as f64
                };
                let eye = Point::new(cx + o.radius * a.cos(), cy + o.radius * a.sin(), o.height);
                CameraPose::look_at(&eye, &target, &Vector3::z())
                    .map_err(|e| HarnessError::InvalidSpec(format!("camera {i}: {e}")))
            })
            .collect()
    }

    fn room(&self) -> Aabb {
        Aabb { min: Point::from(self.room_min), max: Point::from(self.room_max) }
    }
}

fn strictly_inside(b: &Aabb, p: &Point) -> bool {
    (0..3).all(|i| b.min[i] < p[i] && p[i] < b.max[i])
}

/// Slab test. Returns the entry and exit ray parameters when the ray's line
/// meets the box with a non-empty parameter interval.
fn ray_box(origin: &Point, dir: &Vector3<f64>, b: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            if origin[i] < b.min[i] || origin[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let a = (b.min[i] - origin[i]) / dir[i];
        let c = (b.max[i] - origin[i]) / dir[i];
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1).then_some((t0, t1))
}

/// One rendered frame: z-depth per pixel and the object owning each pixel.
struct Render {
    depth: Vec<f64>,
    owner: Vec<Option<usize>>,
}

/// Casts one ray per pixel. The ray direction has unit camera-z, so the hit
/// parameter is the z-depth. Ties between objects go to the lower index.
fn render(spec: &SceneSpec, k: &CameraIntrinsics, pose: &CameraPose) -> Render {
    let origin = pose.center();
    let rt = pose.rotation.transpose();
    let room = spec.room();
    let boxes: Vec<Aabb> = spec.objects.iter().map(ObjectSpec::aabb).collect();
    let n = k.width * k.height;
    let mut depth = Vec::with_capacity(n);
    let mut owner = Vec::with_capacity(n);
    for v in 0..k.height {
        for u in 0..k.width {
            let d_cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let dir = rt * d_cam;
            let mut best = ray_box(&origin, &dir, &room).map_or(f64::INFINITY, |(_, t1)| t1);
            let mut who = None;
            for (j, b) in boxes.iter().enumerate() {
                if let Some((t0, _)) = ray_box(&origin, &dir, b) {
                    if t0 > 0.0 && t0 < best {
                        best = t0;
                        who = Some(j);
                    }
                }
            }
            depth.push(best);
            owner.push(who);
        }
    }
    Render { depth, owner }
}

/// Visible pixels per (frame, object), straight from the renderer.
pub fn visibility_report(spec: &SceneSpec) -> Result<Vec<Vec<usize>>, HarnessError> {
    spec.validate()?;
    let k = spec.intrinsics();
    let poses = spec.poses()?;
    Ok(poses
        .par_iter()
        .map(|pose| {
            let r = render(spec, &k, pose);
            let mut counts = vec![0usize; spec.objects.len()];
            for j in r.owner.into_iter().flatten() {
                counts[j] += 1;
            }
            counts
        })
        .collect())
}

fn canon(s: &str) -> Result<Category, HarnessError> {
    Category::canonicalize(s).ok_or_else(|| HarnessError::InvalidSpec(format!("empty category name '{s}'")))
}

/// Label plus synonyms, canonical and deduplicated, label first.
fn object_group(o: &ObjectSpec) -> Result<Vec<Category>, HarnessError> {
    let mut out: Vec<Category> = Vec::new();
    for name in std::iter::once(&o.label).chain(&o.synonyms) {
        let c = canon(name)?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

struct RawFrame {
    depth: Vec<f32>,
    masks: Vec<(usize, CategoryMask)>,
    visibility: Vec<usize>,
    line: Vec<Category>,
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn synth_frame(
    spec: &SceneSpec,
    noise: &NoiseSpec,
    groups: &[Vec<Category>],
    k: &CameraIntrinsics,
    pose: &CameraPose,
    frame: usize,
) -> RawFrame {
    let mut rng = frame_rng(spec.seed, frame as u64 + 1);
    let r = render(spec, k, pose);
    let depth_noise = (noise.depth_sigma > 0.0).then(|| Normal::new(0.0, noise.depth_sigma).expect("σ validated"));
    let depth: Vec<f32> = r
        .depth
        .iter()
        .map(|&d| {
            let d = match &depth_noise {
                Some(n) => (d + n.sample(&mut rng)).max(1e-3),
                None => d,
            };
            d as f32
        })
        .collect();

    let mut visibility = vec![0usize; spec.objects.len()];
    let mut bits: Vec<Vec<bool>> = vec![vec![false; r.owner.len()]; spec.objects.len()];
    for (i, o) in r.owner.iter().enumerate() {
        if let Some(j) = *o {
            visibility[j] += 1;
            bits[j][i] = true;
        }
    }
    let mut masks = Vec::new();
    for (j, b) in bits.into_iter().enumerate() {
        if visibility[j] == 0 {
            continue;
        }
        let group = &groups[j];
        let category = if noise.label_swap_p > 0.0 && rng.random_bool(noise.label_swap_p) {
            group.choose(&mut rng).expect("group has the label").clone()
        } else {
            group[0].clone()
        };
        let s_query = if noise.confidence_jitter > 0.0 { 1.0 - rng.random_range(0.0..noise.confidence_jitter) } else { 1.0 };
        let mask = BinaryMask { width: k.width, height: k.height, bits: b };
        masks.push((j, CategoryMask { frame: frame as u32, category, mask, s_query }));
    }

    // distinct visible labels, rotated per frame so every label gets listed
    let distinct: BTreeSet<Category> = masks.iter().map(|(_, m)| m.category.clone()).collect();
    let distinct: Vec<Category> = distinct.into_iter().collect();
    let line = if distinct.is_empty() {
        Vec::new()
    } else {
        let off = frame % distinct.len();
        distinct.iter().cycle().skip(off).take(distinct.len().min(spec.vocab_k)).cloned().collect()
    };
    RawFrame { depth, masks, visibility, line }
}

fn distorted_pose(pose: &CameraPose, d: &FrameDistortion) -> CameraPose {
    // world x ↦ σQx + c; camera depth scales by σ
    let q = *Rotation3::from_axis_angle(&Vector3::z_axis(), d.yaw).matrix();
    let c = Vector3::from(d.translation);
    let rotation = pose.rotation * q.transpose();
    let translation = d.scale * pose.translation - rotation * c;
    CameraPose { rotation, translation }
}

fn grouping_text(groups: &[Vec<Category>]) -> String {
    let mut out = String::new();
    let mut seen: Vec<BTreeSet<&Category>> = Vec::new();
    for g in groups.iter().filter(|g| g.len() >= 2) {
        let set: BTreeSet<&Category> = g.iter().collect();
        if seen.contains(&set) {
            continue;
        }
        let names: Vec<&str> = g.iter().map(Category::as_str).collect();
        out.push_str(&format!("{}_group: [{}]\n", g[0].as_str().replace(' ', "_"), names.join(", ")));
        seen.push(set);
    }
    out
}

fn gt_vertices(spec: &SceneSpec) -> Result<GroundTruthVertexSet, HarnessError> {
    let mut rng = frame_rng(spec.seed, 0);
    let mut gt = GroundTruthVertexSet::default();
    for (id, o) in spec.objects.iter().enumerate() {
        let label = canon(&o.label)?;
        for axis in 0..3 {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            let (la, lb) = (o.max[a] - o.min[a], o.max[b] - o.min[b]);
            let na = ((la / spec.vertex_spacing).ceil() as usize).max(1);
            let nb = ((lb / spec.vertex_spacing).ceil() as usize).max(1);
            for fixed in [o.min[axis], o.max[axis]] {
                for i in 0..na {
                    for j in 0..nb {
                        let mut p = Point::origin();
                        p[axis] = fixed;
                        p[a] = o.min[a] + la * (i as f64 + rng.random::<f64>()) / na as f64;
                        p[b] = o.min[b] + lb * (j as f64 + rng.random::<f64>()) / nb as f64;
                        gt.vertices.push(p);
                        gt.instance_ids.push(id as u32);
                        gt.labels.push(label.clone());
                    }
                }
            }
        }
    }
    Ok(gt)
}

/// Renders the scene and assembles the provider outputs and ground truth.
pub fn generate_scene(spec: &SceneSpec, noise: &NoiseSpec) -> Result<SyntheticScene, HarnessError> {
    spec.validate()?;
    noise.validate()?;
    let k = spec.intrinsics();
    let poses = spec.poses()?;
    let groups: Vec<Vec<Category>> = spec.objects.iter().map(object_group).collect::<Result<_, _>>()?;

    let raw: Vec<RawFrame> = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| synth_frame(spec, noise, &groups, &k, pose, i))
        .collect();

    let vocab: BTreeSet<&Category> = raw.iter().flat_map(|f| &f.line).collect();
    let mut bundle = SceneBundle::default();
    let mut visibility = Vec::with_capacity(raw.len());
    let mut mask_objects = Vec::with_capacity(raw.len());
    let mut reference = None;
    for (i, (f, pose)) in raw.iter().zip(&poses).enumerate() {
        let mut depth = DepthMap { width: k.width, height: k.height, values: f.depth.clone() };
        let mut pose = *pose;
        if let Some(d) = &spec.estimated {
            if i == 0 {
                reference = Some(ReferenceFrame { pose, depth: depth.clone() });
            }
            pose = distorted_pose(&pose, d);
            for v in depth.values.iter_mut() {
                *v = (d.scale * *v as f64) as f32;
            }
        }
        let kept: Vec<&(usize, CategoryMask)> = f.masks.iter().filter(|(_, m)| vocab.contains(&m.category)).collect();
        let presence = FramePresence {
            frame: i as u32,
            scores: kept.iter().map(|(_, m)| (m.category.clone(), 1.0)).collect::<HashMap<_, _>>(),
        };
        mask_objects.push(kept.iter().map(|(j, _)| *j).collect());
        bundle.frames.push(FrameInput {
            frame: i as u32,
            intrinsics: k,
            pose,
            depth,
            masks: kept.iter().map(|(_, m)| m.clone()).collect(),
            presence,
        });
        let names: Vec<&str> = f.line.iter().map(Category::as_str).collect();
        bundle.vocab_lines.push(names.join(", "));
        visibility.push(f.visibility.clone());
    }
    bundle.reference = reference;
    bundle.grouping_spec = Some(grouping_text(&groups));
    bundle.gt_boxes = Some(
        spec.objects
            .iter()
            .map(|o| Ok(GroundTruthBox { label: canon(&o.label)?, bbox: o.aabb() }))
            .collect::<Result<_, HarnessError>>()?,
    );
    bundle.gt_vertices = Some(gt_vertices(spec)?);
    Ok(SyntheticScene { bundle, visibility, mask_objects })
}

const LABEL_POOL: &[&str] = &[
    "chair", "table", "sofa", "bed", "lamp", "cabinet", "desk", "bookshelf", "toilet", "sink", "bathtub",
    "refrigerator", "dresser", "monitor", "trash can", "plant",
];

fn place_boxes(
    rng: &mut ChaCha8Rng,
    sizes: &[[f64; 3]],
    area_min: [f64; 2],
    area_max: [f64; 2],
    gap: f64,
) -> Option<Vec<[f64; 3]>> {
    let mut placed: Vec<([f64; 3], [f64; 3])> = Vec::new();
    for s in sizes {
        let mut ok = None;
        for _ in 0..500 {
            let x = rng.random_range(area_min[0]..area_max[0] - s[0]);
            let y = rng.random_range(area_min[1]..area_max[1] - s[1]);
            let lo = [x, y, 0.0];
            let hi = [x + s[0], y + s[1], s[2]];
            let clear = placed.iter().all(|(a, b)| {
                lo[0] >= b[0] + gap || a[0] >= hi[0] + gap || lo[1] >= b[1] + gap || a[1] >= hi[1] + gap
            });
            if clear {
                ok = Some((lo, hi));
                break;
            }
        }
        placed.push(ok?);
    }
    Some(placed.into_iter().map(|(lo, _)| lo).collect())
}

/// Random floor-standing boxes with distinct labels, separated by at least
/// 0.3 m, seen by `cameras` views from an elevated orbit.
pub fn random_scene_spec(seed: u64, n_objects: usize, cameras: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assert!(n_objects <= LABEL_POOL.len());
    for _ in 0..100 {
        let sizes: Vec<[f64; 3]> = (0..n_objects)
            .map(|_| [rng.random_range(0.4..1.0), rng.random_range(0.4..1.0), rng.random_range(0.4..1.2)])
            .collect();
        let Some(origins) = place_boxes(&mut rng, &sizes, [0.9, 0.9], [5.1, 5.1], 0.3) else { continue };
        let mut labels: Vec<&str> = LABEL_POOL.to_vec();
        let objects = origins
            .iter()
            .zip(&sizes)
            .map(|(lo, s)| {
                let label = labels.remove(rng.random_range(0..labels.len()));
                ObjectSpec {
                    label: label.to_string(),
                    min: *lo,
                    max: [lo[0] + s[0], lo[1] + s[1], lo[2] + s[2]],
                    synonyms: Vec::new(),
                }
            })
            .collect();
        return SceneSpec {
            room_min: [0.0, 0.0, 0.0],
            room_max: [6.0, 6.0, 3.0],
            objects,
            cameras: CameraOrbit {
                count: cameras,
                radius: 2.7,
                height: 2.4,
                target_height: 0.3,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                arc_deg: 360.0,
            },
            width: 64,
            height: 64,
            fov_deg: 75.0,
            seed,
            vocab_k: 5,
            vertex_spacing: 0.05,
            estimated: None,
        };
    }
    panic!("could not place {n_objects} objects");
}

const SYNONYM_POOL: &[&[&str]] = &[
    &["sofa", "couch", "settee"],
    &["table", "desk"],
    &["cabinet", "dresser", "cupboard"],
    &["chair", "stool"],
    &["bookshelf", "shelf"],
    &["monitor", "screen", "display"],
    &["trash can", "bin"],
    &["bed", "mattress"],
];

/// Label-noise layout: `groups` synonym groups with `per_group` objects
/// each, named by cycling through the group's members. Objects stand in
/// `per_group` parallel rows; within a row, neighbours from different groups
/// touch, and each object faces its same-group partners across narrow gaps
/// in the neighbouring rows.
pub fn ablation_scene_spec(seed: u64, groups: usize, per_group: usize, cameras: usize) -> SceneSpec {
    assert!((1..=SYNONYM_POOL.len()).contains(&groups) && per_group >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<&[&str]> = SYNONYM_POOL.to_vec();
    let chosen: Vec<&[&str]> = (0..groups).map(|_| pool.remove(rng.random_range(0..pool.len()))).collect();
    let widths: Vec<f64> = (0..groups).map(|_| rng.random_range(0.45..0.8)).collect();
    let depths: Vec<f64> = (0..per_group).map(|_| rng.random_range(0.45..0.7)).collect();
    let gaps: Vec<f64> = (1..per_group).map(|_| rng.random_range(0.15..0.3)).collect();
    let total_x: f64 = widths.iter().sum();
    let total_y: f64 = depths.iter().sum::<f64>() + gaps.iter().sum::<f64>();
    let mut objects = Vec::with_capacity(groups * per_group);
    let mut y = 3.0 - total_y / 2.0;
    for row in 0..per_group {
        let mut x = 3.0 - total_x / 2.0;
        for (g, w) in chosen.iter().zip(&widths) {
            let h = rng.random_range(0.4..1.0);
            objects.push(ObjectSpec {
                label: g[row % g.len()].into(),
                min: [x, y, 0.0],
                max: [x + w, y + depths[row], h],
                synonyms: g.iter().map(|s| s.to_string()).collect(),
            });
            x += w;
        }
        y += depths[row] + gaps.get(row).copied().unwrap_or(0.0);
    }
    SceneSpec {
        room_min: [0.0, 0.0, 0.0],
        room_max: [6.0, 6.0, 3.0],
        objects,
        cameras: CameraOrbit {
            count: cameras,
            radius: 2.6,
            height: 1.2,
            target_height: 0.3,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            arc_deg: 360.0,
        },
        width: 64,
        height: 64,
        fov_deg: 75.0,
        seed,
        vocab_k: 5,
        vertex_spacing: 0.05,
        estimated: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::back_project;

    fn cube_spec(cameras: usize) -> SceneSpec {
        SceneSpec {
            room_min: [-3.0, -3.0, 0.0],
            room_max: [3.0, 3.0, 3.0],
            objects: vec![ObjectSpec {
                label: "box".into(),
                min: [-0.5, -0.5, 0.0],
                max: [0.5, 0.5, 1.0],
                synonyms: vec!["crate".into()],
            }],
            cameras: CameraOrbit { count: cameras, radius: 2.5, height: 2.0, target_height: 0.5, phase: 0.1, arc_deg: 360.0 },
            width: 64,
            height: 64,
            fov_deg: 70.0,
            seed: 7,
            vocab_k: 5,
            vertex_spacing: 0.1,
            estimated: None,
        }
    }

    fn on_box_surface(p: &Point, b: &Aabb, tol: f64) -> bool {
        let inside = (0..3).all(|i| b.min[i] - tol <= p[i] && p[i] <= b.max[i] + tol);
        let on_face = (0..3).any(|i| (p[i] - b.min[i]).abs() <= tol || (p[i] - b.max[i]).abs() <= tol);
        inside && on_face
    }

    #[test]
    fn cube_pixels_back_project_onto_the_cube() {
        let spec = cube_spec(8);
        let scene = generate_scene(&spec, &NoiseSpec::default()).unwrap();
        let cube = spec.objects[0].aabb();
        let mut checked = 0;
        for f in &scene.bundle.frames {
            for m in &f.masks {
                for (i, _) in m.mask.bits.iter().enumerate().filter(|(_, b)| **b) {
                    let (u, v) = (i % f.depth.width, i / f.depth.width);
                    let p = back_project(u, v, f.depth.get(u, v) as f64, &f.intrinsics, &f.pose).unwrap();
                    assert!(on_box_surface(&p, &cube, 1e-6), "{p:?}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn zero_swap_keeps_true_labels() {
        let mut spec = cube_spec(8);
        spec.objects.push(ObjectSpec {
            label: "lamp".into(),
            min: [1.0, 1.0, 0.0],
            max: [1.3, 1.3, 1.5],
            synonyms: vec!["light".into()],
        });
        let noise = NoiseSpec { label_swap_p: 0.0, depth_sigma: 0.0, confidence_jitter: 0.2 };
        let scene = generate_scene(&spec, &noise).unwrap();
        for (f, objs) in scene.bundle.frames.iter().zip(&scene.mask_objects) {
            for (m, &j) in f.masks.iter().zip(objs) {
                assert_eq!(m.category.as_str(), spec.objects[j].label);
                assert!(m.s_query > 0.8 && m.s_query <= 1.0);
            }
        }
    }

    #[test]
    fn full_swap_stays_inside_the_group() {
        let spec = cube_spec(16);
        let noise = NoiseSpec { label_swap_p: 1.0, ..Default::default() };
        let scene = generate_scene(&spec, &noise).unwrap();
        let seen: BTreeSet<String> =
            scene.bundle.frames.iter().flat_map(|f| &f.masks).map(|m| m.category.to_string()).collect();
        assert!(seen.iter().all(|s| s == "box" || s == "crate"));
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn visibility_matches_masks_and_respects_occlusion() {
        let mut spec = cube_spec(4);
        // hidden object directly behind the cube from camera 0's viewpoint,
        // and a second object behind camera 0
        let eye = spec.poses().unwrap()[0].center();
        let dir = (Point::new(0.0, 0.0, 0.5) - eye).normalize();
        let behind = Point::new(0.0, 0.0, 0.5) + dir * 0.7;
        spec.objects.push(ObjectSpec {
            label: "small".into(),
            min: [behind.x - 0.05, behind.y - 0.05, behind.z - 0.05],
            max: [behind.x + 0.05, behind.y + 0.05, behind.z + 0.05],
            synonyms: vec![],
        });
        let back = eye + (eye - Point::new(0.0, 0.0, eye.z)).normalize() * 0.3;
        spec.objects.push(ObjectSpec {
            label: "rear".into(),
            min: [back.x - 0.05, back.y - 0.05, 0.0],
            max: [back.x + 0.05, back.y + 0.05, 0.2],
            synonyms: vec![],
        });
        let vis = visibility_report(&spec).unwrap();
        assert!(vis[0][0] > 0);
        assert_eq!(vis[0][1], 0, "occluded by the cube");
        assert_eq!(vis[0][2], 0, "behind the camera");
        let scene = generate_scene(&spec, &NoiseSpec::default()).unwrap();
        for (f, (objs, counts)) in scene.bundle.frames.iter().zip(scene.mask_objects.iter().zip(&vis)) {
            for (m, &j) in f.masks.iter().zip(objs) {
                assert_eq!(m.mask.count(), counts[j]);
            }
        }
    }

    #[test]
    fn filling_object_covers_every_pixel() {
        let mut spec = cube_spec(1);
        spec.cameras = CameraOrbit { count: 1, radius: 2.9, height: 1.5, target_height: 1.5, phase: 0.0, arc_deg: 360.0 };
        spec.objects = vec![ObjectSpec {
            label: "wall panel".into(),
            min: [-2.0, -2.9, 0.0],
            max: [2.0, 2.9, 3.0],
            synonyms: vec![],
        }];
        let vis = visibility_report(&spec).unwrap();
        assert_eq!(vis[0][0], 64 * 64);
    }

    #[test]
    fn spec_errors() {
        let mut spec = cube_spec(4);
        spec.objects[0].max[2] = 5.0;
        assert!(matches!(generate_scene(&spec, &NoiseSpec::default()), Err(HarnessError::ObjectOutsideRoom { .. })));
        let spec = cube_spec(4);
        let bad = NoiseSpec { label_swap_p: 1.5, ..Default::default() };
        assert!(matches!(generate_scene(&spec, &bad), Err(HarnessError::InvalidNoise(_))));
        let bad = NoiseSpec { depth_sigma: -0.1, ..Default::default() };
        assert!(generate_scene(&spec, &bad).is_err());
        let mut spec = cube_spec(4);
        spec.cameras.radius = 0.1;
        spec.cameras.height = 0.5;
        assert!(matches!(generate_scene(&spec, &NoiseSpec::default()), Err(HarnessError::CameraInsideObject { .. })));
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = random_scene_spec(3, 5, 16);
        let noise = NoiseSpec { label_swap_p: 0.3, depth_sigma: 0.01, confidence_jitter: 0.1 };
        assert_eq!(generate_scene(&spec, &noise).unwrap(), generate_scene(&spec, &noise).unwrap());
        assert_eq!(spec, random_scene_spec(3, 5, 16));
    }

    #[test]
    fn grouping_text_lists_each_set_once() {
        let g = vec![
            vec![Category::parse("sofa").unwrap(), Category::parse("couch").unwrap()],
            vec![Category::parse("couch").unwrap(), Category::parse("sofa").unwrap()],
            vec![Category::parse("trash can").unwrap(), Category::parse("bin").unwrap()],
            vec![Category::parse("lamp").unwrap()],
        ];
        assert_eq!(grouping_text(&g), "sofa_group: [sofa, couch]\ntrash_can_group: [trash can, bin]\n");
    }

    #[test]
    fn vertices_cover_all_faces() {
        let spec = cube_spec(1);
        let gt = gt_vertices(&spec).unwrap();
        let cube = spec.objects[0].aabb();
        assert!(gt.vertices.iter().all(|p| on_box_surface(p, &cube, 1e-12)));
        // 6 faces of 10×10 cells
        assert_eq!(gt.len(), 600);
    }
}
