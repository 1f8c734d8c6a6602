//! Pinhole cameras, depth maps, back-projection of mask pixels and
//! similarity alignment of estimated reconstructions.
//!
//! Conventions: pixel `(u, v)` is column `u`, row `v`, taken as integer
//! coordinates on the image plane (no half-pixel offset). Poses map world
//! coordinates into the camera frame, `x_cam = R x_world + t`, with `+z`
//! pointing along the optical axis.

use nalgebra::{Matrix3, Point3, Vector3};
use thiserror::Error;

pub type Point = Point3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate intrinsics: {0}")]
    DegenerateIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (error {0:.3e})")]
    InvalidRotation(f64),
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds { u: usize, v: usize, width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("invalid similarity transform: {0}")]
    InvalidTransform(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GeometryError::DegenerateIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::DegenerateIntrinsics("zero image size".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(GeometryError::DegenerateIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point to `(u, v)` pixel coordinates.
    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera centre in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Point {
        Point::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn world_to_camera(&self, p: &Point) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    /// Builds the pose of a camera at `eye` looking at `target`, with image
    /// rows running along `-up`.
    pub fn look_at(eye: &Point, target: &Point, up: &Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidTransform("eye coincides with target".into()))?;
        let right = forward
            .cross(up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidTransform("up vector parallel to view".into()))?;
        let down = forward.cross(&right);
        // rows are the camera axes expressed in world coordinates
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Self::new(rotation, translation)
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    if r.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::InvalidRotation(f64::INFINITY));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    let err = ortho.max(det);
    if err > ORTHONORMAL_TOL {
        return Err(GeometryError::InvalidRotation(err));
    }
    Ok(())
}

/// Row-major depth image in meters. Non-positive or non-finite entries are
/// invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, GeometryError> {
        if values.len() != width * height {
            return Err(GeometryError::DimensionMismatch(format!(
                "{} depth values for a {}x{} map",
                values.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.values[v * self.width + u]
    }
}

pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.bits[v * self.width + u] = on;
    }

    /// Encodes the mask as sorted, non-overlapping `(start, length)` runs of
    /// set bits over the row-major flattening.
    pub fn to_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &b) in self.bits.iter().enumerate() {
            match (b, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.bits.len() - s));
        }
        runs
    }

    pub fn from_runs(width: usize, height: usize, runs: &[(usize, usize)]) -> Result<Self, GeometryError> {
        let mut mask = Self::empty(width, height);
        let mut end_prev = 0usize;
        for (k, &(start, len)) in runs.iter().enumerate() {
            if k > 0 && start < end_prev {
                return Err(GeometryError::DimensionMismatch(format!(
                    "run {start}:{len} overlaps or is out of order"
                )));
            }
            let end = start
                .checked_add(len)
                .filter(|e| *e <= mask.bits.len())
                .ok_or_else(|| {
                    GeometryError::DimensionMismatch(format!(
                        "run {start}:{len} exceeds {} pixels",
                        width * height
                    ))
                })?;
            mask.bits[start..end].iter_mut().for_each(|b| *b = true);
            end_prev = end;
        }
        Ok(mask)
    }
}

/// Lifts pixel `(u, v)` at depth `depth` into world coordinates:
/// `p = Rᵀ(d K⁻¹ [u, v, 1]ᵀ − t)`.
pub fn back_project(
    u: usize,
    v: usize,
    depth: f64,
    k: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Point, GeometryError> {
    if !(k.fx > 0.0 && k.fy > 0.0) {
        return Err(GeometryError::DegenerateIntrinsics(format!("fx={} fy={}", k.fx, k.fy)));
    }
    if u >= k.width || v >= k.height {
        return Err(GeometryError::PixelOutOfBounds { u, v, width: k.width, height: k.height });
    }
    if !is_valid_depth(depth) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    let ray = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
    let p_cam = ray * depth;
    Ok(Point::from(pose.rotation.transpose() * (p_cam - pose.translation)))
}

/// Reprojects a world point through `(k, pose)`, returning `(u, v, depth)`.
pub fn project(p: &Point, k: &CameraIntrinsics, pose: &CameraPose) -> (f64, f64, f64) {
    let c = pose.world_to_camera(p);
    let (u, v) = k.project(&c);
    (u, v, c.z)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(median_sorted(&v))
}

const MAD_SCALE: f64 = 1.4826;
const MAD_K: f64 = 3.0;
const ZERO_MAD_TOL: f64 = 1e-6;

/// One robust pass: indices (into `idx`) whose depth lies within
/// `3 * 1.4826 * MAD` of the median.
fn mad_pass(depths: &[f64], idx: &[usize]) -> Vec<usize> {
    let vals: Vec<f64> = idx.iter().map(|&i| depths[i]).collect();
    let Some(med) = median(&vals) else { return Vec::new() };
    let devs: Vec<f64> = vals.iter().map(|d| (d - med).abs()).collect();
    let mad = median(&devs).unwrap_or(0.0);
    let limit = if mad > 0.0 { MAD_K * MAD_SCALE * mad } else { ZERO_MAD_TOL };
    idx.iter().copied().filter(|&i| (depths[i] - med).abs() <= limit).collect()
}

/// Suppresses extreme depths within one mask region.
///
/// Invalid entries are always dropped. The median/MAD rule is applied until
/// no further entry is removed, so the result is a fixed point: filtering the
/// kept values again keeps all of them. Returned indices are ascending.
pub fn filter_depth_outliers(depths: &[f64]) -> Vec<usize> {
    let mut kept: Vec<usize> = (0..depths.len()).filter(|&i| is_valid_depth(depths[i])).collect();
    loop {
        let next = mad_pass(depths, &kept);
        if next.len() == kept.len() {
            return kept;
        }
        kept = next;
    }
}

/// Back-projects every selected pixel that has a valid depth and survives the
/// outlier filter. Points come out in row-major pixel order.
pub fn lift_mask(
    mask: &BinaryMask,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vec<Point>, GeometryError> {
    if mask.width != depth.width || mask.height != depth.height {
        return Err(GeometryError::DimensionMismatch(format!(
            "mask {}x{} vs depth {}x{}",
            mask.width, mask.height, depth.width, depth.height
        )));
    }
    if mask.width != k.width || mask.height != k.height {
        return Err(GeometryError::DimensionMismatch(format!(
            "mask {}x{} vs intrinsics {}x{}",
            mask.width, mask.height, k.width, k.height
        )));
    }
    k.validate()?;
    let mut pixels = Vec::new();
    let mut depths = Vec::new();
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        pixels.push((i % mask.width, i / mask.width));
        depths.push(depth.values[i] as f64);
    }
    filter_depth_outliers(&depths)
        .into_iter()
        .map(|j| {
            let (u, v) = pixels[j];
            back_project(u, v, depths[j], k, pose)
        })
        .collect()
}

/// `p ↦ scale · R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeometryError::InvalidTransform(format!("scale {scale}")));
        }
        check_rotation(&rotation)?;
        Ok(Self { scale, rotation, translation })
    }

    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    /// Re-expresses a pose defined in the source frame in the target frame.
    /// Camera-frame coordinates are scaled by `scale` as well.
    pub fn transform_pose(&self, pose: &CameraPose) -> CameraPose {
        let rotation = pose.rotation * self.rotation.transpose();
        let translation = self.scale * pose.translation - rotation * self.translation;
        CameraPose { rotation, translation }
    }
}

pub fn apply_transform(points: &[Point], s: &SimilarityTransform) -> Vec<Point> {
    points.iter().map(|p| s.apply(p)).collect()
}

/// Similarity mapping the predicted reconstruction onto the reference frame:
/// the first predicted pose is matched to the first reference pose and the
/// global scale is the median first-frame depth ratio `ref / pred`.
pub fn align_to_reference(
    pred_pose0: &CameraPose,
    ref_pose0: &CameraPose,
    pred_depth0: &DepthMap,
    ref_depth0: &DepthMap,
) -> Result<SimilarityTransform, GeometryError> {
    if pred_depth0.width != ref_depth0.width || pred_depth0.height != ref_depth0.height {
        return Err(GeometryError::DimensionMismatch(format!(
            "predicted depth {}x{} vs reference {}x{}",
            pred_depth0.width, pred_depth0.height, ref_depth0.width, ref_depth0.height
        )));
    }
    let ratios: Vec<f64> = pred_depth0
        .values
        .iter()
        .zip(&ref_depth0.values)
        .map(|(&p, &r)| (p as f64, r as f64))
        .filter(|(p, r)| is_valid_depth(*p) && is_valid_depth(*r))
        .map(|(p, r)| r / p)
        .collect();
    let scale = median(&ratios)
        .ok_or_else(|| GeometryError::Alignment("no pixel has valid depth in both frames".into()))?;
    // s (R_p x + t_p) = R_r y + t_r  ⇒  y = s R_rᵀ R_p x + R_rᵀ (s t_p − t_r)
    let r_ref_t = ref_pose0.rotation.transpose();
    let rotation = r_ref_t * pred_pose0.rotation;
    let translation = r_ref_t * (scale * pred_pose0.translation - ref_pose0.translation);
    SimilarityTransform::new(scale, rotation, translation)
}
