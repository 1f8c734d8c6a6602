//! The fragment memory: one lifted point set per category-aware mask.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    self, BinaryMask, CameraIntrinsics, CameraPose, DepthMap, GeometryError, Point, SimilarityTransform,
};
use crate::vocabulary::{Category, SceneVocabulary};
use crate::voxelgrid::{voxelize, VoxelError, VoxelSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FragmentError {
    #[error("score {name}={value} outside [0, 1]")]
    ScoreOutOfRange { name: &'static str, value: f64 },
    #[error("frame {frame}: no presence score for category '{category}'")]
    MissingPresence { frame: u32, category: String },
    #[error("frame {frame}: category '{category}' is not in the scene vocabulary")]
    OutsideVocabulary { frame: u32, category: String },
    #[error("frame {frame}: {source}")]
    Geometry { frame: u32, source: GeometryError },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

/// Binary mask for one prompted category in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMask {
    pub frame: u32,
    pub category: Category,
    pub mask: BinaryMask,
    pub s_query: f64,
}

/// Per-category presence scores for one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FramePresence {
    pub frame: u32,
    pub scores: HashMap<Category, f64>,
}

impl FramePresence {
    pub fn get(&self, c: &Category) -> Option<f64> {
        self.scores.get(c).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Fragment {
    pub points: Vec<Point>,
    pub category: Category,
    pub confidence: f64,
    pub frame: u32,
    pub voxels: VoxelSet,
    /// Volume of the points' axis-aligned bounding box, m³.
    pub extent: f64,
}

impl Fragment {
    /// Builds a fragment from already-lifted points, caching the voxel set
    /// and extent. `None` when `points` is empty.
    pub fn from_points(
        points: Vec<Point>,
        category: Category,
        confidence: f64,
        frame: u32,
        voxel_size: f64,
    ) -> Result<Option<Self>, FragmentError> {
        check_unit("confidence", confidence)?;
        if points.is_empty() {
            return Ok(None);
        }
        let voxels = voxelize(&points, voxel_size)?;
        let extent = aabb_volume(&points);
        Ok(Some(Self { points, category, confidence, frame, voxels, extent }))
    }
}

pub(crate) fn aabb_volume(points: &[Point]) -> f64 {
    let Some(first) = points.first() else { return 0.0 };
    let (mut lo, mut hi) = (*first, *first);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let d = hi - lo;
    d.x * d.y * d.z
}

fn check_unit(name: &'static str, value: f64) -> Result<(), FragmentError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(FragmentError::ScoreOutOfRange { name, value })
    }
}

/// `s = s_query · s_pres`.
pub fn compose_confidence(s_query: f64, s_pres: f64) -> Result<f64, FragmentError> {
    check_unit("s_query", s_query)?;
    check_unit("s_pres", s_pres)?;
    Ok(s_query * s_pres)
}

/// Knobs for fragment construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentParams {
    pub voxel_size: f64,
    /// Fragments with fewer surviving points are discarded.
    pub min_points: usize,
}

impl Default for FragmentParams {
    fn default() -> Self {
        Self { voxel_size: 0.05, min_points: 5 }
    }
}

/// Lifts one mask. `alignment`, when given, maps the lifted points from the
/// reconstruction frame into the reference frame before voxelization.
#[allow(clippy::too_many_arguments)]
pub fn build_fragment(
    mask: &CategoryMask,
    presence: &FramePresence,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    alignment: Option<&SimilarityTransform>,
    params: &FragmentParams,
) -> Result<Option<Fragment>, FragmentError> {
    let s_pres = presence.get(&mask.category).ok_or_else(|| FragmentError::MissingPresence {
        frame: mask.frame,
        category: mask.category.to_string(),
    })?;
    let confidence = compose_confidence(mask.s_query, s_pres)?;
    let mut points = geometry::lift_mask(&mask.mask, depth, k, pose)
        .map_err(|source| FragmentError::Geometry { frame: mask.frame, source })?;
    if points.is_empty() || points.len() < params.min_points {
        return Ok(None);
    }
    if let Some(s) = alignment {
        points = geometry::apply_transform(&points, s);
    }
    Fragment::from_points(points, mask.category.clone(), confidence, mask.frame, params.voxel_size)
}

/// All geometry and provider outputs needed to lift one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame: u32,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub depth: DepthMap,
    pub masks: Vec<CategoryMask>,
    pub presence: FramePresence,
}

#[derive(Debug, Clone, Default)]
pub struct FragmentMemory {
    pub fragments: Vec<Fragment>,
}

impl FragmentMemory {
    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }
}

/// Lifts every mask of every frame. Fragments are ordered by frame (input
/// order), then by the category's vocabulary position, then by mask order.
pub fn build_fragment_memory(
    frames: &[FrameInput],
    vocab: &SceneVocabulary,
    alignment: Option<&SimilarityTransform>,
    params: &FragmentParams,
) -> Result<FragmentMemory, FragmentError> {
    let per_frame: Vec<Vec<Fragment>> = frames
        .par_iter()
        .map(|f| {
            let mut order = Vec::with_capacity(f.masks.len());
            for (i, m) in f.masks.iter().enumerate() {
                let pos = vocab.position(&m.category).ok_or_else(|| FragmentError::OutsideVocabulary {
                    frame: f.frame,
                    category: m.category.to_string(),
                })?;
                order.push((pos, i));
            }
            order.sort_unstable();
            let mut out = Vec::new();
            for (_, i) in order {
                if let Some(frag) =
                    build_fragment(&f.masks[i], &f.presence, &f.depth, &f.intrinsics, &f.pose, alignment, params)?
                {
                    out.push(frag);
                }
            }
            Ok(out)
        })
        .collect::<Result<_, FragmentError>>()?;
    Ok(FragmentMemory { fragments: per_frame.into_iter().flatten().collect() })
}
