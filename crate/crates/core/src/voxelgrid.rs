//! Hashed voxel sets and the IoU / containment overlap predicates.

use std::collections::HashSet;

use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxelError {
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("non-finite point at index {index}: ({x}, {y}, {z})")]
    NonFinitePoint { index: usize, x: f64, y: f64, z: f64 },
    #[error("voxel sizes differ: {0} vs {1}")]
    SizeMismatch(f64, f64),
    #[error("containment is undefined for an empty voxel set")]
    EmptyContainment,
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
}

/// Integer cell index `⌊p / s⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    pub const fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    /// Cell containing `p`; rounds toward −∞ so points on a boundary belong to
    /// the higher-index cell.
    pub fn of(p: &Point, voxel_size: f64) -> Self {
        Self {
            ix: (p.x / voxel_size).floor() as i64,
            iy: (p.y / voxel_size).floor() as i64,
            iz: (p.z / voxel_size).floor() as i64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    keys: HashSet<VoxelKey>,
    voxel_size: f64,
}

impl VoxelSet {
    pub fn new(voxel_size: f64) -> Result<Self, VoxelError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(VoxelError::InvalidVoxelSize(voxel_size));
        }
        Ok(Self { keys: HashSet::new(), voxel_size })
    }

    pub fn from_keys<I: IntoIterator<Item = VoxelKey>>(keys: I, voxel_size: f64) -> Result<Self, VoxelError> {
        let mut s = Self::new(voxel_size)?;
        s.keys.extend(keys);
        Ok(s)
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, k: &VoxelKey) -> bool {
        self.keys.contains(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VoxelKey> {
        self.keys.iter()
    }

    pub fn sorted_keys(&self) -> Vec<VoxelKey> {
        let mut v: Vec<_> = self.keys.iter().copied().collect();
        v.sort_unstable();
        v
    }

    fn check_size(&self, other: &Self) -> Result<(), VoxelError> {
        if self.voxel_size != other.voxel_size {
            return Err(VoxelError::SizeMismatch(self.voxel_size, other.voxel_size));
        }
        Ok(())
    }

    pub fn intersection_len(&self, other: &Self) -> Result<usize, VoxelError> {
        self.check_size(other)?;
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        Ok(small.keys.iter().filter(|k| large.keys.contains(k)).count())
    }

    /// In-place union.
    pub fn absorb(&mut self, other: &Self) -> Result<(), VoxelError> {
        self.check_size(other)?;
        self.keys.extend(other.keys.iter().copied());
        Ok(())
    }
}

pub fn voxelize(points: &[Point], voxel_size: f64) -> Result<VoxelSet, VoxelError> {
    let mut set = VoxelSet::new(voxel_size)?;
    for (index, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(VoxelError::NonFinitePoint { index, x: p.x, y: p.y, z: p.z });
        }
        set.keys.insert(VoxelKey::of(p, voxel_size));
    }
    Ok(set)
}

/// `|A ∩ B| / |A ∪ B|`, zero when both are empty.
pub fn voxel_iou(a: &VoxelSet, b: &VoxelSet) -> Result<f64, VoxelError> {
    let inter = a.intersection_len(b)?;
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of `b`'s voxels that are also in `a`.
pub fn voxel_containment(b: &VoxelSet, a: &VoxelSet) -> Result<f64, VoxelError> {
    let inter = a.intersection_len(b)?;
    if b.is_empty() {
        return Err(VoxelError::EmptyContainment);
    }
    Ok(inter as f64 / b.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapMeasures {
    pub iou: f64,
    pub containment: f64,
}

impl OverlapMeasures {
    pub fn compute(a: &VoxelSet, b: &VoxelSet) -> Result<Self, VoxelError> {
        Ok(Self { iou: voxel_iou(a, b)?, containment: voxel_containment(b, a)? })
    }

    pub fn passes(&self, tau_iou: f64, tau_cont: f64) -> bool {
        self.iou >= tau_iou || self.containment >= tau_cont
    }
}

fn check_threshold(t: f64) -> Result<(), VoxelError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(VoxelError::InvalidThreshold(t))
    }
}

/// `IoU(A, B) ≥ τ_iou  ∨  Cont(B → A) ≥ τ_cont`.
pub fn overlap(a: &VoxelSet, b: &VoxelSet, tau_iou: f64, tau_cont: f64) -> Result<bool, VoxelError> {
    check_threshold(tau_iou)?;
    check_threshold(tau_cont)?;
    Ok(OverlapMeasures::compute(a, b)?.passes(tau_iou, tau_cont))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(keys: &[(i64, i64, i64)]) -> VoxelSet {
        VoxelSet::from_keys(keys.iter().map(|&(x, y, z)| VoxelKey::new(x, y, z)), 0.05).unwrap()
    }

    #[test]
    fn voxelize_examples() {
        let v = voxelize(&[Point::new(0.12, -0.01, 0.26)], 0.05).unwrap();
        assert_eq!(v.sorted_keys(), vec![VoxelKey::new(2, -1, 5)]);
        for s in [0.01, 0.05, 0.3] {
            let v = voxelize(&[Point::origin()], s).unwrap();
            assert_eq!(v.sorted_keys(), vec![VoxelKey::new(0, 0, 0)]);
        }
        let v = voxelize(&[Point::new(0.01, 0.01, 0.01), Point::new(0.04, 0.02, 0.03)], 0.05).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn floor_at_negative_boundaries() {
        let v = voxelize(&[Point::new(-0.25, -0.05, -1e-12)], 0.05).unwrap();
        assert_eq!(v.sorted_keys(), vec![VoxelKey::new(-5, -1, -1)]);
        // exact multiples go to the higher-index cell
        let v = voxelize(&[Point::new(0.5, 1.0, 0.25)], 0.25).unwrap();
        assert_eq!(v.sorted_keys(), vec![VoxelKey::new(2, 4, 1)]);
    }

    #[test]
    fn voxelize_errors() {
        assert!(matches!(voxelize(&[], 0.0), Err(VoxelError::InvalidVoxelSize(_))));
        assert!(matches!(
            voxelize(&[Point::origin(), Point::new(f64::NAN, 0.0, 0.0)], 0.05),
            Err(VoxelError::NonFinitePoint { index: 1, .. })
        ));
    }

    #[test]
    fn iou_examples() {
        let a = set(&[(0, 0, 0), (1, 0, 0)]);
        assert_eq!(voxel_iou(&a, &a).unwrap(), 1.0);
        let b = set(&[(1, 0, 0), (2, 0, 0)]);
        assert_eq!(voxel_iou(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(voxel_iou(&a, &set(&[(9, 9, 9)])).unwrap(), 0.0);
        assert_eq!(voxel_iou(&set(&[]), &set(&[])).unwrap(), 0.0);
        let other = VoxelSet::from_keys([VoxelKey::new(0, 0, 0)], 0.1).unwrap();
        assert!(matches!(voxel_iou(&a, &other), Err(VoxelError::SizeMismatch(..))));
    }

    #[test]
    fn containment_examples() {
        let a = set(&[(0, 0, 0), (1, 0, 0), (2, 0, 0)]);
        assert_eq!(voxel_containment(&set(&[(1, 0, 0)]), &a).unwrap(), 1.0);
        let b = set(&[(0, 0, 0), (5, 5, 5)]);
        assert_eq!(voxel_containment(&b, &set(&[(0, 0, 0)])).unwrap(), 0.5);
        assert_eq!(voxel_containment(&set(&[(7, 7, 7)]), &a).unwrap(), 0.0);
        assert_eq!(voxel_containment(&set(&[]), &a), Err(VoxelError::EmptyContainment));
    }

    #[test]
    fn containment_is_asymmetric() {
        let big = set(&[(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0)]);
        let small = set(&[(0, 0, 0)]);
        assert_eq!(voxel_containment(&small, &big).unwrap(), 1.0);
        assert_eq!(voxel_containment(&big, &small).unwrap(), 0.25);
    }

    #[test]
    fn predicate_branches() {
        let m = OverlapMeasures { iou: 0.005, containment: 0.12 };
        assert!(m.passes(0.01, 0.10));
        assert!(OverlapMeasures { iou: 0.02, containment: 0.0 }.passes(0.01, 0.10));
        assert!(!OverlapMeasures { iou: 0.0, containment: 0.0 }.passes(0.01, 0.10));
        // inclusive thresholds
        assert!(OverlapMeasures { iou: 0.01, containment: 0.0 }.passes(0.01, 0.10));

        // a 1-voxel fragment inside a 200-voxel cluster: IoU 0.005, Cont 1.0
        let a = VoxelSet::from_keys((0..200).map(|i| VoxelKey::new(i, 0, 0)), 0.05).unwrap();
        let b = set(&[(0, 0, 0)]);
        assert!(voxel_iou(&a, &b).unwrap() < 0.01);
        assert!(overlap(&a, &b, 0.01, 0.10).unwrap());
        assert!(!overlap(&b, &a, 0.01, 0.10).unwrap());
        assert!(matches!(overlap(&a, &b, 0.0, 0.1), Err(VoxelError::InvalidThreshold(_))));
        assert!(matches!(overlap(&a, &b, 0.01, 1.5), Err(VoxelError::InvalidThreshold(_))));
    }

    fn key_strategy() -> impl Strategy<Value = (i64, i64, i64)> {
        (-4i64..4, -4i64..4, -4i64..4)
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded_by_containment(
            a in proptest::collection::vec(key_strategy(), 0..40),
            b in proptest::collection::vec(key_strategy(), 1..40),
        ) {
            let (a, b) = (set(&a), set(&b));
            let ab = voxel_iou(&a, &b).unwrap();
            prop_assert_eq!(ab, voxel_iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(ab <= voxel_containment(&b, &a).unwrap());
        }

        #[test]
        fn translation_by_cell_multiples_shifts_keys(
            pts in proptest::collection::vec((-2048i32..2048, -2048i32..2048, -2048i32..2048), 1..50),
            k in (-5i64..5, -5i64..5, -5i64..5),
        ) {
            // dyadic coordinates and a power-of-two cell keep every sum exact
            let s = 0.125;
            let points: Vec<Point> = pts.iter()
                .map(|&(x, y, z)| Point::new(x as f64 / 1024.0, y as f64 / 1024.0, z as f64 / 1024.0))
                .collect();
            let t = nalgebra::Vector3::new(k.0 as f64 * s, k.1 as f64 * s, k.2 as f64 * s);
            let xf = crate::geometry::SimilarityTransform::new(1.0, nalgebra::Matrix3::identity(), t).unwrap();
            let moved = crate::geometry::apply_transform(&points, &xf);
            let mut expected: Vec<VoxelKey> = voxelize(&points, s).unwrap().iter()
                .map(|v| VoxelKey::new(v.ix + k.0, v.iy + k.1, v.iz + k.2)).collect();
            expected.sort_unstable();
            prop_assert_eq!(voxelize(&moved, s).unwrap().sorted_keys(), expected);
        }
    }
}
