//! Group-gated greedy fragment merging.
//!
//! Fragments are visited largest first. Each one joins the first existing
//! cluster (in creation order) whose compatibility group matches its own and
//! whose accumulated voxels overlap it; otherwise it seeds a new cluster.
//! There is a single pass and clusters are never merged with each other.

use thiserror::Error;

use crate::fragments::FragmentMemory;
use crate::geometry::Point;
use crate::vocabulary::{Category, CompatibilityGroups, GroupId, VocabError};
use crate::voxelgrid::{OverlapMeasures, VoxelError, VoxelSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error("invalid merge parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeParams {
    pub tau_iou: f64,
    pub tau_cont: f64,
    pub voxel_size: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self { tau_iou: 0.01, tau_cont: 0.10, voxel_size: 0.05 }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<(), MergeError> {
        let unit = |t: f64| t > 0.0 && t <= 1.0;
        if !unit(self.tau_iou) || !unit(self.tau_cont) {
            return Err(MergeError::InvalidParams(format!(
                "thresholds must lie in (0, 1], got tau_iou={} tau_cont={}",
                self.tau_iou, self.tau_cont
            )));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(MergeError::InvalidParams(format!("voxel size {}", self.voxel_size)));
        }
        Ok(())
    }
}

/// Confidences of every member fragment carrying one category.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub category: Category,
    pub confidences: Vec<f64>,
    /// Lowest fragment-memory index among the supporting fragments.
    pub first_fragment: usize,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    /// Fragment-memory indices in merge order.
    pub members: Vec<usize>,
    pub voxels: VoxelSet,
    pub points: Vec<Point>,
    /// One record per distinct member category, in first-merge order.
    pub labels: Vec<LabelRecord>,
    pub group: GroupId,
}

impl Cluster {
    fn record(&mut self, category: &Category, confidence: f64, index: usize) {
        match self.labels.iter_mut().find(|r| &r.category == category) {
            Some(r) => {
                r.confidences.push(confidence);
                r.first_fragment = r.first_fragment.min(index);
            }
            None => self.labels.push(LabelRecord {
                category: category.clone(),
                confidences: vec![confidence],
                first_fragment: index,
            }),
        }
    }
}

/// Visiting order: descending extent, then descending confidence, then
/// ascending memory index.
pub fn sort_fragments(memory: &FragmentMemory) -> Vec<usize> {
    let f = &memory.fragments;
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| {
        f[b].extent
            .total_cmp(&f[a].extent)
            .then_with(|| f[b].confidence.total_cmp(&f[a].confidence))
            .then(a.cmp(&b))
    });
    order
}

/// Decision trace for a single visited fragment; useful for debugging
/// threshold choices.
#[derive(Debug, Clone, PartialEq)]
pub enum MergeStep {
    Joined { fragment: usize, cluster: usize, measures: OverlapMeasures },
    Seeded { fragment: usize, cluster: usize },
}

pub fn merge_fragments(
    memory: &FragmentMemory,
    groups: &CompatibilityGroups,
    params: &MergeParams,
) -> Result<Vec<Cluster>, MergeError> {
    merge_fragments_traced(memory, groups, params).map(|(c, _)| c)
}

pub fn merge_fragments_traced(
    memory: &FragmentMemory,
    groups: &CompatibilityGroups,
    params: &MergeParams,
) -> Result<(Vec<Cluster>, Vec<MergeStep>), MergeError> {
    params.validate()?;
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut trace = Vec::with_capacity(memory.len());
    for idx in sort_fragments(memory) {
        let frag = &memory.fragments[idx];
        let group = groups.group_of(&frag.category)?;
        let mut joined = None;
        for (ci, cluster) in clusters.iter().enumerate() {
            if cluster.group != group {
                continue;
            }
            let m = OverlapMeasures::compute(&cluster.voxels, &frag.voxels)?;
            if m.passes(params.tau_iou, params.tau_cont) {
                joined = Some((ci, m));
                break;
            }
        }
        match joined {
            Some((ci, measures)) => {
                let c = &mut clusters[ci];
                c.members.push(idx);
                c.voxels.absorb(&frag.voxels)?;
                c.points.extend_from_slice(&frag.points);
                c.record(&frag.category, frag.confidence, idx);
                trace.push(MergeStep::Joined { fragment: idx, cluster: ci, measures });
            }
            None => {
                let mut c = Cluster {
                    members: vec![idx],
                    voxels: frag.voxels.clone(),
                    points: frag.points.clone(),
                    labels: Vec::new(),
                    group,
                };
                c.record(&frag.category, frag.confidence, idx);
                trace.push(MergeStep::Seeded { fragment: idx, cluster: clusters.len() });
                clusters.push(c);
            }
        }
    }
    Ok((clusters, trace))
}

impl PartialEq for Cluster {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members
            && self.group == other.group
            && self.labels == other.labels
            && self.voxels == other.voxels
            && self.points == other.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fragments::Fragment;
    use crate::vocabulary::{parse_group_spec, SceneVocabulary};

    fn cat(s: &str) -> Category {
        Category::parse(s).unwrap()
    }

    /// Fragment with one point per listed voxel centre (5 cm cells). The
    /// extent is overridden so visiting order can be set directly.
    fn frag(name: &str, cells: &[(i64, i64, i64)], conf: f64, extent: f64) -> Fragment {
        let s = 0.05;
        let pts: Vec<Point> = cells
            .iter()
            .map(|&(x, y, z)| Point::new((x as f64 + 0.5) * s, (y as f64 + 0.5) * s, (z as f64 + 0.5) * s))
            .collect();
        let mut f = Fragment::from_points(pts, cat(name), conf, 0, s).unwrap().unwrap();
        f.extent = extent;
        f
    }

    fn vocab(names: &[&str]) -> SceneVocabulary {
        names.iter().map(|n| cat(n)).collect()
    }

    #[test]
    fn sort_examples() {
        let mk = |e: f64, c: f64| {
            let mut f = frag("a", &[(0, 0, 0)], c, 0.0);
            f.extent = e;
            f
        };
        let mem = FragmentMemory { fragments: vec![mk(1.0, 0.5), mk(3.0, 0.5), mk(2.0, 0.5)] };
        assert_eq!(sort_fragments(&mem), vec![1, 2, 0]);
        let mem = FragmentMemory { fragments: vec![mk(1.0, 0.2), mk(1.0, 0.9)] };
        assert_eq!(sort_fragments(&mem), vec![1, 0]);
        let mem = FragmentMemory { fragments: vec![mk(1.0, 0.5), mk(1.0, 0.5)] };
        assert_eq!(sort_fragments(&mem), vec![0, 1]);
        let mem = FragmentMemory { fragments: vec![mk(1.0, 0.5)] };
        assert_eq!(sort_fragments(&mem), vec![0]);
    }

    #[test]
    fn identical_same_category_fragments_merge() {
        let v = vocab(&["chair"]);
        let g = CompatibilityGroups::singletons(&v);
        let cells = [(0, 0, 0), (1, 0, 0)];
        let mem = FragmentMemory { fragments: vec![frag("chair", &cells, 0.9, 0.0), frag("chair", &cells, 0.8, 0.0)] };
        let c = merge_fragments(&mem, &g, &MergeParams::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, vec![0, 1]);
        assert_eq!(c[0].labels[0].confidences, vec![0.9, 0.8]);
    }

    #[test]
    fn semantic_gate_blocks_incompatible_categories() {
        let v = vocab(&["chair", "table"]);
        let g = CompatibilityGroups::singletons(&v);
        let cells = [(0, 0, 0), (1, 0, 0)];
        let mem = FragmentMemory { fragments: vec![frag("chair", &cells, 0.9, 0.0), frag("table", &cells, 0.9, 0.0)] };
        assert_eq!(merge_fragments(&mem, &g, &MergeParams::default()).unwrap().len(), 2);
        let u = CompatibilityGroups::universal(&v);
        assert_eq!(merge_fragments(&mem, &u, &MergeParams::default()).unwrap().len(), 1);
    }

    #[test]
    fn compatible_categories_merge_on_containment() {
        // chair covers 3 voxels and is larger; sofa shares 1 of its 2 voxels.
        // IoU = 1/4 would pass on its own, so raise tau_iou to isolate containment.
        let v = vocab(&["chair", "sofa"]);
        let g = parse_group_spec("seating: [chair, sofa]", &v);
        let chair = frag("chair", &[(0, 0, 0), (1, 0, 0), (2, 0, 0)], 0.9, 3.0);
        let sofa = frag("sofa", &[(2, 0, 0), (3, 0, 0)], 0.7, 2.0);
        assert!(chair.extent > sofa.extent);
        let mem = FragmentMemory { fragments: vec![sofa, chair] };
        let params = MergeParams { tau_iou: 0.5, tau_cont: 0.5, voxel_size: 0.05 };
        let (c, trace) = merge_fragments_traced(&mem, &g, &params).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, vec![1, 0]);
        let labels: Vec<&str> = c[0].labels.iter().map(|r| r.category.as_str()).collect();
        assert_eq!(labels, vec!["chair", "sofa"]);
        match &trace[1] {
            MergeStep::Joined { measures, .. } => {
                assert_eq!(measures.iou, 0.25);
                assert_eq!(measures.containment, 0.5);
            }
            other => panic!("unexpected step {other:?}"),
        }
    }

    #[test]
    fn cluster_is_the_containing_side() {
        // large fragment A (10 voxels) seeds; small B (2 voxels, 1 shared).
        // Cont(B→A) = 0.5 passes; Cont(A→B) would be 0.1 and fail at 0.2.
        let v = vocab(&["x"]);
        let g = CompatibilityGroups::singletons(&v);
        let a_cells: Vec<_> = (0..10).map(|i| (i, 0, 0)).collect();
        let a = frag("x", &a_cells, 0.9, 10.0);
        let b = frag("x", &[(9, 0, 0), (20, 0, 0)], 0.9, 2.0);
        let params = MergeParams { tau_iou: 0.5, tau_cont: 0.2, voxel_size: 0.05 };
        let mem = FragmentMemory { fragments: vec![a.clone(), b.clone()] };
        assert_eq!(merge_fragments(&mem, &g, &params).unwrap().len(), 1);
        let swapped = OverlapMeasures::compute(&b.voxels, &a.voxels).unwrap();
        assert!(!swapped.passes(params.tau_iou, params.tau_cont));
    }

    #[test]
    fn first_matching_cluster_wins() {
        let v = vocab(&["x"]);
        let g = CompatibilityGroups::singletons(&v);
        let a = frag("x", &[(0, 0, 0), (1, 0, 0), (2, 0, 0)], 0.9, 3.0);
        let b = frag("x", &[(10, 0, 0), (11, 0, 0), (12, 0, 0)], 0.9, 2.5);
        let bridge = frag("x", &[(2, 0, 0), (10, 0, 0)], 0.9, 0.0);
        let mem = FragmentMemory { fragments: vec![bridge, b, a] };
        let c = merge_fragments(&mem, &g, &MergeParams::default()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].members, vec![2, 0]);
        assert_eq!(c[1].members, vec![1]);
    }

    #[test]
    fn unknown_category_propagates() {
        let v = vocab(&["chair"]);
        let g = CompatibilityGroups::singletons(&v);
        let mem = FragmentMemory { fragments: vec![frag("lamp", &[(0, 0, 0)], 0.5, 0.0)] };
        assert!(matches!(merge_fragments(&mem, &g, &MergeParams::default()), Err(MergeError::Vocab(_))));
    }

    #[test]
    fn params_are_validated() {
        let g = CompatibilityGroups::singletons(&SceneVocabulary::default());
        let mem = FragmentMemory::default();
        let bad = MergeParams { tau_iou: 0.0, ..MergeParams::default() };
        assert!(merge_fragments(&mem, &g, &bad).is_err());
        assert!(merge_fragments(&mem, &g, &MergeParams::default()).unwrap().is_empty());
    }
}
