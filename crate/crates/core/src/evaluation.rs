//! Detection and instance-segmentation metrics.
//!
//! AP is the all-point interpolated area under the precision/recall
//! staircase. Predictions are visited by descending score (ties by input
//! order) and each takes the highest-IoU unmatched ground truth whose IoU is
//! at least the threshold (ties by lowest ground-truth index).

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::evidence::{Aabb, Instance};
use crate::geometry::Point;
use crate::vocabulary::Category;
use crate::voxelgrid::VoxelKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground-truth classes to evaluate")]
    NoGroundTruth,
    #[error("IoU threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("ground-truth instance {id} has conflicting labels '{a}' and '{b}'")]
    ConflictingInstanceLabel { id: u32, a: String, b: String },
    #[error("{0} assignments for {1} vertices")]
    AssignmentLength(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: Category,
    pub score: f64,
    pub bbox: Aabb,
}

impl From<&Instance> for Detection {
    fn from(i: &Instance) -> Self {
        Self { label: i.label.clone(), score: i.score, bbox: i.bbox }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub label: Category,
    pub bbox: Aabb,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthVertexSet {
    pub vertices: Vec<Point>,
    pub instance_ids: Vec<u32>,
    pub labels: Vec<Category>,
}

impl GroundTruthVertexSet {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Axis-aligned 3D IoU. Boxes without positive-volume overlap score 0.
pub fn box_iou_3d(a: &Aabb, b: &Aabb) -> f64 {
    let mut inter = 1.0;
    for i in 0..3 {
        let lo = a.min[i].max(b.min[i]);
        let hi = a.max[i].min(b.max[i]);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

fn check_threshold(t: f64) -> Result<(), EvalError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold(t))
    }
}

/// Prediction indices by descending score; equal scores keep input order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy matching. Returns, for each ranked prediction, whether it is a true
/// positive. `ious[p][g]` is the IoU of prediction `p` with ground truth `g`.
pub fn greedy_match(scores: &[f64], ious: &[Vec<f64>], n_gt: usize, thr: f64) -> Vec<bool> {
    let mut taken = vec![false; n_gt];
    ranking(scores)
        .into_iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for g in 0..n_gt {
                let iou = ious[p][g];
                if taken[g] || iou < thr {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-point interpolated AP from ranked true-positive flags.
pub fn ap_from_ranked_hits(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// AP of one class from precomputed IoUs; `None` when there is no ground
/// truth (the class is then left out of any mean).
pub fn average_precision_from_ious(scores: &[f64], ious: &[Vec<f64>], n_gt: usize, thr: f64) -> Result<Option<f64>, EvalError> {
    check_threshold(thr)?;
    if n_gt == 0 {
        return Ok(None);
    }
    Ok(Some(ap_from_ranked_hits(&greedy_match(scores, ious, n_gt, thr), n_gt)))
}

/// AP for scored boxes of a single class.
pub fn average_precision(preds: &[(f64, Aabb)], gts: &[Aabb], thr: f64) -> Result<Option<f64>, EvalError> {
    let scores: Vec<f64> = preds.iter().map(|(s, _)| *s).collect();
    let ious: Vec<Vec<f64>> = preds.iter().map(|(_, p)| gts.iter().map(|g| box_iou_3d(p, g)).collect()).collect();
    average_precision_from_ious(&scores, &ious, gts.len(), thr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub iou_threshold: f64,
    /// Per ground-truth class, sorted by name.
    pub per_class: Vec<(Category, f64)>,
    pub mean: f64,
}

/// Unweighted mean of per-class AP over the classes present in `gts`.
pub fn mean_ap(preds: &[Detection], gts: &[GroundTruthBox], thr: f64) -> Result<MapReport, EvalError> {
    check_threshold(thr)?;
    type PerClass = (Vec<(f64, Aabb)>, Vec<Aabb>);
    let mut classes: BTreeMap<&Category, PerClass> = BTreeMap::new();
    for g in gts {
        classes.entry(&g.label).or_default().1.push(g.bbox);
    }
    if classes.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    for p in preds {
        if let Some(entry) = classes.get_mut(&p.label) {
            entry.0.push((p.score, p.bbox));
        }
    }
    let mut per_class = Vec::with_capacity(classes.len());
    for (c, (p, g)) in classes {
        let ap = average_precision(&p, &g, thr)?.expect("class has ground truth");
        per_class.push((c.clone(), ap));
    }
    let mean = per_class.iter().map(|(_, ap)| ap).sum::<f64>() / per_class.len() as f64;
    Ok(MapReport { iou_threshold: thr, per_class, mean })
}

/// Hashed grid over all instance points for radius-bounded nearest-neighbor
/// queries.
struct PointGrid<'a> {
    cell: f64,
    cells: HashMap<VoxelKey, Vec<(usize, usize)>>,
    instances: &'a [Instance],
}

impl<'a> PointGrid<'a> {
    fn new(instances: &'a [Instance], cell: f64) -> Self {
        let mut cells: HashMap<VoxelKey, Vec<(usize, usize)>> = HashMap::new();
        for (ii, inst) in instances.iter().enumerate() {
            for (pi, p) in inst.points.iter().enumerate() {
                cells.entry(VoxelKey::of(p, cell)).or_default().push((ii, pi));
            }
        }
        Self { cell, cells, instances }
    }

    /// Nearest point strictly closer than `self.cell`; ties resolve to the
    /// lowest (instance, point) index.
    fn nearest_within(&self, q: &Point) -> Option<(usize, f64)> {
        let c = VoxelKey::of(q, self.cell);
        let mut best: Option<(f64, usize, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let k = VoxelKey::new(c.ix + dx, c.iy + dy, c.iz + dz);
                    let Some(list) = self.cells.get(&k) else { continue };
                    for &(ii, pi) in list {
                        let d = (self.instances[ii].points[pi] - q).norm();
                        let cand = (d, ii, pi);
                        if best.is_none_or(|b| cand < b) {
                            best = Some(cand);
                        }
                    }
                }
            }
        }
        best.filter(|b| b.0 < self.cell).map(|(d, ii, _)| (ii, d))
    }
}

/// Assigns each ground-truth vertex the instance owning its nearest
/// predicted point, provided that point is closer than `radius` and, with
/// `require_box`, the vertex lies inside that instance's box.
pub fn transfer_instance_labels(
    instances: &[Instance],
    gt: &GroundTruthVertexSet,
    radius: f64,
    require_box: bool,
) -> Vec<Option<usize>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return vec![None; gt.len()];
    }
    let grid = PointGrid::new(instances, radius);
    gt.vertices
        .iter()
        .map(|v| {
            let (ii, _) = grid.nearest_within(v)?;
            (!require_box || instances[ii].bbox.contains(v)).then_some(ii)
        })
        .collect()
}

/// Per-class AP over vertex-set IoU between transferred predictions and
/// ground-truth instances. A simplified form of the usual benchmark
/// protocol: no minimum region size and no score cut-off; predictions that
/// received no vertex are left out.
pub fn instance_seg_ap(
    assignments: &[Option<usize>],
    instances: &[Instance],
    gt: &GroundTruthVertexSet,
    thr: f64,
) -> Result<MapReport, EvalError> {
    check_threshold(thr)?;
    if assignments.len() != gt.len() {
        return Err(EvalError::AssignmentLength(assignments.len(), gt.len()));
    }
    // ground-truth instance id -> (label, vertex count)
    let mut gt_inst: BTreeMap<u32, (Category, usize)> = BTreeMap::new();
    for (id, label) in gt.instance_ids.iter().zip(&gt.labels) {
        let e = gt_inst.entry(*id).or_insert_with(|| (label.clone(), 0));
        if &e.0 != label {
            return Err(EvalError::ConflictingInstanceLabel { id: *id, a: e.0.to_string(), b: label.to_string() });
        }
        e.1 += 1;
    }
    if gt_inst.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let mut pred_size = vec![0usize; instances.len()];
    let mut inter: HashMap<(usize, u32), usize> = HashMap::new();
    for (a, id) in assignments.iter().zip(&gt.instance_ids) {
        if let Some(p) = a {
            pred_size[*p] += 1;
            *inter.entry((*p, *id)).or_default() += 1;
        }
    }
    let mut classes: BTreeMap<&Category, Vec<u32>> = BTreeMap::new();
    for (id, (label, _)) in &gt_inst {
        classes.entry(label).or_default().push(*id);
    }
    let mut per_class = Vec::new();
    for (class, gt_ids) in classes {
        let preds: Vec<usize> = (0..instances.len())
            .filter(|&p| pred_size[p] > 0 && &instances[p].label == class)
            .collect();
        let scores: Vec<f64> = preds.iter().map(|&p| instances[p].score).collect();
        let ious: Vec<Vec<f64>> = preds
            .iter()
            .map(|&p| {
                gt_ids
                    .iter()
                    .map(|g| {
                        let i = inter.get(&(p, *g)).copied().unwrap_or(0);
                        let u = pred_size[p] + gt_inst[g].1 - i;
                        i as f64 / u as f64
                    })
                    .collect()
            })
            .collect();
        let ap = average_precision_from_ious(&scores, &ious, gt_ids.len(), thr)?.expect("class has ground truth");
        per_class.push((class.clone(), ap));
    }
    let mean = per_class.iter().map(|(_, ap)| ap).sum::<f64>() / per_class.len() as f64;
    Ok(MapReport { iou_threshold: thr, per_class, mean })
}
