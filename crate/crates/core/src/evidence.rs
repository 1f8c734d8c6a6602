//! Multi-view evidence accumulation: label scoring, argmax labeling and box
//! extraction for merged clusters.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Point;
use crate::merging::Cluster;
use crate::vocabulary::Category;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("support temperature must be positive, got {0}")]
    InvalidTau(f64),
    #[error("support count must be non-negative, got {0}")]
    NegativeSupport(f64),
    #[error("cluster has no points")]
    EmptyCluster,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceParams {
    pub tau_support: f64,
}

impl Default for EvidenceParams {
    fn default() -> Self {
        Self { tau_support: 3.0 }
    }
}

/// Axis-aligned box, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn new(min: Point, max: Point) -> Option<Self> {
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Self { min, max })
    }

    pub fn from_points(points: &[Point]) -> Option<Self> {
        let first = points.first()?;
        let (mut lo, mut hi) = (*first, *first);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some(Self { min: lo, max: hi })
    }

    pub fn volume(&self) -> f64 {
        let d = self.max - self.min;
        d.x * d.y * d.z
    }

    /// Closed-box membership.
    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

/// `w(x) = 1 − exp(−x/τ)`.
pub fn support_weight(x: f64, tau: f64) -> Result<f64, EvidenceError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(EvidenceError::InvalidTau(tau));
    }
    if x < 0.0 || x.is_nan() {
        return Err(EvidenceError::NegativeSupport(x));
    }
    Ok(-(-x / tau).exp_m1())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelScore {
    pub category: Category,
    pub mean_confidence: f64,
    pub support: usize,
    pub score: f64,
    pub first_fragment: usize,
}

/// `s(ℓ) = mean confidence(ℓ) · w(N(ℓ))` for every label in the cluster.
pub fn score_labels(cluster: &Cluster, params: &EvidenceParams) -> Result<Vec<LabelScore>, EvidenceError> {
    cluster
        .labels
        .iter()
        .map(|r| {
            let n = r.confidences.len();
            let mean = r.confidences.iter().sum::<f64>() / n as f64;
            Ok(LabelScore {
                category: r.category.clone(),
                mean_confidence: mean,
                support: n,
                score: mean * support_weight(n as f64, params.tau_support)?,
                first_fragment: r.first_fragment,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub label: Category,
    pub score: f64,
    pub bbox: Aabb,
    /// Number of fragments carrying the winning label.
    pub support: usize,
    pub points: Vec<Point>,
}

impl Instance {
    pub fn point_count(&self) -> usize {
        self.points.len()
    }
}

/// Picks the highest-scoring label (ties go to the label seen in the
/// earliest fragment) and boxes the cluster's points.
pub fn finalize_instance(cluster: &Cluster, params: &EvidenceParams) -> Result<Instance, EvidenceError> {
    let bbox = Aabb::from_points(&cluster.points).ok_or(EvidenceError::EmptyCluster)?;
    let scores = score_labels(cluster, params)?;
    let best = scores
        .into_iter()
        .reduce(|best, s| {
            let better = s.score > best.score || (s.score == best.score && s.first_fragment < best.first_fragment);
            if better {
                s
            } else {
                best
            }
        })
        .ok_or(EvidenceError::EmptyCluster)?;
    Ok(Instance {
        label: best.category,
        score: best.score,
        bbox,
        support: best.support,
        points: cluster.points.clone(),
    })
}

pub fn run_evidence(clusters: &[Cluster], params: &EvidenceParams) -> Result<Vec<Instance>, EvidenceError> {
    clusters.par_iter().map(|c| finalize_instance(c, params)).collect()
}
