//! Scene directories, run configuration and end-to-end orchestration.
//!
//! A scene directory holds:
//!
//! ```text
//! manifest.json            frame/object counts, image size, file hashes
//! cameras.txt              intrinsics and world-to-camera pose per frame
//! depth/<frame>.gd1        depth maps
//! masks/<frame>.txt        category masks with query/presence scores
//! vocab.txt                `<frame>: <raw vocabulary reply>` per frame
//! groups.txt               raw grouping reply (optional)
//! reference/pose.txt       reference pose of the first frame (estimated poses only)
//! reference/depth.gd1      reference depth of the first frame (estimated poses only)
//! gt_boxes.txt             ground-truth boxes (optional)
//! gt_vertices.txt          ground-truth labelled vertices (optional)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluation::{self, Detection, EvalError, GroundTruthBox, GroundTruthVertexSet, MapReport};
use crate::evidence::{run_evidence, Aabb, EvidenceError, EvidenceParams, Instance};
use crate::formats::{self, CameraRecord, FormatError, MaskEntry, MaskFrame};
use crate::fragments::{build_fragment_memory, CategoryMask, FragmentError, FragmentParams, FrameInput, FramePresence};
use crate::geometry::{align_to_reference, CameraPose, DepthMap, GeometryError, Point};
use crate::merging::{merge_fragments, MergeError, MergeParams};
use crate::vocabulary::{aggregate_vocabulary, parse_group_spec, parse_vocab_response, CompatibilityGroups, SceneVocabulary};

pub const MANIFEST: &str = "manifest.json";
pub const CAMERAS: &str = "cameras.txt";
pub const VOCAB: &str = "vocab.txt";
pub const GROUPS: &str = "groups.txt";
pub const GT_BOXES: &str = "gt_boxes.txt";
pub const GT_VERTICES: &str = "gt_vertices.txt";
pub const REFERENCE_POSE: &str = "reference/pose.txt";
pub const REFERENCE_DEPTH: &str = "reference/depth.gd1";
const MANIFEST_FORMAT: &str = "group3d-scene/1";

pub fn depth_path(frame: u32) -> String {
    format!("depth/{frame:06}.gd1")
}

pub fn masks_path(frame: u32) -> String {
    format!("masks/{frame:06}.txt")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseMode {
    /// Poses are already in the reference frame.
    Given,
    /// Poses and depth come from a reconstruction with unknown similarity;
    /// they are aligned to the reference first frame before lifting.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingMode {
    /// Geometry only: every category shares one group.
    None,
    /// Each category is its own group.
    SameCategory,
    /// Groups from the grouping reply; unlisted categories are singletons.
    CompatGroups,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub voxel_size: f64,
    pub tau_iou: f64,
    pub tau_cont: f64,
    pub tau_support: f64,
    /// Category hypotheses kept per view.
    pub k_hypotheses: usize,
    pub frame_budget: usize,
    pub pose_mode: PoseMode,
    pub grouping: GroupingMode,
    pub min_fragment_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.05,
            tau_iou: 0.01,
            tau_cont: 0.10,
            tau_support: 3.0,
            k_hypotheses: 5,
            frame_budget: 128,
            pose_mode: PoseMode::Given,
            grouping: GroupingMode::CompatGroups,
            min_fragment_points: 5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let pos = |x: f64| x > 0.0 && x.is_finite();
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !pos(self.voxel_size) {
            return bad(format!("voxel size must be positive, got {}", self.voxel_size));
        }
        if !unit(self.tau_iou) || !unit(self.tau_cont) {
            return bad(format!(
                "overlap thresholds must lie in (0, 1], got tau_iou={} tau_cont={}",
                self.tau_iou, self.tau_cont
            ));
        }
        if !pos(self.tau_support) {
            return bad(format!("support temperature must be positive, got {}", self.tau_support));
        }
        if self.k_hypotheses == 0 || self.frame_budget == 0 || self.min_fragment_points == 0 {
            return bad("K, frame budget and minimum fragment points must all be at least 1".into());
        }
        Ok(())
    }

    pub fn merge_params(&self) -> MergeParams {
        MergeParams { tau_iou: self.tau_iou, tau_cont: self.tau_cont, voxel_size: self.voxel_size }
    }

    pub fn fragment_params(&self) -> FragmentParams {
        FragmentParams { voxel_size: self.voxel_size, min_points: self.min_fragment_points }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("pose alignment: {0}")]
    Alignment(#[source] GeometryError),
    #[error("fragment lifting: {0}")]
    Fragments(#[source] FragmentError),
    #[error("merging: {0}")]
    Merging(#[source] MergeError),
    #[error("evidence: {0}")]
    Evidence(#[source] EvidenceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub pose: CameraPose,
    pub depth: DepthMap,
}

/// Everything the core consumes for one scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneBundle {
    pub frames: Vec<FrameInput>,
    /// Raw vocabulary reply per frame, aligned with `frames`.
    pub vocab_lines: Vec<String>,
    pub grouping_spec: Option<String>,
    pub reference: Option<ReferenceFrame>,
    pub gt_boxes: Option<Vec<GroundTruthBox>>,
    pub gt_vertices: Option<GroundTruthVertexSet>,
}

impl SceneBundle {
    /// Keeps a deterministic, evenly spread subset of at most `budget`
    /// frames; the first frame is always kept.
    pub fn sample_frames(&mut self, budget: usize) {
        let keep = sample_indices(self.frames.len(), budget);
        if keep.len() == self.frames.len() {
            return;
        }
        retain_indices(&mut self.frames, &keep);
        retain_indices(&mut self.vocab_lines, &keep);
    }

    pub fn object_count(&self) -> usize {
        self.gt_boxes.as_ref().map_or(0, Vec::len)
    }
}

/// Keeps the elements at the sorted positions `keep`.
fn retain_indices<T>(v: &mut Vec<T>, keep: &[usize]) {
    let mut k = keep.iter().peekable();
    let mut i = 0;
    v.retain(|_| {
        let hit = k.peek() == Some(&&i);
        if hit {
            k.next();
        }
        i += 1;
        hit
    });
}

/// `⌊i · total / budget⌋` for `i < budget`, or every index when the budget
/// covers all frames.
pub fn sample_indices(total: usize, budget: usize) -> Vec<usize> {
    if budget >= total {
        return (0..total).collect();
    }
    (0..budget).map(|i| i * total / budget).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub frames: usize,
    pub objects: usize,
    pub width: usize,
    pub height: usize,
    pub pose_mode: PoseMode,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn frame_to_record(f: &FrameInput) -> CameraRecord {
    CameraRecord { frame: f.frame, intrinsics: f.intrinsics, pose: f.pose }
}

fn frame_to_masks(f: &FrameInput) -> MaskFrame {
    MaskFrame {
        frame: f.frame,
        height: f.depth.height,
        width: f.depth.width,
        entries: f
            .masks
            .iter()
            .map(|m| MaskEntry {
                category: m.category.clone(),
                s_query: m.s_query,
                s_pres: f.presence.get(&m.category).unwrap_or(0.0),
                mask: m.mask.clone(),
            })
            .collect(),
    }
}

/// Serializes a bundle into `(relative path, bytes)` pairs in emission order.
pub fn encode_scene(bundle: &SceneBundle) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let cams: Vec<CameraRecord> = bundle.frames.iter().map(frame_to_record).collect();
    files.push((CAMERAS.to_string(), formats::encode_cameras(&cams).into_bytes()));
    for f in &bundle.frames {
        files.push((depth_path(f.frame), formats::encode_depth(&f.depth)));
        files.push((masks_path(f.frame), formats::encode_masks(&frame_to_masks(f)).into_bytes()));
    }
    let mut vocab = String::new();
    for (f, line) in bundle.frames.iter().zip(&bundle.vocab_lines) {
        let _ = writeln!(vocab, "{}: {}", f.frame, line.replace(['\n', '\r'], " "));
    }
    files.push((VOCAB.to_string(), vocab.into_bytes()));
    if let Some(g) = &bundle.grouping_spec {
        files.push((GROUPS.to_string(), g.clone().into_bytes()));
    }
    if let Some(r) = &bundle.reference {
        files.push((REFERENCE_POSE.to_string(), formats::encode_pose(&r.pose).into_bytes()));
        files.push((REFERENCE_DEPTH.to_string(), formats::encode_depth(&r.depth)));
    }
    if let Some(b) = &bundle.gt_boxes {
        files.push((GT_BOXES.to_string(), formats::encode_gt_boxes(b).into_bytes()));
    }
    if let Some(v) = &bundle.gt_vertices {
        files.push((GT_VERTICES.to_string(), formats::encode_gt_vertices(v).into_bytes()));
    }
    files
}

/// Writes a bundle and its manifest. Files are written sequentially in
/// frame order; the manifest comes last.
pub fn write_scene(dir: &Path, bundle: &SceneBundle) -> Result<Manifest, FormatError> {
    let files = encode_scene(bundle);
    let mut entries = Vec::with_capacity(files.len());
    for (rel, bytes) in &files {
        formats::write_file(&dir.join(rel), bytes)?;
        entries.push(ManifestEntry { path: rel.clone(), sha256: sha256_hex(bytes) });
    }
    let (width, height) = bundle.frames.first().map_or((0, 0), |f| (f.depth.width, f.depth.height));
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        frames: bundle.frames.len(),
        objects: bundle.object_count(),
        width,
        height,
        pose_mode: if bundle.reference.is_some() { PoseMode::Estimated } else { PoseMode::Given },
        files: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    formats::write_file(&dir.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, FormatError> {
    let path = dir.join(MANIFEST);
    let text = formats::read_text(&path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| FormatError::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if m.format != MANIFEST_FORMAT {
        return Err(FormatError::Validation(format!(
            "{}: unsupported format '{}'",
            path.display(),
            m.format
        )));
    }
    Ok(m)
}

fn parse_vocab_file(path: &Path, text: &str) -> Result<HashMap<u32, String>, FormatError> {
    let mut out = HashMap::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let parsed = l.split_once(':').and_then(|(id, rest)| Some((id.trim().parse::<u32>().ok()?, rest)));
        let Some((id, rest)) = parsed else {
            return Err(FormatError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected '<frame>: <categories>'".into(),
            });
        };
        out.insert(id, rest.strip_prefix(' ').unwrap_or(rest).to_string());
    }
    Ok(out)
}

fn masks_to_frame_parts(path: &Path, m: MaskFrame) -> Result<(Vec<CategoryMask>, FramePresence), FormatError> {
    let mut presence = FramePresence { frame: m.frame, scores: HashMap::new() };
    let mut masks = Vec::with_capacity(m.entries.len());
    for e in m.entries {
        if let Some(prev) = presence.scores.insert(e.category.clone(), e.s_pres) {
            if prev != e.s_pres {
                return Err(FormatError::Validation(format!(
                    "{}: conflicting presence scores {prev} and {} for '{}'",
                    path.display(),
                    e.s_pres,
                    e.category
                )));
            }
        }
        masks.push(CategoryMask { frame: m.frame, category: e.category, mask: e.mask, s_query: e.s_query });
    }
    Ok((masks, presence))
}

fn load_optional(dir: &Path, rel: &str) -> Result<Option<Vec<u8>>, FormatError> {
    let path = dir.join(rel);
    match std::fs::read(&path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(FormatError::io(&path, e)),
    }
}

fn utf8(path: &Path, bytes: Vec<u8>) -> Result<String, FormatError> {
    String::from_utf8(bytes).map_err(|_| FormatError::Validation(format!("{}: not UTF-8", path.display())))
}

/// Loads and validates a scene directory, then keeps at most `frame_budget`
/// frames (see [`sample_indices`]). A missing grouping file leaves
/// `grouping_spec` empty, which downstream means all-singleton groups.
pub fn load_scene(dir: &Path, frame_budget: usize) -> Result<SceneBundle, FormatError> {
    let manifest = read_manifest(dir)?;
    let cam_path = dir.join(CAMERAS);
    let cams = formats::decode_cameras(&formats::read_text(&cam_path)?).map_err(|e| e.at(&cam_path))?;
    if cams.len() != manifest.frames {
        return Err(FormatError::Validation(format!(
            "{}: manifest declares {} frames, found {}",
            cam_path.display(),
            manifest.frames,
            cams.len()
        )));
    }
    let vocab_path = dir.join(VOCAB);
    let vocab = parse_vocab_file(&vocab_path, &formats::read_text(&vocab_path)?)?;

    let mut bundle = SceneBundle::default();
    let mut seen = std::collections::HashSet::new();
    for cam in cams {
        if !seen.insert(cam.frame) {
            return Err(FormatError::Validation(format!("{}: duplicate frame {}", cam_path.display(), cam.frame)));
        }
        let k = cam.intrinsics;
        if (k.width, k.height) != (manifest.width, manifest.height) {
            return Err(FormatError::Validation(format!(
                "{}: frame {} is {}x{}, manifest says {}x{}",
                cam_path.display(),
                cam.frame,
                k.width,
                k.height,
                manifest.width,
                manifest.height
            )));
        }
        let dpath = dir.join(depth_path(cam.frame));
        let depth = formats::decode_depth(&formats::read_bytes(&dpath)?).map_err(|e| e.at(&dpath))?;
        let mpath = dir.join(masks_path(cam.frame));
        let mframe = formats::decode_masks(&formats::read_text(&mpath)?).map_err(|e| e.at(&mpath))?;
        let dims_ok = (depth.width, depth.height) == (k.width, k.height)
            && (mframe.width, mframe.height) == (k.width, k.height);
        if !dims_ok || mframe.frame != cam.frame {
            return Err(FormatError::Validation(format!(
                "frame {}: depth {}x{}, masks {}x{} (frame {}), camera {}x{}",
                cam.frame, depth.width, depth.height, mframe.width, mframe.height, mframe.frame, k.width, k.height
            )));
        }
        let (masks, presence) = masks_to_frame_parts(&mpath, mframe)?;
        bundle.vocab_lines.push(vocab.get(&cam.frame).cloned().unwrap_or_default());
        bundle.frames.push(FrameInput { frame: cam.frame, intrinsics: k, pose: cam.pose, depth, masks, presence });
    }

    if let Some(b) = load_optional(dir, GROUPS)? {
        bundle.grouping_spec = Some(utf8(&dir.join(GROUPS), b)?);
    }
    if let Some(b) = load_optional(dir, REFERENCE_POSE)? {
        let ppath = dir.join(REFERENCE_POSE);
        let pose = formats::decode_pose(&utf8(&ppath, b)?).map_err(|e| e.at(&ppath))?;
        let dpath = dir.join(REFERENCE_DEPTH);
        let depth = formats::decode_depth(&formats::read_bytes(&dpath)?).map_err(|e| e.at(&dpath))?;
        bundle.reference = Some(ReferenceFrame { pose, depth });
    }
    if let Some(b) = load_optional(dir, GT_BOXES)? {
        let p = dir.join(GT_BOXES);
        bundle.gt_boxes = Some(formats::decode_gt_boxes(&utf8(&p, b)?).map_err(|e| e.at(&p))?);
    }
    if let Some(b) = load_optional(dir, GT_VERTICES)? {
        let p = dir.join(GT_VERTICES);
        bundle.gt_vertices = Some(formats::decode_gt_vertices(&utf8(&p, b)?).map_err(|e| e.at(&p))?);
    }
    if let Some(gt) = &bundle.gt_boxes {
        if gt.len() != manifest.objects {
            return Err(FormatError::Validation(format!(
                "manifest declares {} objects, {} lists {}",
                manifest.objects,
                GT_BOXES,
                gt.len()
            )));
        }
    }
    verify_hashes(dir, &manifest)?;
    bundle.sample_frames(frame_budget);
    Ok(bundle)
}

fn verify_hashes(dir: &Path, manifest: &Manifest) -> Result<(), FormatError> {
    for e in &manifest.files {
        let path = dir.join(&e.path);
        let bytes = formats::read_bytes(&path)?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(FormatError::Validation(format!("{}: content hash does not match manifest", path.display())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub vocabulary: SceneVocabulary,
    pub groups: CompatibilityGroups,
    pub fragment_count: usize,
    pub instances: Vec<Instance>,
}

impl PipelineOutput {
    pub fn detections(&self) -> Vec<Detection> {
        self.instances.iter().map(Detection::from).collect()
    }
}

pub fn build_groups(mode: GroupingMode, spec: Option<&str>, vocab: &SceneVocabulary) -> CompatibilityGroups {
    match (mode, spec) {
        (GroupingMode::None, _) => CompatibilityGroups::universal(vocab),
        (GroupingMode::SameCategory, _) | (GroupingMode::CompatGroups, None) => CompatibilityGroups::singletons(vocab),
        (GroupingMode::CompatGroups, Some(text)) => parse_group_spec(text, vocab),
    }
}

/// vocabulary → grouping → (alignment) → fragments → merging → evidence.
pub fn run_pipeline(bundle: &SceneBundle, config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let per_view: Vec<_> = bundle.vocab_lines.iter().map(|l| parse_vocab_response(l, config.k_hypotheses)).collect();
    let vocabulary = aggregate_vocabulary(&per_view);
    let groups = build_groups(config.grouping, bundle.grouping_spec.as_deref(), &vocabulary);
    log::debug!("vocabulary: {} categories, {} explicit groups", vocabulary.len(), groups.explicit_groups().len());

    let alignment = match config.pose_mode {
        PoseMode::Given => None,
        PoseMode::Estimated => {
            let reference = bundle
                .reference
                .as_ref()
                .ok_or_else(|| PipelineError::Config("estimated pose mode needs a reference frame".into()))?;
            let first = bundle
                .frames
                .first()
                .ok_or_else(|| PipelineError::Config("estimated pose mode needs at least one frame".into()))?;
            Some(
                align_to_reference(&first.pose, &reference.pose, &first.depth, &reference.depth)
                    .map_err(PipelineError::Alignment)?,
            )
        }
    };

    // Masks for categories outside the kept vocabulary were never prompted.
    let filtered;
    let frames: &[FrameInput] = if bundle.frames.iter().flat_map(|f| &f.masks).all(|m| vocabulary.contains(&m.category)) {
        &bundle.frames
    } else {
        filtered = bundle
            .frames
            .iter()
            .map(|f| {
                let mut f = f.clone();
                f.masks.retain(|m| vocabulary.contains(&m.category));
                f
            })
            .collect::<Vec<_>>();
        &filtered
    };
    let memory = build_fragment_memory(frames, &vocabulary, alignment.as_ref(), &config.fragment_params())
        .map_err(PipelineError::Fragments)?;
    let clusters = merge_fragments(&memory, &groups, &config.merge_params()).map_err(PipelineError::Merging)?;
    let instances = run_evidence(&clusters, &EvidenceParams { tau_support: config.tau_support })
        .map_err(PipelineError::Evidence)?;
    log::info!("{} fragments -> {} instances", memory.len(), instances.len());
    Ok(PipelineOutput { vocabulary, groups, fragment_count: memory.len(), instances })
}

/// Box mAP at each threshold.
pub fn evaluate_boxes(dets: &[Detection], gt: &[GroundTruthBox], thresholds: &[f64]) -> Result<Vec<MapReport>, EvalError> {
    thresholds.iter().map(|&t| evaluation::mean_ap(dets, gt, t)).collect()
}

/// Nearest-point radius for instance-segmentation label transfer, in metres.
pub const TRANSFER_RADIUS: f64 = 0.05;

/// Rejoins a detection list with its points file. Boxes are recomputed from
/// the points so containment tests do not see the rounding of the detection
/// file.
pub fn instances_from_files(dets: Vec<Detection>, points: Vec<Vec<Point>>) -> Result<Vec<Instance>, FormatError> {
    if dets.len() != points.len() {
        return Err(FormatError::Validation(format!(
            "{} detections but {} point sets",
            dets.len(),
            points.len()
        )));
    }
    dets.into_iter()
        .zip(points)
        .enumerate()
        .map(|(i, (d, pts))| {
            let bbox = Aabb::from_points(&pts)
                .ok_or_else(|| FormatError::Validation(format!("instance {i} has no points")))?;
            Ok(Instance { label: d.label, score: d.score, bbox, support: 0, points: pts })
        })
        .collect()
}

/// Instance-segmentation AP at each threshold after transferring instance
/// ids to the ground-truth vertices.
pub fn evaluate_instance_seg(
    instances: &[Instance],
    gt: &GroundTruthVertexSet,
    thresholds: &[f64],
) -> Result<Vec<MapReport>, EvalError> {
    let assignments = evaluation::transfer_instance_labels(instances, gt, TRANSFER_RADIUS, true);
    thresholds.iter().map(|&t| evaluation::instance_seg_ap(&assignments, instances, gt, t)).collect()
}

/// Per-class table followed by one `metric value` line per report.
pub fn format_reports(title: &str, reports: &[MapReport]) -> String {
    let mut out = String::new();
    if reports.is_empty() {
        return out;
    }
    let _ = write!(out, "{:<24}", "class");
    for r in reports {
        let _ = write!(out, " {:>9}", format!("AP@{:.2}", r.iou_threshold));
    }
    out.push('\n');
    for (i, (cat, _)) in reports[0].per_class.iter().enumerate() {
        let _ = write!(out, "{:<24}", cat.as_str());
        for r in reports {
            let _ = write!(out, " {:>9.4}", r.per_class[i].1);
        }
        out.push('\n');
    }
    for r in reports {
        let _ = writeln!(out, "{title}@{:.2} {:.6}", r.iou_threshold, r.mean);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_uniform_and_keeps_first() {
        assert_eq!(sample_indices(10, 4), vec![0, 2, 5, 7]);
        assert_eq!(sample_indices(3, 128), vec![0, 1, 2]);
        assert_eq!(sample_indices(256, 128).len(), 128);
        assert!(sample_indices(0, 5).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        for bad in [
            PipelineConfig { voxel_size: 0.0, ..Default::default() },
            PipelineConfig { tau_iou: 1.5, ..Default::default() },
            PipelineConfig { tau_cont: 0.0, ..Default::default() },
            PipelineConfig { tau_support: -1.0, ..Default::default() },
            PipelineConfig { k_hypotheses: 0, ..Default::default() },
            PipelineConfig { frame_budget: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(PipelineError::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn empty_bundle_yields_no_instances() {
        let out = run_pipeline(&SceneBundle::default(), &PipelineConfig::default()).unwrap();
        assert!(out.instances.is_empty());
        assert_eq!(out.fragment_count, 0);
    }

    #[test]
    fn estimated_mode_requires_reference() {
        let cfg = PipelineConfig { pose_mode: PoseMode::Estimated, ..Default::default() };
        assert!(matches!(run_pipeline(&SceneBundle::default(), &cfg), Err(PipelineError::Config(_))));
    }

    #[test]
    fn vocab_file_parsing() {
        let m = parse_vocab_file(Path::new("v"), "0: chair, table\n\n12: sofa: big\n").unwrap();
        assert_eq!(m[&0], "chair, table");
        assert_eq!(m[&12], "sofa: big");
        let err = parse_vocab_file(Path::new("v"), "0: a\nx: b\n").unwrap_err();
        assert!(matches!(err, FormatError::Parse { line: 2, .. }));
    }

    #[test]
    fn report_layout() {
        let r = MapReport {
            iou_threshold: 0.25,
            per_class: vec![(crate::vocabulary::Category::parse("chair").unwrap(), 1.0)],
            mean: 1.0,
        };
        let s = format_reports("mAP", &[r]);
        assert!(s.contains("chair"));
        assert!(s.ends_with("mAP@0.25 1.000000\n"));
    }
}
