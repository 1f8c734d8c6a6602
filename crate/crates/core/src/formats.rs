//! Readers and writers for every on-disk format the pipeline exchanges.
//!
//! | file            | format                                                    |
//! |-----------------|-----------------------------------------------------------|
//! | depth           | `GD1 <w> <h>\n` + `w*h` little-endian f32, row-major      |
//! | masks           | `frame`, `size <H> <W>`, then `cat <name> <sq> <sp>` + RLE |
//! | cameras         | one `frame <id> K fx fy cx cy w h R r00..r22 t tx ty tz` line per frame |
//! | detections      | `label <name> score <s> box <6 floats>`                   |
//! | GT boxes        | `label <name> box <6 floats>`                             |
//! | GT vertices     | `GV1 <n>` then `x y z instance_id label`                  |
//! | instance points | `GP1 <n>` then per instance `instance <i> <count>` + xyz  |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::evaluation::{Detection, GroundTruthBox, GroundTruthVertexSet};
use crate::evidence::{Aabb, Instance};
use crate::geometry::{BinaryMask, CameraIntrinsics, CameraPose, DepthMap, Point};
use crate::vocabulary::Category;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Validation(String),
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    /// Attaches a file name to a parse error produced from in-memory text.
    pub fn at(self, path: &Path) -> Self {
        match self {
            Self::Parse { line, msg, .. } => Self::Parse { path: path.to_path_buf(), line, msg },
            other => other,
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|e| FormatError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T, FormatError> {
    let tok = tok.ok_or_else(|| FormatError::parse(Path::new(""), line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| FormatError::parse(Path::new(""), line, format!("bad {what} '{tok}'")))
}

fn expect_word(tok: Option<&str>, word: &str, line: usize) -> Result<(), FormatError> {
    match tok {
        Some(t) if t == word => Ok(()),
        other => Err(FormatError::parse(
            Path::new(""),
            line,
            format!("expected '{word}', found '{}'", other.unwrap_or("<end of line>")),
        )),
    }
}

// ---------------------------------------------------------------- depth

const DEPTH_MAGIC: &str = "GD1";

pub fn encode_depth(d: &DepthMap) -> Vec<u8> {
    let mut out = format!("{DEPTH_MAGIC} {} {}\n", d.width, d.height).into_bytes();
    out.reserve(d.values.len() * 4);
    for v in &d.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap, FormatError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::parse(Path::new(""), 1, "missing depth header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| FormatError::parse(Path::new(""), 1, "header is not UTF-8"))?;
    let mut it = header.split_whitespace();
    expect_word(it.next(), DEPTH_MAGIC, 1)?;
    let width: usize = parse_num(it.next(), "width", 1)?;
    let height: usize = parse_num(it.next(), "height", 1)?;
    if it.next().is_some() {
        return Err(FormatError::parse(Path::new(""), 1, "trailing tokens in depth header"));
    }
    let body = &bytes[nl + 1..];
    let expected = width * height * 4;
    if body.len() != expected {
        return Err(FormatError::parse(
            Path::new(""),
            1,
            format!("expected {expected} bytes of depth data, found {}", body.len()),
        ));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    DepthMap::new(width, height, values).map_err(|e| FormatError::Validation(e.to_string()))
}

// ---------------------------------------------------------------- masks

#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub category: Category,
    pub s_query: f64,
    pub s_pres: f64,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskFrame {
    pub frame: u32,
    pub height: usize,
    pub width: usize,
    pub entries: Vec<MaskEntry>,
}

pub fn encode_masks(m: &MaskFrame) -> String {
    let mut out = format!("frame {}\nsize {} {}\n", m.frame, m.height, m.width);
    for e in &m.entries {
        let _ = writeln!(out, "cat {} {} {}", e.category, e.s_query, e.s_pres);
        let runs: Vec<String> = e.mask.to_runs().iter().map(|(s, l)| format!("{s}:{l}")).collect();
        out.push_str(&runs.join(" "));
        out.push('\n');
    }
    out
}

pub fn decode_masks(text: &str) -> Result<MaskFrame, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = |what: &str| {
        lines
            .next()
            .ok_or_else(|| FormatError::parse(Path::new(""), 0, format!("unexpected end of file, expected {what}")))
    };
    let (n, l) = next_line("frame header")?;
    let mut it = l.split_whitespace();
    expect_word(it.next(), "frame", n)?;
    let frame: u32 = parse_num(it.next(), "frame id", n)?;
    let (n, l) = next_line("size header")?;
    let mut it = l.split_whitespace();
    expect_word(it.next(), "size", n)?;
    let height: usize = parse_num(it.next(), "height", n)?;
    let width: usize = parse_num(it.next(), "width", n)?;
    let mut entries = Vec::new();
    while let Some((n, l)) = lines.next() {
        if l.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.first() != Some(&"cat") || toks.len() < 4 {
            return Err(FormatError::parse(Path::new(""), n, "expected 'cat <name> <s_query> <s_pres>'"));
        }
        let s_query: f64 = parse_num(Some(toks[toks.len() - 2]), "s_query", n)?;
        let s_pres: f64 = parse_num(Some(toks[toks.len() - 1]), "s_pres", n)?;
        let name = toks[1..toks.len() - 2].join(" ");
        let category = Category::canonicalize(&name)
            .ok_or_else(|| FormatError::parse(Path::new(""), n, "empty category name"))?;
        let (rn, rle) = lines
            .next()
            .ok_or_else(|| FormatError::parse(Path::new(""), n, "missing run-length line"))?;
        let mut runs = Vec::new();
        for tok in rle.split_whitespace() {
            let (s, len) = tok
                .split_once(':')
                .ok_or_else(|| FormatError::parse(Path::new(""), rn, format!("bad run '{tok}'")))?;
            runs.push((parse_num(Some(s), "run start", rn)?, parse_num(Some(len), "run length", rn)?));
        }
        let mask = BinaryMask::from_runs(width, height, &runs)
            .map_err(|e| FormatError::parse(Path::new(""), rn, e.to_string()))?;
        entries.push(MaskEntry { category, s_query, s_pres, mask });
    }
    Ok(MaskFrame { frame, height, width, entries })
}

// ---------------------------------------------------------------- cameras

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub frame: u32,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

fn fmt_pose(out: &mut String, pose: &CameraPose) {
    out.push_str(" R");
    for r in 0..3 {
        for c in 0..3 {
            let _ = write!(out, " {:?}", pose.rotation[(r, c)]);
        }
    }
    out.push_str(" t");
    for v in pose.translation.iter() {
        let _ = write!(out, " {v:?}");
    }
}

fn parse_pose<'a>(it: &mut impl Iterator<Item = &'a str>, n: usize) -> Result<CameraPose, FormatError> {
    expect_word(it.next(), "R", n)?;
    let mut r = [0.0; 9];
    for v in r.iter_mut() {
        *v = parse_num(it.next(), "rotation entry", n)?;
    }
    expect_word(it.next(), "t", n)?;
    let mut t = [0.0; 3];
    for v in t.iter_mut() {
        *v = parse_num(it.next(), "translation entry", n)?;
    }
    CameraPose::new(Matrix3::from_row_slice(&r), Vector3::from(t))
        .map_err(|e| FormatError::parse(Path::new(""), n, e.to_string()))
}

pub fn encode_cameras(cams: &[CameraRecord]) -> String {
    let mut out = String::new();
    for c in cams {
        let k = &c.intrinsics;
        let _ = write!(out, "frame {} K {:?} {:?} {:?} {:?} {} {}", c.frame, k.fx, k.fy, k.cx, k.cy, k.width, k.height);
        fmt_pose(&mut out, &c.pose);
        out.push('\n');
    }
    out
}

pub fn decode_cameras(text: &str) -> Result<Vec<CameraRecord>, FormatError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let n = i + 1;
        if l.trim().is_empty() || l.trim_start().starts_with('#') {
            continue;
        }
        let mut it = l.split_whitespace();
        expect_word(it.next(), "frame", n)?;
        let frame = parse_num(it.next(), "frame id", n)?;
        expect_word(it.next(), "K", n)?;
        let fx = parse_num(it.next(), "fx", n)?;
        let fy = parse_num(it.next(), "fy", n)?;
        let cx = parse_num(it.next(), "cx", n)?;
        let cy = parse_num(it.next(), "cy", n)?;
        let w = parse_num(it.next(), "width", n)?;
        let h = parse_num(it.next(), "height", n)?;
        let intrinsics =
            CameraIntrinsics::new(fx, fy, cx, cy, w, h).map_err(|e| FormatError::parse(Path::new(""), n, e.to_string()))?;
        let pose = parse_pose(&mut it, n)?;
        out.push(CameraRecord { frame, intrinsics, pose });
    }
    Ok(out)
}

pub fn encode_pose(pose: &CameraPose) -> String {
    let mut out = String::from("pose");
    fmt_pose(&mut out, pose);
    out.push('\n');
    out
}

pub fn decode_pose(text: &str) -> Result<CameraPose, FormatError> {
    let (i, l) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| FormatError::parse(Path::new(""), 1, "empty pose file"))?;
    let mut it = l.split_whitespace();
    expect_word(it.next(), "pose", i + 1)?;
    parse_pose(&mut it, i + 1)
}

// ---------------------------------------------------------------- boxes

fn fmt_box(out: &mut String, b: &Aabb) {
    let _ = write!(
        out,
        "box {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    );
}

/// Splits `label <name...> <keyword> ...` into the name and the remaining
/// tokens starting at `keyword`.
fn split_label<'a>(toks: &'a [&'a str], keyword: &str, n: usize) -> Result<(Category, &'a [&'a str]), FormatError> {
    if toks.first() != Some(&"label") {
        return Err(FormatError::parse(Path::new(""), n, "expected 'label'"));
    }
    let k = toks
        .iter()
        .rposition(|t| *t == keyword)
        .ok_or_else(|| FormatError::parse(Path::new(""), n, format!("missing '{keyword}'")))?;
    let label = Category::canonicalize(&toks[1..k].join(" "))
        .ok_or_else(|| FormatError::parse(Path::new(""), n, "empty label"))?;
    Ok((label, &toks[k..]))
}

fn parse_box(toks: &[&str], n: usize) -> Result<Aabb, FormatError> {
    let mut it = toks.iter().copied();
    expect_word(it.next(), "box", n)?;
    let mut v = [0.0f64; 6];
    for x in v.iter_mut() {
        *x = parse_num(it.next(), "box coordinate", n)?;
    }
    if it.next().is_some() {
        return Err(FormatError::parse(Path::new(""), n, "trailing tokens after box"));
    }
    Aabb::new(Point::new(v[0], v[1], v[2]), Point::new(v[3], v[4], v[5]))
        .ok_or_else(|| FormatError::parse(Path::new(""), n, "box min exceeds max"))
}

pub fn encode_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let _ = write!(out, "label {} score {:.6} ", d.label, d.score);
        fmt_box(&mut out, &d.bbox);
        out.push('\n');
    }
    out
}

pub fn decode_detections(text: &str) -> Result<Vec<Detection>, FormatError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let n = i + 1;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let (label, rest) = split_label(&toks, "score", n)?;
        let score: f64 = parse_num(rest.get(1).copied(), "score", n)?;
        let bbox = parse_box(&rest[2.min(rest.len())..], n)?;
        out.push(Detection { label, score, bbox });
    }
    Ok(out)
}

pub fn encode_gt_boxes(gts: &[GroundTruthBox]) -> String {
    let mut out = String::new();
    for g in gts {
        let _ = write!(out, "label {} ", g.label);
        fmt_box(&mut out, &g.bbox);
        out.push('\n');
    }
    out
}

pub fn decode_gt_boxes(text: &str) -> Result<Vec<GroundTruthBox>, FormatError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let n = i + 1;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let (label, rest) = split_label(&toks, "box", n)?;
        out.push(GroundTruthBox { label, bbox: parse_box(rest, n)? });
    }
    Ok(out)
}

// ---------------------------------------------------------------- vertices

pub fn encode_gt_vertices(gt: &GroundTruthVertexSet) -> String {
    let mut out = format!("GV1 {}\n", gt.len());
    for ((p, id), label) in gt.vertices.iter().zip(&gt.instance_ids).zip(&gt.labels) {
        let _ = writeln!(out, "{:?} {:?} {:?} {} {}", p.x, p.y, p.z, id, label);
    }
    out
}

pub fn decode_gt_vertices(text: &str) -> Result<GroundTruthVertexSet, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, header) = lines.next().ok_or_else(|| FormatError::parse(Path::new(""), 1, "empty vertex file"))?;
    let mut it = header.split_whitespace();
    expect_word(it.next(), "GV1", n)?;
    let count: usize = parse_num(it.next(), "vertex count", n)?;
    let mut gt = GroundTruthVertexSet::default();
    for (n, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 5 {
            return Err(FormatError::parse(Path::new(""), n, "expected 'x y z instance_id label'"));
        }
        let x = parse_num(Some(toks[0]), "x", n)?;
        let y = parse_num(Some(toks[1]), "y", n)?;
        let z = parse_num(Some(toks[2]), "z", n)?;
        let id = parse_num(Some(toks[3]), "instance id", n)?;
        let label = Category::canonicalize(&toks[4..].join(" "))
            .ok_or_else(|| FormatError::parse(Path::new(""), n, "empty label"))?;
        gt.vertices.push(Point::new(x, y, z));
        gt.instance_ids.push(id);
        gt.labels.push(label);
    }
    if gt.len() != count {
        return Err(FormatError::parse(
            Path::new(""),
            1,
            format!("header declares {count} vertices, found {}", gt.len()),
        ));
    }
    Ok(gt)
}

// ---------------------------------------------------------------- instance points

pub fn encode_instance_points(instances: &[Instance]) -> String {
    let mut out = format!("GP1 {}\n", instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let _ = writeln!(out, "instance {} {}", i, inst.points.len());
        for p in &inst.points {
            let _ = writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
        }
    }
    out
}

pub fn decode_instance_points(text: &str) -> Result<Vec<Vec<Point>>, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, header) = lines.next().ok_or_else(|| FormatError::parse(Path::new(""), 1, "empty points file"))?;
    let mut it = header.split_whitespace();
    expect_word(it.next(), "GP1", n)?;
    let count: usize = parse_num(it.next(), "instance count", n)?;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let (n, l) = lines
            .next()
            .ok_or_else(|| FormatError::parse(Path::new(""), 0, format!("missing instance {k}")))?;
        let mut it = l.split_whitespace();
        expect_word(it.next(), "instance", n)?;
        let idx: usize = parse_num(it.next(), "instance index", n)?;
        if idx != k {
            return Err(FormatError::parse(Path::new(""), n, format!("expected instance {k}, found {idx}")));
        }
        let np: usize = parse_num(it.next(), "point count", n)?;
        let mut pts = Vec::with_capacity(np);
        for _ in 0..np {
            let (n, l) = lines
                .next()
                .ok_or_else(|| FormatError::parse(Path::new(""), 0, "truncated point list"))?;
            let mut it = l.split_whitespace();
            let x = parse_num(it.next(), "x", n)?;
            let y = parse_num(it.next(), "y", n)?;
            let z = parse_num(it.next(), "z", n)?;
            pts.push(Point::new(x, y, z));
        }
        out.push(pts);
    }
    Ok(out)
}
