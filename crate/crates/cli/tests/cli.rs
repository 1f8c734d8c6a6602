use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"{
  "room_min": [0, 0, 0],
  "room_max": [6, 6, 3],
  "objects": [
    {"label": "sofa", "min": [1.0, 1.0, 0.0], "max": [2.0, 1.8, 0.8], "synonyms": ["couch"]},
    {"label": "table", "min": [3.5, 3.5, 0.0], "max": [4.3, 4.5, 0.7]},
    {"label": "cabinet", "min": [1.2, 4.0, 0.0], "max": [1.8, 4.6, 1.1]}
  ],
  "cameras": {"count": 20, "radius": 2.6, "height": 1.8, "target_height": 0.4, "phase": 0.3},
  "seed": 3
}"#;

fn group3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_group3d")).args(args).output().expect("spawn group3d")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_scene(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    fs::write(&spec, SPEC).unwrap();
    let scene = dir.join("scene");
    let out = group3d(&["synth", "--spec", s(&spec), "--seed", "11", "--out", s(&scene)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    scene
}

#[test]
fn synth_run_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth_scene(tmp.path());
    let dets = tmp.path().join("dets.txt");
    let out = group3d(&["run", "--scene", s(&scene), "--out", s(&dets)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dets.with_extension("txt.points").exists());

    let out = group3d(&["eval", "--pred", s(&dets), "--gt", s(&scene), "--iou", "0.25,0.50", "--instance-seg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mAP@0.25 1.000000"), "{text}");
    assert!(text.contains("mAP@0.50 1.000000"), "{text}");
    assert!(text.contains("inst-mAP@0.25 1.000000"), "{text}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth_scene(tmp.path());
    let mut files = Vec::new();
    for (i, grouping) in ["compat-groups", "compat-groups", "same-category", "none"].iter().enumerate() {
        let dets = tmp.path().join(format!("dets{i}.txt"));
        let out = group3d(&["run", "--scene", s(&scene), "--grouping", grouping, "--frames", "16", "--out", s(&dets)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(fs::read(&dets).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = synth_scene(a.path());
    let sb = synth_scene(b.path());
    assert_eq!(fs::read(sa.join("manifest.json")).unwrap(), fs::read(sb.join("manifest.json")).unwrap());
}

#[test]
fn group_with_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let vocab = tmp.path().join("vocab.txt");
    let fixture = tmp.path().join("reply.txt");
    fs::write(&vocab, "0: Sofa, couch, table\n1: chair, stool\n").unwrap();
    fs::write(&fixture, "- seating: [sofa, couch]\n- seats: [chair, stool]\n").unwrap();
    let out = group3d(&["group", "--vocab", s(&vocab), "--fixture", s(&fixture)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "seating: [sofa, couch]\nseats: [chair, stool]\ntable: [table]\n"
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let vocab = tmp.path().join("vocab.txt");
    fs::write(&vocab, "sofa, table\n").unwrap();

    // provider failure
    let missing = tmp.path().join("missing.txt");
    let out = group3d(&["group", "--vocab", s(&vocab), "--fixture", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grouping"));

    // usage error
    assert_eq!(group3d(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(group3d(&["group", "--vocab", s(&vocab)]).status.code(), Some(1));

    // invalid configuration
    let scene = synth_scene(tmp.path());
    let dets = tmp.path().join("d.txt");
    let out = group3d(&["run", "--scene", s(&scene), "--voxel-size", "0", "--out", s(&dets)]);
    assert_eq!(out.status.code(), Some(1));

    // corrupted scene
    let depth = scene.join("depth/000000.gd1");
    let bytes = fs::read(&depth).unwrap();
    fs::write(&depth, &bytes[..bytes.len() / 2]).unwrap();
    let out = group3d(&["run", "--scene", s(&scene), "--out", s(&dets)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("000000.gd1"));

    assert_eq!(group3d(&["--help"]).status.code(), Some(0));
}

#[test]
fn estimated_pose_mode_requires_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth_scene(tmp.path());
    let dets = tmp.path().join("d.txt");
    let out = group3d(&["run", "--scene", s(&scene), "--pose-mode", "estimated", "--out", s(&dets)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reference"));
}

#[test]
fn estimated_pose_mode_recovers_world_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    let distorted = SPEC.replacen(
        "\"seed\": 3",
        "\"seed\": 3, \"estimated\": {\"scale\": 0.6, \"yaw\": 0.7, \"translation\": [1.5, -2.0, 0.3]}",
        1,
    );
    fs::write(&spec, distorted).unwrap();
    let scene = tmp.path().join("scene");
    assert!(group3d(&["synth", "--spec", s(&spec), "--out", s(&scene)]).status.success());
    let dets = tmp.path().join("d.txt");
    let out = group3d(&["run", "--scene", s(&scene), "--pose-mode", "estimated", "--out", s(&dets)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = group3d(&["eval", "--pred", s(&dets), "--gt", s(&scene)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mAP@0.50 1.000000"), "{text}");

    // the same scene read with its distorted poses taken at face value
    let out = group3d(&["run", "--scene", s(&scene), "--out", s(&dets)]);
    assert!(out.status.success());
    let text = String::from_utf8(group3d(&["eval", "--pred", s(&dets), "--gt", s(&scene)]).stdout).unwrap();
    assert!(text.contains("mAP@0.25 0.000000"), "{text}");
}
