use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use satloc::harness::eval::{ground_pyramids, satellite_pyramid};
use satloc::harness::{read_scene, PipelineConfig};
use satloc::pyramid::write_pyramid;

fn satloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satloc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = satloc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--seed", "7", "--out", a.to_str().unwrap()]);
    ok(&["synth", "--seed", "7", "--out", b.to_str().unwrap()]);
    let files = dir_bytes(&a);
    let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(
        names,
        [
            "cam_front.png", "cam_left.png", "cam_rear.png", "cam_right.png", "gt_pose.json", "mask_front.png",
            "mask_left.png", "mask_rear.png", "mask_right.png", "rig.json", "satellite.json", "satellite.png",
        ]
    );
    assert_eq!(files, dir_bytes(&b));
}

#[test]
fn localize_writes_trace_and_keypoints() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let (trace, kps) = (tmp.path().join("trace.jsonl"), tmp.path().join("kp.jsonl"));
    ok(&["synth", "--seed", "3", "--out", scene.to_str().unwrap()]);
    let stdout = ok(&[
        "localize",
        "--scene",
        scene.to_str().unwrap(),
        "--init",
        "-2,1.5,6deg",
        "--trace",
        trace.to_str().unwrap(),
        "--keypoints-out",
        kps.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let err = &v["gt_error"];
    assert!(err["lateral"].as_f64().unwrap() < 0.05, "{v}");
    assert!(err["longitudinal"].as_f64().unwrap() < 0.05, "{v}");
    assert!(err["yaw_deg"].as_f64().unwrap() < 0.1, "{v}");
    assert_eq!(v["keypoints"].as_u64().unwrap(), 4 * 256);

    let trace = fs::read_to_string(trace).unwrap();
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    for key in ["level", "iter", "lambda", "cost", "pose", "step_norm", "accepted"] {
        assert!(first.get(key).is_some(), "trace lacks {key}");
    }
    assert_eq!(first["lambda"].as_f64().unwrap(), 0.01);
    assert_eq!(fs::read_to_string(kps).unwrap().lines().count(), 4 * 256);
}

#[test]
fn external_pyramids_match_builtin_extractor() {
    let tmp = tempfile::tempdir().unwrap();
    let scene_dir = tmp.path().join("scene");
    let pyr_dir = tmp.path().join("pyr");
    ok(&["synth", "--seed", "4", "--out", scene_dir.to_str().unwrap()]);
    let scene = read_scene(&scene_dir).unwrap();
    let cfg = PipelineConfig::default();
    fs::create_dir_all(&pyr_dir).unwrap();
    write_pyramid(&satellite_pyramid(&scene, &cfg).unwrap(), pyr_dir.join("satellite.pacl")).unwrap();
    for (cam, pyr) in scene.rig.cameras.iter().zip(ground_pyramids(&scene, &cfg).unwrap()) {
        write_pyramid(&pyr, pyr_dir.join(format!("cam_{}.pacl", cam.name))).unwrap();
    }
    let args = ["localize", "--scene", scene_dir.to_str().unwrap(), "--init", "1,-1,-4deg"];
    let builtin = ok(&args);
    let mut with_pyr = args.to_vec();
    with_pyr.extend(["--pyramids", pyr_dir.to_str().unwrap()]);
    assert_eq!(ok(&with_pyr), builtin);
}

#[test]
fn eval_reports_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("m.csv");
    ok(&["eval", "--scenes", "2", "--trials-per-scene", "2", "--report", report.to_str().unwrap()]);
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("lat_mean,lat_median,"));
    assert!(lines[1].ends_with(",4,0"), "{}", lines[1]);

    let sweep = ok(&["eval", "--scenes", "2", "--trials-per-scene", "1", "--sweep", "1,3"]);
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("translation_noise,"));
    assert!(rows[1].starts_with("1,") && rows[2].starts_with("3,"));
}

#[test]
fn gradcheck_runs() {
    let out = ok(&["gradcheck", "--configs", "50"]);
    assert!(out.contains("pose_jacobian"));
}

#[test]
fn exit_codes() {
    assert_eq!(satloc(&[]).status.code(), Some(1));
    assert_eq!(satloc(&["localize"]).status.code(), Some(1));
    assert_eq!(satloc(&["eval", "--fusion", "median"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("s");
    ok(&["synth", "--seed", "1", "--cameras", "front", "--out", scene.to_str().unwrap()]);
    let bad = satloc(&["localize", "--scene", scene.to_str().unwrap(), "--init", "1,2"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("three comma-separated"));
    fs::remove_file(scene.join("rig.json")).unwrap();
    assert_eq!(satloc(&["localize", "--scene", scene.to_str().unwrap()]).status.code(), Some(2));
}
