use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SCENARIO: &str = r#"
seed = 3

[noise]
multiplier = 0.0

[extrinsics]
theta_deg = [2.0, -3.0, 90.0]
t = [0.02, -0.17, 0.19]

[[frames]]
distance = 1.2
azimuth_deg = 70.0
elevation_deg = -2.0
yaw_deg = 20.0

[[frames]]
distance = 1.5
azimuth_deg = 100.0
elevation_deg = 3.0
roll_deg = 5.0
yaw_deg = -15.0

[[frames]]
distance = 1.8
azimuth_deg = 125.0
elevation_deg = -4.0
roll_deg = -8.0
yaw_deg = 10.0
pitch_deg = 5.0

[[frames]]
distance = 1.3
azimuth_deg = 85.0
yaw_deg = -25.0
pitch_deg = 10.0

[[frames]]
distance = 1.6
azimuth_deg = 55.0
elevation_deg = 4.0
roll_deg = 8.0
yaw_deg = 15.0
pitch_deg = -5.0
"#;

fn ilcc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilcc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulated() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("scenario.toml"), SCENARIO).unwrap();
    let out = ilcc(dir.path(), &["simulate", "--scenario", "scenario.toml", "--out-dir", "sim"]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

#[test]
fn help_and_version_succeed_anywhere() {
    let dir = TempDir::new().unwrap();
    for args in [&["--help"][..], &["--version"], &["calibrate", "--help"]] {
        let out = ilcc(dir.path(), args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = ilcc(dir.path(), &["align"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ilcc(dir.path(), &["calibrate", "--frames", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--out"), "{}", stderr(&out));
    let out = ilcc(dir.path(), &["sweep", "--scenario", "s.toml", "--vary", "speed=1", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ilcc(dir.path(), &["--jobs", "0", "segment", "c.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_manifest_file_is_a_domain_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.csv"), "x,y,z,intensity,ring\n").unwrap();
    fs::write(
        dir.path().join("m.json"),
        r#"[{"cloud": "c.csv", "corners2d": "frame_07_corners.csv"}]"#,
    )
    .unwrap();
    let out = ilcc(dir.path(), &["calibrate", "--frames", "m.json", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("frame_07_corners.csv"), "{msg}");
    assert!(msg.starts_with("error[IoError]"), "{msg}");
    assert!(!dir.path().join("e.json").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.toml"), "[detection]\nuniformity = 0.9\n").unwrap();
    fs::write(dir.path().join("cloud.csv"), "x,y,z,intensity,ring\n").unwrap();
    let out = ilcc(dir.path(), &["segment", "cloud.csv", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error[ConfigError]"), "{}", stderr(&out));
}

#[test]
fn calibrate_recovers_simulated_extrinsics() {
    let dir = simulated();
    let p = dir.path();
    for k in 0..5 {
        for suffix in [".csv", "_corners.csv", "_truth.json"] {
            assert!(p.join(format!("sim/frame_{k:02}{suffix}")).is_file());
        }
    }
    let out = ilcc(
        p,
        &["calibrate", "--frames", "sim/manifest.json", "--config", "sim/config.toml", "--out", "e.json"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("e.json")).unwrap()).unwrap();
    let theta: Vec<f64> = serde_json::from_value(e["theta_deg"].clone()).unwrap();
    let t: Vec<f64> = serde_json::from_value(e["t_m"].clone()).unwrap();
    for (got, want) in theta.iter().zip([2.0, -3.0, 90.0]) {
        assert!((got - want).abs() < 0.05, "{theta:?}");
    }
    for (got, want) in t.iter().zip([0.02, -0.17, 0.19]) {
        assert!((got - want).abs() < 0.002, "{t:?}");
    }
    assert_eq!(e["low_confidence"], false);
    assert_eq!(e["frames"].as_array().unwrap().len(), 5);

    let out = ilcc(
        p,
        &[
            "evaluate",
            "--extrinsics",
            "e.json",
            "--frames",
            "sim/manifest.json",
            "--config",
            "sim/config.toml",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("frame,e,"));
    assert_eq!(lines.count(), 5);
}

#[test]
fn stage_commands_write_their_outputs() {
    let dir = simulated();
    let p = dir.path();
    let out = ilcc(p, &["segment", "sim/frame_00.csv", "--out", "seg.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(fs::read_to_string(p.join("seg.csv")).unwrap().starts_with("x,y,z,intensity,ring,segment\n"));

    let out = ilcc(p, &["find-board", "sim/frame_00.csv", "--out", "board.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["uniformity"].as_f64().unwrap() >= 0.85);

    let out = ilcc(p, &["corners-3d", "sim/frame_00.csv", "--out", "c.csv", "--debug-dump", "d.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let corners = fs::read_to_string(p.join("c.csv")).unwrap();
    assert_eq!(corners.lines().count(), 1 + 35);
    assert!(fs::read_to_string(p.join("d.csv")).unwrap().starts_with("px,py,model_x,model_y,intensity,class\n"));
}

#[test]
fn reruns_reproduce_every_output() {
    let dir = simulated();
    let p = dir.path();
    let runs: [&[&str]; 6] = [
        &["segment", "sim/frame_01.csv", "--out", "OUT"],
        &["find-board", "sim/frame_01.csv", "--out", "OUT"],
        &["corners-3d", "sim/frame_01.csv", "--out", "OUT"],
        &["calibrate", "--frames", "sim/manifest.json", "--config", "sim/config.toml", "--out", "OUT"],
        &["sweep", "--scenario", "scenario.toml", "--vary", "noise=1,2", "--repeats", "3", "--out", "OUT"],
        &["--jobs", "4", "sweep", "--scenario", "scenario.toml", "--vary", "noise=1,2", "--repeats", "3", "--out", "OUT"],
    ];
    let mut sweeps = Vec::new();
    for args in runs {
        let mut outputs = Vec::new();
        for name in ["first.out", "second.out"] {
            let a: Vec<&str> = args.iter().map(|s| if *s == "OUT" { name } else { s }).collect();
            let out = ilcc(p, &a);
            assert!(out.status.success(), "{a:?}: {}", stderr(&out));
            outputs.push((fs::read(p.join(name)).unwrap(), out.stdout));
        }
        assert_eq!(outputs[0], outputs[1], "{args:?}");
        if args.contains(&"sweep") {
            sweeps.push(outputs.remove(0).0);
        }
    }
    assert_eq!(sweeps[0], sweeps[1], "sweep output depends on --jobs");

    let again = TempDir::new().unwrap();
    fs::write(again.path().join("scenario.toml"), SCENARIO).unwrap();
    let out = ilcc(again.path(), &["simulate", "--scenario", "scenario.toml", "--out-dir", "sim"]);
    assert!(out.status.success());
    for entry in fs::read_dir(p.join("sim")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(p.join("sim").join(&name)).unwrap(),
            fs::read(again.path().join("sim").join(&name)).unwrap(),
            "{name:?}"
        );
    }
}
