use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use teleop_core::rsr::RsrGeometry;
use teleop_core::sim::RunConfig;

fn teleop() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teleop"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    teleop().args(args).output().expect("spawn teleop")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn home_args() -> String {
    let h = RsrGeometry::default().home_pose().p.z;
    format!("0,0,{h},0,0,0")
}

#[test]
fn bundled_configs_load() {
    let mut names: Vec<_> = std::fs::read_dir(configs_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(names.len() >= 4);
    for path in names {
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap();
    }
}

#[test]
fn missing_config_is_a_config_error() {
    let out = run(&["simulate", "--config", "/nonexistent/run.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.json"));
}

#[test]
fn bad_arguments_are_config_errors() {
    assert_eq!(run(&["ik", "--pose", "1,2,3"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn seeded_simulations_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("breakage.json");
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for dir in &dirs {
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--duration",
            "1",
            "--seed",
            "42",
            "--output-dir",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let written = std::fs::read_dir(&dirs[0]).unwrap().count();
    assert!(written >= 8);
    for entry in std::fs::read_dir(&dirs[0]).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dirs[0].join(&name)).unwrap();
        let b = std::fs::read(dirs[1].join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
    let cfg: Value = serde_json::from_slice(&std::fs::read(dirs[0].join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 42);
    assert_eq!(cfg["duration_s"], 1.0);
}

#[test]
fn exceeded_threshold_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("strict.json");
    std::fs::write(&cfg, r#"{ "duration_s": 1.0, "thresholds": { "max_translation_mm": 1e-9 } }"#).unwrap();
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--output-dir", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["passed"], false);
    assert_eq!(v["report"]["exceeded"].as_array().unwrap().len(), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold exceeded"));
}

#[test]
fn ik_at_home_is_symmetric() {
    let out = run(&["ik", "--pose", &home_args(), "--check"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["admissible"], true);
    let theta: Vec<f64> = serde_json::from_value(v["joints"]["theta"].clone()).unwrap();
    let d: Vec<f64> = serde_json::from_value(v["joints"]["d"].clone()).unwrap();
    for k in 1..3 {
        assert!((theta[k] - theta[0]).abs() < 1e-9);
        assert!((d[k] - d[0]).abs() < 1e-9);
    }
    assert!(v["check"]["translation_mm"].as_f64().unwrap() < 1e-9);
    assert!(v["check"]["rotation_deg"].as_f64().unwrap() < 1e-9);
}

#[test]
fn ik_output_pipes_into_fk() {
    let h = RsrGeometry::default().home_pose().p.z;
    let pose = [4.0, -3.0, h + 5.0, 2.0, -1.5, 3.0];
    let arg = pose.map(|v| v.to_string()).join(",");
    let ik = run(&["ik", "--pose", &arg]);
    assert_eq!(ik.status.code(), Some(0));
    let mut child = teleop().args(["fk", "--joints", "-", "--check"]).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(&ik.stdout).unwrap();
    let fk = child.wait_with_output().unwrap();
    assert_eq!(fk.status.code(), Some(0), "{}", String::from_utf8_lossy(&fk.stderr));
    let v = stdout_json(&fk);
    let got: Vec<f64> = serde_json::from_value(v["pose"].clone()).unwrap();
    for k in 0..6 {
        assert!((got[k] - pose[k]).abs() < 1e-9, "component {k}: {} vs {}", got[k], pose[k]);
    }
    assert!(v["check"]["joint_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn fk_accepts_joint_lists() {
    let ik = stdout_json(&run(&["ik", "--pose", &home_args()]));
    let theta: Vec<f64> = serde_json::from_value(ik["joints"]["theta"].clone()).unwrap();
    let d: Vec<f64> = serde_json::from_value(ik["joints"]["d"].clone()).unwrap();
    let joints = theta.iter().chain(&d).map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let out = run(&["fk", "--joints", &joints]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let z = v["pose"][2].as_f64().unwrap();
    assert!((z - RsrGeometry::default().home_pose().p.z).abs() < 1e-9);
    assert!(v["margins"].as_array().unwrap().iter().all(|m| m.as_f64().unwrap() > 0.0));
}

#[test]
fn out_of_workspace_ik_check_exits_four_with_margins() {
    let h = RsrGeometry::default().home_pose().p.z;
    let out = run(&["ik", "--pose", &format!("0,0,{},0,0,0", h + 200.0), "--check"]);
    assert_eq!(out.status.code(), Some(4));
    let v = stdout_json(&out);
    let margins: Vec<f64> = serde_json::from_value(v["margins"].clone()).unwrap();
    assert_eq!(margins.len(), 9);
    assert!(margins.iter().any(|m| *m < 0.0));
}

#[test]
fn leader_ik_reports_chains_and_wrist() {
    let out = run(&["ik", "--device", "leader", "--pose", "-128.55,-0.04,129.11,5,-3,2", "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["chains"].as_array().unwrap().len(), 3);
    assert!(v["check"]["residual_mm"].as_f64().unwrap() < 1e-9);
    let far = run(&["ik", "--device", "leader", "--pose", "1000,0,0,0,0,0"]);
    assert_eq!(far.status.code(), Some(4));
}

fn bench(dir: &Path, points: usize, ticks: usize) -> Value {
    let out = run(&[
        "bench-haptic",
        "--points",
        &points.to_string(),
        "--ticks",
        &ticks.to_string(),
        "--output-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    stdout_json(&out)
}

#[test]
fn bench_haptic_with_no_ticks_writes_an_empty_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let v = bench(tmp.path(), 100, 0);
    assert!(v["p50_us"].is_null());
    let csv = std::fs::read_to_string(tmp.path().join("haptic_latency.csv")).unwrap();
    assert_eq!(csv, "bucket_lo_us,bucket_hi_us,count\n");
}

#[test]
fn bench_haptic_histogram_counts_every_tick() {
    let tmp = tempfile::tempdir().unwrap();
    let v = bench(tmp.path(), 50, 400);
    let csv = std::fs::read_to_string(tmp.path().join("haptic_latency.csv")).unwrap();
    let total: u64 = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 400);
    let p50 = v["p50_us"].as_f64().unwrap();
    let p99 = v["p99_us"].as_f64().unwrap();
    assert!(p50 > 0.0 && p50 <= p99 && p99 <= v["max_us"].as_f64().unwrap());
}

#[test]
fn fewer_probe_points_tick_faster() {
    let tmp = tempfile::tempdir().unwrap();
    let small = bench(&tmp.path().join("small"), 16, 2000)["p50_us"].as_f64().unwrap();
    let large = bench(&tmp.path().join("large"), 500, 2000)["p50_us"].as_f64().unwrap();
    assert!(small < large, "16 points {small} us, 500 points {large} us");
}

#[test]
fn replay_reproduces_a_recorded_run() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = tmp.path().join("rec");
    let cfg = configs_dir().join("breakage.json");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--duration", "1", "--output-dir", rec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let rep = tmp.path().join("rep");
    let out = run(&[
        "replay",
        rec.join("packets.jsonl").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["commanded.csv", "actual.csv"] {
        assert_eq!(std::fs::read(rec.join(name)).unwrap(), std::fs::read(rep.join(name)).unwrap(), "{name}");
    }
    let missing = run(&["replay", tmp.path().join("none.jsonl").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}
