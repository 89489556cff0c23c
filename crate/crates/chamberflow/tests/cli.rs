//! End-to-end checks of the command-line driver: flag handling, file
//! outputs, determinism of the emitted reports, and the criterion-only
//! degenerate pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_chamberflow")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

const CP1_FLOW: &str = r#"
[polytope]
preset = "cp1"

[grid]
box_min = [-4.0]
box_max = [4.0]
spacing = 0.1

[flow]
t_final = 2.0
checkpoint_every = 10
"#;

#[test]
fn criterion_writes_report_and_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[polytope]\npreset = \"cp1\"\n");
    let out = run(&[
        "criterion",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(tmp.path().join("o/criterion.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["criterion"]["ke"]["exists"], serde_json::Value::Bool(true));
    assert_eq!(v["criterion"]["soliton"]["exists"], serde_json::Value::Bool(true));
    assert!(v["artifact_version"].is_string());
    assert!(v["config"]["polytope"]["preset"].is_string());
    assert!(tmp.path().join("o/config.effective.toml").exists());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("existence holds"), "{text}");
}

#[test]
fn flow_and_classify_round_trip_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CP1_FLOW);
    let run_dir = tmp.path().join("flow-out");
    let out = run(&[
        "flow",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "trajectory.csv",
        "trajectory.json",
        "checkpoints.json",
        "report.json",
    ] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(run_dir.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x_0,m_t,c_t,"), "{}", &csv[..60]);

    let cls_dir = tmp.path().join("cls-out");
    let out = run(&[
        "classify",
        "--config",
        cfg.to_str().unwrap(),
        "--run",
        run_dir.to_str().unwrap(),
        "--out",
        cls_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(cls_dir.join("classification.json")).unwrap(),
    )
    .unwrap();
    assert!(v["classification"]["case_tag"].is_string());
}

#[test]
fn flow_overrides_change_the_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CP1_FLOW);
    let out_dir = tmp.path().join("o");
    let out = run(&[
        "flow",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--t-final",
        "0.5",
        "--checkpoint-every",
        "7",
        "--seed",
        "99",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = std::fs::read_to_string(out_dir.join("config.effective.toml")).unwrap();
    assert!(echo.contains("t_final = 0.5"), "{echo}");
    assert!(echo.contains("checkpoint_every = 7"), "{echo}");
    assert!(echo.contains("seed = 99"), "{echo}");
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["seed"], serde_json::json!(99));
    assert_eq!(v["config"]["flow"]["t_final"], serde_json::json!(0.5));
}

#[test]
fn pipeline_reports_are_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CP1_FLOW);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = run(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--threads",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "criterion.json",
        "trajectory.csv",
        "trajectory.json",
        "checkpoints.json",
        "report.json",
        "classification.json",
        "pipeline.json",
    ] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn pipeline_with_t_final_zero_is_criterion_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CP1_FLOW);
    let out_dir = tmp.path().join("o");
    let out = run(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--t-final",
        "0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("pipeline.json")).unwrap(),
    )
    .unwrap();
    let stages = v["stages"].as_array().unwrap();
    let by_name = |n: &str| {
        stages
            .iter()
            .find(|s| s["name"] == serde_json::json!(n))
            .unwrap()
            .clone()
    };
    assert_eq!(by_name("criterion")["status"], serde_json::json!("ok"));
    assert_eq!(by_name("flow")["status"], serde_json::json!("skipped"));
    assert_eq!(by_name("classify")["status"], serde_json::json!("skipped"));
    assert!(v.get("criterion").is_some());
    assert!(v.get("classification").is_none());
    assert!(!out_dir.join("trajectory.csv").exists());
}

#[test]
fn missing_grid_block_fails_flow_with_a_clear_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[polytope]\npreset = \"cp1\"\n");
    let out = run(&[
        "flow",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("[grid]"), "{msg}");
}

#[test]
fn bad_config_exits_nonzero_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[polytope]\npreset = \"cp1\"\nnonsense = 1\n");
    let out = run(&["criterion", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("nonsense"), "{msg}");
}

#[test]
fn degenerate_subcommand_builds_the_limit_pair() {
    let tmp = tempfile::tempdir().unwrap();
    // The a1-symmetric preset gives a rank-1 chamber with one simple root.
    let cfg = write_config(tmp.path(), "[polytope]\npreset = \"a1-symmetric\"\n");
    let out_dir = tmp.path().join("o");
    let out = run(&[
        "degenerate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--y",
        "0.7",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("degeneration.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["y"], serde_json::json!([0.7]));
    assert!(v["lie_data"]["h_generators"].is_array());
    assert!(v["limit"]["kind"].is_string());

    // Wrong dimension is refused.
    let out = run(&[
        "degenerate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--y",
        "0.7,0.1",
    ]);
    assert!(!out.status.success());
}
