use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use semloc::eval::EvalReport;

fn semloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.json");
    fs::write(
        &p,
        r#"{"scene": {"n_points": 300, "n_db_images": 12, "n_queries": 6, "seed": 2}}"#,
    )
    .unwrap();
    p
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let ds = dir.join("ds");
    let out = semloc(&["synth", "--spec", s(&write_spec(dir)), "--out", s(&ds)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    ds
}

#[test]
fn full_pipeline_on_clean_scene() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let run = dir.path().join("run");

    assert_eq!(semloc(&["build-map", "--data", s(&ds)]).status.code(), Some(0));
    assert!(ds.join("semantic_map.bin").exists());
    let out = semloc(&["localize", "--data", s(&ds), "--out", s(&run), "--k-day", "6", "--k-night", "6"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let gt = ds.join("ground_truth.txt");
    assert_eq!(semloc(&["evaluate", "--run", s(&run), "--gt", s(&gt)]).status.code(), Some(0));

    let report: EvalReport = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    let all = report.summary_for("all").unwrap();
    assert_eq!((all.queries, all.fine), (6, 100.0));
    let json = fs::read_to_string(run.join("report.json")).unwrap();
    assert!(json.contains("\"schema\": 1"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"retrieval": {"k_day": 5, "k_night": 5}, "localizer": {"rng_seed": 17}}"#).unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        let out = semloc(&["localize", "--config", s(&cfg), "--data", s(&ds), "--out", s(&run)]);
        assert!(out.status.success());
        outputs.push((fs::read(run.join("poses.txt")).unwrap(), fs::read(run.join("report.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn missing_raster_exits_2_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let victim = ds.join("queries").join("query_003.labels.pgm");
    fs::remove_file(&victim).unwrap();
    let out = semloc(&["localize", "--data", s(&ds), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("query_003.labels.pgm"));
}

#[test]
fn bad_spec_and_config_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    fs::write(&spec, r#"{"scene": {"n_db_images": 7}}"#).unwrap();
    let out = semloc(&["synth", "--spec", s(&spec), "--out", s(&dir.path().join("ds"))]);
    assert_eq!(out.status.code(), Some(3));
    let out = semloc(&["localize", "--data", "x", "--out", "y", "--theta-min-deg=-2"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn empty_pose_file_evaluates_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    fs::create_dir(&run).unwrap();
    fs::write(run.join("poses.txt"), "").unwrap();
    let gt = dir.path().join("gt.txt");
    fs::write(&gt, "q0 1 0 0 0 0 0 0\nq1 1 0 0 0 1 2 3\n").unwrap();
    let out = semloc(&["evaluate", "--run", s(&run), "--gt", s(&gt)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no poses"));
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    let all = report.summary_for("all").unwrap();
    assert_eq!((all.fine, all.medium, all.coarse), (0.0, 0.0, 0.0));
}
