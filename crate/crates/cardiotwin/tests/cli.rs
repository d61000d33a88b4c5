use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cardiotwin::io::{read_file, read_pretext, read_pv_loop, read_trajectory};
use cardiotwin_core::params::PatientParams;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardiotwin")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(s.trim_end().lines().count(), 1, "stderr should be one line: {s:?}");
    s.trim_end().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["simulate", "--out-dir", p(dir.path())]);
    let summary = json(&dir.path().join("summary.json"));
    let v_ed = summary["edes"]["v_ed"].as_f64().unwrap();
    let v_es = summary["edes"]["v_es"].as_f64().unwrap();
    let ef = summary["ef"].as_f64().unwrap();
    assert!((ef - (v_ed - v_es) / v_ed).abs() < 1e-12);

    let pv = read_file(&dir.path().join("pv_loop.csv"), read_pv_loop).unwrap();
    let v_max = pv.iter().map(|r| r[1]).fold(f64::NEG_INFINITY, f64::max);
    let v_min = pv.iter().map(|r| r[1]).fold(f64::INFINITY, f64::min);
    assert!((v_max - v_ed).abs() <= 1e-7 * v_ed);
    assert!((v_min - v_es).abs() <= 1e-7 * v_es);
    let gap = summary["pv_closure_gap"].as_f64().unwrap();
    assert!(gap < 0.01 * v_ed);

    let traj = read_file(&dir.path().join("trajectory.csv"), read_trajectory).unwrap();
    assert_eq!(traj.t.len(), 3 * 2000 + 1);
    assert_eq!(traj.states[0].len(), 5);

    let svg = fs::read_to_string(dir.path().join("pv_loop.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(svg.contains("baseline"));
}

#[test]
fn simulate_with_pump_has_six_states() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["simulate", "--omega", "14000", "--cycles", "4", "--out-dir", p(dir.path())]);
    let traj = read_file(&dir.path().join("trajectory.csv"), read_trajectory).unwrap();
    assert_eq!(traj.states[0].len(), 6);
    assert_eq!(traj.t.len(), 4 * 2000 + 1);
    assert!(json(&dir.path().join("summary.json"))["lvad"].is_object());
}

#[test]
fn gen_pretext_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    run_ok(&["gen-pretext", "--n", "12", "--seed", "5", "--out", p(&a)]);
    run_ok(&["gen-pretext", "--n", "12", "--seed", "5", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = read_file(&a, read_pretext).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.v_ed >= r.v_es));
    assert!(dir.path().join("a.json").exists());

    let c = dir.path().join("c.csv");
    run_ok(&["gen-pretext", "--n", "12", "--seed", "6", "--out", p(&c)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn identify_recovers_reference_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.json");
    fs::write(&truth, serde_json::to_string(&PatientParams::REFERENCE).unwrap()).unwrap();
    run_ok(&["simulate", "--params", p(&truth), "--cycles", "20", "--out-dir", p(dir.path())]);
    let out = dir.path().join("recovered.json");
    run_ok(&[
        "identify",
        "--trajectory",
        p(&dir.path().join("trajectory.csv")),
        "--truth",
        p(&truth),
        "--out",
        p(&out),
    ]);
    let rec = json(&out);
    let errs = rec["relative_error"].as_object().unwrap();
    assert_eq!(errs.len(), 12);
    for (name, e) in errs {
        assert!(e.as_f64().unwrap() < 0.005, "{name}: {e}");
    }
    assert!(rec["meta"]["config_hash"].is_string());
}

#[test]
fn sweep_plots_one_loop_per_level() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["sweep", "--levels", "0,8000,14000", "--out-dir", p(dir.path())]);
    let svg = fs::read_to_string(dir.path().join("pv_loops.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("# cardiotwin"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    let out = run(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[usage]:"));

    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[usage]:"));

    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("cfg.json");
    fs::write(&bad_cfg, r#"{"sim": {"cycles": 3}}"#).unwrap();
    let out = run(&["simulate", "--config", p(&bad_cfg), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[config]:"));

    let missing = dir.path().join("missing.json");
    let out = run(&["simulate", "--params", p(&missing), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[io]:"));

    let garbage = dir.path().join("traj.csv");
    fs::write(&garbage, "t,x1\n0,abc\n").unwrap();
    let out = run(&["identify", "--trajectory", p(&garbage), "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error["));

    let out = run(&["verify", "--criterion", "9"]);
    assert_eq!(out.status.code(), Some(1));
    stderr_line(&out);
}
