//! End-to-end checks of the binary: exit codes, output formats, and the
//! determinism contract for CSV bodies.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_impulsive-dde");
const SATURATING: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../core/presets/example56.json"
);
const LINEAR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/presets/example1.json");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Step-down layer with a mid-band contraction: cheap to iterate.
fn contracting_config(dir: &Path) -> String {
    let path = dir.join("contracting.json");
    fs::write(
        &path,
        r#"{
            "a": "1",
            "terms": [{ "b": "0.8", "alpha": 1.0, "tau": "0.5" }],
            "impulses": {
                "t0": 0.0, "period_length": 1.0, "offsets": [0.5],
                "gamma": [0.0], "delta": [0.0]
            }
        }"#,
    )
    .expect("write config");
    path.display().to_string()
}

#[test]
fn simulate_is_deterministic_and_matches_the_closed_form_tail() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let run = run(&[
            "simulate",
            LINEAR,
            "--t-end",
            "10",
            "--h",
            "0.001",
            "--out",
            &out.display().to_string(),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let body_a = fs::read_to_string(&out_a).expect("csv a");
    let body_b = fs::read_to_string(&out_b).expect("csv b");
    assert_eq!(body_a, body_b, "identical invocations must agree byte for byte");
    assert!(body_a.starts_with("t,x_left,x_right\n"));

    // Closed-form tail with the jump at the start applied.
    let last = body_a.lines().last().expect("rows");
    let mut cols = last.split(',');
    let t: f64 = cols.next().unwrap().parse().unwrap();
    let x: f64 = cols.next().unwrap().parse().unwrap();
    assert_eq!(t, 10.0);
    assert!((x - (-0.5819048852379487)).abs() < 1e-6, "x(10) = {x}");

    // The manifest records the invocation.
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(format!("{}.manifest.json", out_a.display())).expect("manifest"),
    )
    .expect("manifest JSON");
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["h"], 0.001);
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = run(&["simulate", "/nonexistent/nowhere.json", "--t-end", "1", "--out", "/tmp/x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = run(&["simulate", LINEAR, "--definitely-not-a-flag", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_reports_the_reference_constants() {
    let out = run(&["verify", SATURATING, "--json"]);
    let report = stdout_json(&out);
    assert!((report["m1"].as_f64().unwrap() - 2.1736).abs() <= 1e-3);
    assert!((report["m2"].as_f64().unwrap() - 0.0027).abs() <= 5e-4);
    assert_eq!(report["existence_ok"], true);
    assert_eq!(report["attractivity_ok"], true);
}

#[test]
fn verify_accepts_a_failing_model_with_exit_zero() {
    let out = run(&["verify", LINEAR, "--json"]);
    let report = stdout_json(&out);
    assert_eq!(report["existence_ok"], false);
}

#[test]
fn broken_jump_product_is_an_assumption_violation() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{
            "a": "1",
            "impulses": {
                "t0": 0.0, "period_length": 1.0, "offsets": [0.5],
                "gamma": [0.5], "delta": [0.0]
            }
        }"#,
    )
    .expect("write config");
    let out = run(&["verify", &path.display().to_string()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("period"));
}

#[test]
fn fixpoint_writes_the_csv_and_residual_summary() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = contracting_config(dir.path());
    let out_path = dir.path().join("phi.csv");
    let out = run(&[
        "fixpoint",
        &config,
        "--h-grid",
        "0.05",
        "--t-report",
        "3",
        "--out",
        &out_path.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let body = fs::read_to_string(&out_path).expect("csv");
    assert!(body.starts_with("t,phi_left,phi_right\n"));
    // The constant layer solves b/(1 + x) = x: every reported value sits there.
    let root = 0.5 * (-1.0 + 4.2_f64.sqrt());
    for line in body.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((v - root).abs() < 1e-5, "{line}");
    }

    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("phi.summary.json")).expect("summary"),
    )
    .expect("summary JSON");
    assert!(summary["final_residual"].as_f64().unwrap() <= 1e-6);
    assert!(summary["iterations"].as_u64().unwrap() >= 2);
    assert_eq!(summary["valid_from"].as_f64().unwrap(), -0.5);
}

#[test]
fn fixpoint_rejects_a_non_contracting_model() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("steep.json");
    fs::write(
        &path,
        r#"{
            "a": "1",
            "terms": [{ "b": "10", "alpha": 1.0, "tau": "0.5" }],
            "impulses": {
                "t0": 0.0, "period_length": 1.0, "offsets": [0.5],
                "gamma": [0.0], "delta": [0.0]
            }
        }"#,
    )
    .expect("write config");
    let out = run(&[
        "fixpoint",
        &path.display().to_string(),
        "--out",
        &dir.path().join("phi.csv").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn halanay_flags_match_the_delay_free_closed_form() {
    let out = run(&["halanay", "--R", "5", "--S", "2", "--tau", "0", "--c", "2"]);
    let v = stdout_json(&out);
    assert_eq!(v["rate"].as_f64().unwrap(), 1.0);
}

#[test]
fn halanay_from_config_matches_the_reference_rate() {
    let out = run(&["halanay", SATURATING]);
    let v = stdout_json(&out);
    assert!((v["rate"].as_f64().unwrap() - 0.0918).abs() < 1e-3);
    assert_eq!(v["r"].as_f64().unwrap(), 5.0);
    assert_eq!(v["tau"].as_f64().unwrap(), 1.0);
    assert_eq!(v["c"].as_f64().unwrap(), 2.0);
}

#[test]
fn halanay_rejects_infeasible_parameters() {
    let out = run(&["halanay", "--R", "1", "--S", "1", "--tau", "0", "--c", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn halanay_needs_either_config_or_all_flags() {
    let out = run(&["halanay", "--R", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cauchy_matches_the_plain_exponential_without_jumps_in_between() {
    let out = run(&["cauchy", LINEAR, "--s", "0", "--t", "0.5"]);
    let v = stdout_json(&out);
    assert!((v["h"].as_f64().unwrap() - (-0.5_f64).exp()).abs() < 1e-9);
}

#[test]
fn cauchy_rejects_reversed_times() {
    let out = run(&["cauchy", LINEAR, "--s", "1", "--t", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reproduce_linear_case_passes_and_writes_the_summary() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(&[
        "reproduce",
        "example1",
        "--outdir",
        &dir.path().display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).expect("summary");
    assert!(summary.contains("4/4 checks passed"), "{summary}");
    assert!(summary.contains("negative from t = 1+ onward"), "{summary}");
    assert!(dir.path().join("analysis.json").exists());
    assert!(dir.path().join("trajectory.csv").exists());
}

#[test]
fn reproduce_rejects_unknown_cases() {
    let out = run(&["reproduce", "example99", "--outdir", "/tmp/should-not-matter"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown case"));
}
