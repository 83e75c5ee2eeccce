//! Drives the `ger` binary end to end against the mock fixture.

use std::path::{Path, PathBuf};
use std::process::Command;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn ger(tmp: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ger"));
    cmd.current_dir(workspace_root())
        .arg("--mock")
        .arg(workspace_root().join("fixtures/mock_script.json"))
        .arg("--cache-dir")
        .arg(tmp.join("cache"))
        .arg("--runs-root")
        .arg(tmp.join("runs"));
    cmd
}

#[test]
fn run_succeeds_and_resume_reports_zero_new_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = workspace_root().join("fixtures/manifest_mock.toml");

    let out = ger(tmp.path()).args(["run", "--manifest"]).arg(&manifest).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {stdout}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("run mock5-demo complete"));
    assert!(stdout.contains("0 failed"), "summary: {stdout}");

    let again = ger(tmp.path()).args(["run", "--manifest"]).arg(&manifest).output().unwrap();
    let stdout = String::from_utf8_lossy(&again.stdout);
    assert!(again.status.success());
    assert!(stdout.contains("0 new backend calls"), "resume summary: {stdout}");
}

#[test]
fn missing_dataset_path_is_a_fatal_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest_path = tmp.path().join("bad.toml");
    std::fs::write(
        &manifest_path,
        r#"
run_id = "bad-run"
dataset_id = "ghost"
dataset_dir = "no/such/dataset"
judge_models = ["mock-judge"]
"#,
    )
    .unwrap();
    let out = ger(tmp.path()).args(["run", "--manifest"]).arg(&manifest_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no/such/dataset"), "stderr: {stderr}");
}

#[test]
fn analyze_transfer_and_plot_work_from_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = workspace_root().join("fixtures/manifest_mock.toml");
    assert!(ger(tmp.path()).args(["run", "--manifest"]).arg(&manifest).status().unwrap().success());

    let analyze = ger(tmp.path()).args(["analyze", "mock5-demo"]).output().unwrap();
    assert!(
        analyze.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&analyze.stderr)
    );
    assert!(tmp.path().join("runs/mock5-demo/reports/criteria_analysis.csv").exists());
    assert!(tmp.path().join("runs/mock5-demo/reports/stability.md").exists());

    let transfer = ger(tmp.path())
        .args(["transfer", "--from", "mock5-demo", "--judges", "judge-a,judge-b,judge-c"])
        .output()
        .unwrap();
    assert!(
        transfer.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&transfer.stderr)
    );
    let transfer_dir = tmp.path().join("runs/mock5-demo-xfer-mock-judge-task_only-zero_shot");
    assert!(transfer_dir.join("matrices/00_Helpfulness.csv").exists());

    let plot = ger(tmp.path())
        .args(["plot"])
        .arg(transfer_dir.file_name().unwrap())
        .args(["--kind", "heatmap"])
        .output()
        .unwrap();
    assert!(plot.status.success(), "stderr: {}", String::from_utf8_lossy(&plot.stderr));
    let svg = std::fs::read_to_string(transfer_dir.join("reports/fig_heatmap.svg")).unwrap();
    roxmltree::Document::parse(&svg).expect("valid XML");

    let dist = ger(tmp.path())
        .args(["plot", "mock5-demo", "--kind", "distribution", "--rubric", "Clarity"])
        .output()
        .unwrap();
    assert!(dist.status.success(), "stderr: {}", String::from_utf8_lossy(&dist.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("runs/mock5-demo/reports/fig_distribution.csv")).unwrap();
    assert!(csv.starts_with("Model,Min,Q1,Median,Q3,Max,N\n"));
    assert_eq!(csv.lines().count(), 2, "one quantile row per model: {csv}");

    let bad_kind = ger(tmp.path()).args(["plot", "mock5-demo", "--kind", "pie"]).output().unwrap();
    assert_eq!(bad_kind.status.code(), Some(2));
}

#[test]
fn live_smoke_mode_checks_sanity_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = workspace_root().join("fixtures/manifest_mock.toml");
    let out = ger(tmp.path())
        .args(["run", "--live-smoke", "--manifest"])
        .arg(&manifest)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {stdout}");
    assert!(stdout.contains("all sanity bounds hold"), "smoke: {stdout}");
}
