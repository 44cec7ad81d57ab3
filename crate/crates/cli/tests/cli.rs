//! End-to-end checks of the command-line surface: subcommands, flags and
//! exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn prodsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prodsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn presets_lists_the_shipped_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = prodsim(&["presets"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for name in [
        "real-2011",
        "mc12",
        "ftk-sim",
        "trigger-weekly",
        "retry-overhead",
    ] {
        assert!(text.contains(name), "missing preset {name} in:\n{text}");
    }
}

#[test]
fn compile_emits_dot() {
    let dir = tempfile::tempdir().unwrap();
    let out = prodsim(&["compile", "--preset", "mc12"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("digraph"));
    assert!(text.contains("task:mc12b.digi"));
    assert!(text.contains("ds:mc12b.deriv.DAOD"));
}

#[test]
fn validate_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = prodsim(&["validate", "--preset", "ftk-sim"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("ok: 1 request(s), 3 task(s)"));
}

#[test]
fn run_exit_codes_follow_the_workflow_state() {
    let dir = tempfile::tempdir().unwrap();

    // Clean run: exit 0.
    let out = prodsim(
        &["run", "--preset", "trigger-weekly", "--out", "clean"],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("clean/report.txt").exists());
    assert!(dir.path().join("clean/report.json").exists());
    assert!(dir
        .path()
        .join("clean/protocol-trigger-rerun.jsonl")
        .exists());

    // Horizon too tight: exit 3.
    let out = prodsim(
        &[
            "run",
            "--preset",
            "trigger-weekly",
            "--out",
            "tight",
            "--horizon",
            "0.5",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));

    // Poisoned scenario file: exit 2 with the losses enumerated.
    let text = prodsim_cli::presets::source("trigger-weekly")
        .unwrap()
        .to_string()
        + "\n[[fault]]\nstep = \"trig-reco\"\nfirst = 15000\ncount = 1\n";
    let scenario_path = dir.path().join("poisoned.toml");
    std::fs::write(&scenario_path, text).unwrap();
    let out = prodsim(
        &["run", "--scenario", "poisoned.toml", "--out", "poisoned"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lost events"), "losses not enumerated:\n{err}");
}

#[test]
fn run_seed_flag_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = prodsim(
        &[
            "run",
            "--preset",
            "trigger-weekly",
            "--seed",
            "3,4",
            "--out",
            "multi",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(dir
        .path()
        .join("multi/runlog-trigger-rerun#3.jsonl")
        .exists());
    assert!(dir
        .path()
        .join("multi/runlog-trigger-rerun#4.jsonl")
        .exists());
}

#[test]
fn report_recomputes_from_stored_runlogs() {
    let dir = tempfile::tempdir().unwrap();
    let out = prodsim(&["run", "--preset", "ftk-sim", "--out", "runs"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let out = prodsim(
        &[
            "report",
            "--runlog",
            "runs/runlog-ftk-val.jsonl",
            "--label",
            "ftk-validation",
            "--scale",
            "1000",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("ftk-validation"));
    assert!(text.contains("1000"));
}

#[test]
fn bad_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = prodsim(&["run", "--preset", "nope", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(dir.path().join("bad.toml"), "version = ").unwrap();
    let out = prodsim(&["validate", "--scenario", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
}
