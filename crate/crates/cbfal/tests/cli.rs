//! End-to-end tests of the `cbfal` binary: exit codes, report formats, and
//! output files.

use std::path::Path;
use std::process::{Command, Output};

fn cbfal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbfal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_outputs_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cbfal(&[
        "run",
        "--scenario",
        "case1",
        "--out",
        dir.path().to_str().unwrap(),
        "--gnuplot-script",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("scenario: case1 (filtered)"), "{text}");
    assert!(text.contains("overall: PASS"), "{text}");

    for name in [
        "case1.csv",
        "case1.params.toml",
        "case1.report.txt",
        "case1.gp",
    ] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let csv = std::fs::read_to_string(dir.path().join("case1.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,x_0,u_0,H,He,phi,active");
    let params = std::fs::read_to_string(dir.path().join("case1.params.toml")).unwrap();
    assert!(params.contains("tau"), "{params}");
}

#[test]
fn structured_report_is_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = cbfal(&[
        "run",
        "--scenario",
        "case4",
        "--report",
        "structured",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(parsed["scenario"], "case4");
    assert_eq!(parsed["mode"], "demonstration");
    assert_eq!(parsed["pass"], true);
    assert!(parsed["checks"].as_array().is_some_and(|c| !c.is_empty()));
    assert!(dir.path().join("case4.report.json").is_file());
}

#[test]
fn failed_checks_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    // Raising gamma moves the true activation time away from the scenario's
    // frozen expectation, so exactly the switch-time check fails.
    let out = cbfal(&[
        "run",
        "--scenario",
        "case1",
        "--set",
        "gamma=2.0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stdout: {}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("[FAIL] switch-time"), "{text}");
    assert!(text.contains("overall: FAIL"), "{text}");
}

#[test]
fn config_errors_exit_with_code_one() {
    let out = cbfal(&["run", "--scenario", "case9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("unknown scenario"),
        "{}",
        stderr(&out)
    );

    let out = cbfal(&["run", "--scenario", "case1", "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));

    let out = cbfal(&["run", "--scenario", "case1", "--set", "dt=nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_overrides_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, "dt = 2e-3\n[filter]\nenabled = false\n").unwrap();
    let out = cbfal(&[
        "run",
        "--scenario",
        "case1",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("(uncontrolled)"), "{}", stdout(&out));
    let params = std::fs::read_to_string(dir.path().join("case1.params.toml")).unwrap();
    assert!(params.contains("0.002"), "{params}");
}

#[test]
fn verify_subcommand_passes_on_a_small_budget() {
    let out = cbfal(&["verify", "--cases", "40", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "stdout: {}", stdout(&out));
    assert!(stdout(&out).contains("overall: PASS"), "{}", stdout(&out));
}

#[test]
fn convergence_subcommand_prints_the_ladder() {
    let out = cbfal(&[
        "convergence",
        "--scenario",
        "case1",
        "--dt",
        "4e-3,2e-3",
        "--t-end",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("convergence: case1"), "{text}");
    assert!(text.contains("4.000000e-3"), "{text}");
}

#[test]
fn scenarios_subcommand_lists_the_registry() {
    let out = cbfal(&["scenarios"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for name in ["case1", "case2", "case3", "case4", "predator_prey"] {
        assert!(text.contains(name), "missing {name} in {text}");
    }
}

#[test]
fn out_directory_is_created_when_missing() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("a/b");
    let out = cbfal(&[
        "run",
        "--scenario",
        "case2",
        "--t-end",
        "1",
        "--out",
        nested.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(Path::new(&nested).join("case2.csv").is_file());
}
