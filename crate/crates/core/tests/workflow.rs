use std::fs;
use std::path::Path;

use droplet_core::artifacts::{list_snapshots, read_snapshot, Summary};
use droplet_core::commands::{compare, simulate, SimulateOptions, TrajectorySource};
use droplet_core::config::RunConfig;
use droplet_core::error::{DropletError, TripReason};
use droplet_core::stepper::RunOutcome;

fn config(n_theta: usize, initial: &str) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        "[grid]\nn_theta = {n_theta}\nn_rho = {}\n\n[step]\neps = 1e-2\nhorizon = 0.05\n\n[initial]\n{initial}\n",
        n_theta / 4
    ))
    .unwrap()
}

const STRAIN: &str = "kind = \"affine\"\na = [[0.25, 0.0], [0.0, -0.25]]";

fn run_into(cfg: &RunConfig, dir: &Path, every: usize) -> Summary {
    let opts = SimulateOptions { out: Some(dir.to_path_buf()), snapshot_every: Some(every) };
    simulate(cfg, &opts, |_| {}).unwrap().summary
}

#[test]
fn simulate_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_into(&config(32, STRAIN), tmp.path(), 2);
    assert_eq!(summary.outcome, RunOutcome::Completed);
    assert_eq!(summary.steps, 5);
    for f in ["config.toml", "diagnostics.jsonl", "timings.jsonl", "oracle.csv", "summary.json"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let steps: Vec<usize> = list_snapshots(tmp.path()).unwrap().into_iter().map(|(s, _)| s).collect();
    assert_eq!(steps, [0, 2, 4, 5]);
    let diag = fs::read_to_string(tmp.path().join("diagnostics.jsonl")).unwrap();
    assert_eq!(diag.lines().count(), 6);
    for line in diag.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], "droplet.diagnostics/1");
        assert!(v["controls"]["a_sharp"].is_number());
    }
    let back: Summary = serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(back, summary);
    assert!(summary.oracle_boundary_error.unwrap() < 1e-2);
    // The stored config reproduces the run.
    let again = RunConfig::load(&tmp.path().join("config.toml")).unwrap();
    assert_eq!(again.to_toml_string(), config(32, STRAIN).to_toml_string());
}

#[test]
fn diagnostics_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(&config(32, STRAIN), a.path(), 0);
    run_into(&config(32, STRAIN), b.path(), 0);
    let read = |d: &Path| fs::read_to_string(d.join("diagnostics.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn snapshot_restarts_from_file() {
    let tmp = tempfile::tempdir().unwrap();
    run_into(&config(32, STRAIN), tmp.path(), 0);
    let (last_step, path) = list_snapshots(tmp.path()).unwrap().pop().unwrap();
    assert_eq!(last_step, 5);
    let (state, header) = read_snapshot(&path).unwrap();
    assert_eq!(header.n_theta, 32);
    let cfg = config(32, &format!("kind = \"file\"\npath = {:?}", path.display().to_string()));
    let restarted = cfg.initial_state().unwrap();
    assert_eq!(restarted.gamma().eta(), state.gamma().eta());
    assert!(cfg.affine_initial().is_none());
}

#[test]
fn rotation_trips_the_monitor() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(32, "kind = \"rotation\"\nomega = 0.5");
    let opts = SimulateOptions { out: Some(tmp.path().to_path_buf()), snapshot_every: None };
    let report = simulate(&cfg, &opts, |_| {}).unwrap();
    assert_eq!(report.summary.outcome, RunOutcome::Tripped { reason: TripReason::TaylorSign, step: 0 });
    assert_eq!(report.exit_code(), 2);
}

#[test]
fn compare_identical_runs_is_degenerate() {
    let (a, b, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(&config(32, STRAIN), a.path(), 1);
    run_into(&config(32, STRAIN), b.path(), 2);
    let report = compare(
        &TrajectorySource::RunDir(a.path().to_path_buf()),
        &TrajectorySource::RunDir(b.path().to_path_buf()),
        Some(out.path()),
    )
    .unwrap();
    assert_eq!(report.steps, [0, 2, 4, 5]);
    assert!(report.fit.d_values.iter().all(|&d| d == 0.0));
    assert!(report.fit.max_ratio.is_none());
    assert!(out.path().join("distance.csv").is_file());
    assert!(out.path().join("compare.json").is_file());
}

#[test]
fn compare_rejects_mismatched_grids() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(&config(32, STRAIN), a.path(), 0);
    run_into(&config(64, STRAIN), b.path(), 0);
    let err = compare(&TrajectorySource::RunDir(a.path().to_path_buf()), &TrajectorySource::RunDir(b.path().to_path_buf()), None)
        .unwrap_err();
    assert!(matches!(err, DropletError::GridMismatch { .. }), "{err}");
}

#[test]
fn compare_accepts_a_config_source() {
    let a = tempfile::tempdir().unwrap();
    run_into(&config(32, STRAIN), a.path(), 1);
    let mut cfg = config(32, "kind = \"affine\"\na = [[0.26, 0.0], [0.0, -0.26]]");
    cfg.output.snapshot_every = 1;
    let report = compare(&TrajectorySource::RunDir(a.path().to_path_buf()), &TrajectorySource::Config(Box::new(cfg)), None).unwrap();
    assert_eq!(report.steps, [0, 1, 2, 3, 4, 5]);
    assert!(report.fit.d_values.iter().all(|&d| d > 0.0 && d.is_finite()));
    assert!(report.fit.max_ratio.unwrap().is_finite());
}
