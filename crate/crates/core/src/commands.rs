//! Library side of the `droplet` subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::affine::{advance, AffineState};
use crate::artifacts::{
    list_snapshots, read_snapshot, snapshot_dir_name, summarize, write_snapshot, JsonLines, Summary, TimingRecord,
    COMPARE_SCHEMA, DIAGNOSTICS_SCHEMA, SNAPSHOT_DIR, TIMINGS_SCHEMA,
};
use crate::config::RunConfig;
use crate::distance::{distance_series_csv, gronwall_check, GronwallFit, Trajectory};
use crate::error::{DropletError, Result};
use crate::state::FluidState;
use crate::stepper::{run_with, RunOutcome, StepRecord};

/// Tolerance of the affine reference integration.
const ORACLE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Default)]
pub struct SimulateOptions {
    /// Overrides `output.dir`.
    pub out: Option<PathBuf>,
    /// Overrides `output.snapshot_every`.
    pub snapshot_every: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SimulateReport {
    pub out_dir: PathBuf,
    pub summary: Summary,
}

impl SimulateReport {
    /// 0 on a clean finish, 2 on a monitor trip.
    pub fn exit_code(&self) -> i32 {
        match self.summary.outcome {
            RunOutcome::Completed => 0,
            RunOutcome::Tripped { .. } => 2,
        }
    }
}

/// `max_k |η(θ_k) - (r_oracle(θ_k) - 1)|`.
pub fn oracle_boundary_error(state: &FluidState, oracle: &AffineState) -> f64 {
    let g = state.gamma();
    (0..g.n_theta()).map(|k| (g.eta()[k] - (oracle.polar_radius(g.theta(k)) - 1.0)).abs()).fold(0.0, f64::max)
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Runs the configured simulation and writes its artifacts.
pub fn simulate(cfg: &RunConfig, opts: &SimulateOptions, mut progress: impl FnMut(&StepRecord)) -> Result<SimulateReport> {
    let out_dir = opts.out.clone().unwrap_or_else(|| cfg.resolve(&cfg.output.dir));
    let every = opts.snapshot_every.unwrap_or(cfg.output.snapshot_every);
    fs::create_dir_all(&out_dir)?;
    let initial = cfg.initial_state()?;
    let step_cfg = cfg.step_config();
    fs::write(out_dir.join("config.toml"), cfg.to_toml_string())?;
    let mut diagnostics = JsonLines::create(&out_dir.join("diagnostics.jsonl"), DIAGNOSTICS_SCHEMA)?;
    let mut timings = JsonLines::create(&out_dir.join("timings.jsonl"), TIMINGS_SCHEMA)?;
    let snapshots = out_dir.join(SNAPSHOT_DIR);
    if snapshots.exists() {
        fs::remove_dir_all(&snapshots)?;
    }
    let mut clock = Instant::now();
    let mut last: Option<(usize, f64)> = None;
    let result = run_with(&initial, &step_cfg, cfg.step.horizon, |rec, state| {
        diagnostics.write(rec)?;
        timings.write(&TimingRecord { step: rec.step, wall_seconds: clock.elapsed().as_secs_f64(), timestamp: now() })?;
        clock = Instant::now();
        if rec.step == 0 || (every > 0 && rec.step % every == 0) {
            write_snapshot(&snapshots.join(snapshot_dir_name(rec.step)), state, rec.step, rec.t)?;
            last = Some((rec.step, rec.t));
        }
        progress(rec);
        Ok(())
    })?;
    diagnostics.flush()?;
    timings.flush()?;
    let final_rec = result.records.last().expect("initial record");
    if last.map(|(s, _)| s) != Some(final_rec.step) {
        write_snapshot(&snapshots.join(snapshot_dir_name(final_rec.step)), &result.final_state, final_rec.step, final_rec.t)?;
    }
    let oracle_error = match cfg.affine_initial() {
        Some(s0) if cfg.step.gravity == 0.0 => {
            let times: Vec<f64> = result.records.iter().map(|r| r.t).collect();
            let traj = crate::affine::integrate_affine(&s0, &times, ORACLE_TOL)?;
            fs::write(out_dir.join("oracle.csv"), traj.to_csv())?;
            let at_end = advance(&s0, final_rec.t, ORACLE_TOL)?;
            Some(oracle_boundary_error(&result.final_state, &at_end))
        }
        _ => None,
    };
    let summary = summarize(&result.records, result.outcome, step_cfg.eps, result.final_state.chart(), oracle_error);
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(SimulateReport { out_dir, summary })
}

/// What `compare` accepts on each side.
#[derive(Clone, Debug)]
pub enum TrajectorySource {
    /// A run directory with snapshots.
    RunDir(PathBuf),
    /// A config that is simulated in memory, sampled every `output.snapshot_every` steps.
    Config(Box<RunConfig>),
}

impl TrajectorySource {
    /// Directories are run outputs; anything else is read as a config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Ok(Self::RunDir(path.to_path_buf()))
        } else {
            Ok(Self::Config(Box::new(RunConfig::load(path)?)))
        }
    }

    /// Samples keyed by step.
    fn load(&self) -> Result<Vec<(usize, f64, FluidState)>> {
        match self {
            Self::RunDir(dir) => list_snapshots(dir)?
                .into_iter()
                .map(|(step, path)| read_snapshot(&path).map(|(s, h)| (step, h.t, s)))
                .collect(),
            Self::Config(cfg) => {
                let every = cfg.output.snapshot_every.max(1);
                let mut out = Vec::new();
                let initial = cfg.initial_state()?;
                let result = run_with(&initial, &cfg.step_config(), cfg.step.horizon, |rec, state| {
                    if rec.step % every == 0 {
                        out.push((rec.step, rec.t, state.clone()));
                    }
                    Ok(())
                })?;
                let last = result.records.last().expect("initial record").step;
                if out.last().map(|s| s.0) != Some(last) {
                    out.push((last, result.records.last().unwrap().t, result.final_state));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema: String,
    pub steps: Vec<usize>,
    #[serde(flatten)]
    pub fit: GronwallFit,
}

/// Distance series and Grönwall fit between two trajectories sampled at common steps.
pub fn compare(a: &TrajectorySource, b: &TrajectorySource, out_dir: Option<&Path>) -> Result<CompareReport> {
    let sa = a.load()?;
    let sb = b.load()?;
    if let (Some(x), Some(y)) = (sa.first(), sb.first()) {
        x.2.gamma().check_same_grid(y.2.gamma())?;
        if x.2.chart().n_rho() != y.2.chart().n_rho() {
            return Err(DropletError::GridMismatch { left: x.2.chart().len(), right: y.2.chart().len() });
        }
    }
    let mut ta = Trajectory::default();
    let mut tb = Trajectory::default();
    let mut steps = Vec::new();
    let mut j = 0;
    for (step, t, state) in sa {
        while j < sb.len() && sb[j].0 < step {
            j += 1;
        }
        if j < sb.len() && sb[j].0 == step {
            ta.push(t, state);
            tb.push(sb[j].1, sb[j].2.clone());
            steps.push(step);
        }
    }
    let fit = gronwall_check(&ta, &tb)?;
    let report = CompareReport { schema: COMPARE_SCHEMA.into(), steps, fit };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("distance.csv"), distance_series_csv(&report.fit))?;
        fs::write(dir.join("compare.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report)
}
