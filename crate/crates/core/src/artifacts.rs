//! On-disk formats: per-field CSV, snapshot directories, JSON-lines streams
//! and the run summary. Every file names its schema.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryGraph, Collar};
use crate::chart::{DiskChart, Field, VectorField};
use crate::elliptic::DirichletSolver;
use crate::error::{DropletError, Result};
use crate::state::FluidState;
use crate::stepper::{RunOutcome, StepRecord};

pub const FIELD_SCHEMA: &str = "droplet.field/1";
pub const SNAPSHOT_SCHEMA: &str = "droplet.snapshot/1";
pub const DIAGNOSTICS_SCHEMA: &str = "droplet.diagnostics/1";
pub const TIMINGS_SCHEMA: &str = "droplet.timings/1";
pub const SUMMARY_SCHEMA: &str = "droplet.summary/1";
pub const COMPARE_SCHEMA: &str = "droplet.compare/1";
pub const VERIFY_SCHEMA: &str = "droplet.verify/1";

pub const SNAPSHOT_DIR: &str = "snapshots";
const HEADER_FILE: &str = "header.json";

fn invalid(msg: impl Into<String>) -> DropletError {
    DropletError::InvalidArgument(msg.into())
}

/// Field values as CSV: one line per radial row, boundary last.
pub fn field_csv(f: &Field) -> String {
    let chart = f.chart();
    let (nr, n) = (chart.n_rho(), chart.n_theta());
    let mut out = format!("# schema={FIELD_SCHEMA}\n# n_rho={nr} n_theta={n}\n");
    for i in 0..nr {
        let row: Vec<String> = f.values[i * n..(i + 1) * n].iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_field_csv(text: &str, chart: &Arc<DiskChart>) -> Result<Field> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == format!("# schema={FIELD_SCHEMA}") => {}
        other => return Err(invalid(format!("field CSV must start with the schema line, found {other:?}"))),
    }
    let mut values = Vec::with_capacity(chart.len());
    for line in lines.filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| invalid(format!("bad number in field CSV: {e}")))?;
        if row.len() != chart.n_theta() {
            return Err(DropletError::GridMismatch { left: chart.n_theta(), right: row.len() });
        }
        values.extend(row);
    }
    if values.len() != chart.len() {
        return Err(DropletError::GridMismatch { left: chart.len(), right: values.len() });
    }
    Ok(chart.field(values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub schema: String,
    pub step: usize,
    pub t: f64,
    pub n_theta: usize,
    pub n_rho: usize,
    pub gravity: f64,
    pub collar: Collar,
    pub eta: Vec<f64>,
    /// Field files next to the header, without the `.csv` suffix.
    pub fields: Vec<String>,
}

pub fn snapshot_dir_name(step: usize) -> String {
    format!("step_{step:06}")
}

/// Writes boundary, velocity, pressure and vorticity to `dir`.
pub fn write_snapshot(dir: &Path, state: &FluidState, step: usize, t: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let chart = state.chart();
    let v = state.velocity();
    let mut files = vec![("vx", v.x.clone()), ("vy", v.y.clone())];
    files.push(("p", state.pressure()?.clone()));
    files.push(("omega", state.vorticity()?.clone()));
    let header = SnapshotHeader {
        schema: SNAPSHOT_SCHEMA.into(),
        step,
        t,
        n_theta: chart.n_theta(),
        n_rho: chart.n_rho(),
        gravity: state.gravity(),
        collar: state.gamma().collar(),
        eta: state.gamma().eta().to_vec(),
        fields: files.iter().map(|(n, _)| n.to_string()).collect(),
    };
    fs::write(dir.join(HEADER_FILE), serde_json::to_string_pretty(&header)? + "\n")?;
    for (name, f) in files {
        fs::write(dir.join(format!("{name}.csv")), field_csv(&f))?;
    }
    Ok(())
}

pub fn read_snapshot(dir: &Path) -> Result<(FluidState, SnapshotHeader)> {
    let text = fs::read_to_string(dir.join(HEADER_FILE))
        .map_err(|e| invalid(format!("cannot read snapshot header in {}: {e}", dir.display())))?;
    let header: SnapshotHeader = serde_json::from_str(&text)?;
    if header.schema != SNAPSHOT_SCHEMA {
        return Err(invalid(format!("unsupported snapshot schema `{}`", header.schema)));
    }
    if header.eta.len() != header.n_theta {
        return Err(DropletError::GridMismatch { left: header.n_theta, right: header.eta.len() });
    }
    let gamma = BoundaryGraph::with_collar(header.eta.clone(), header.collar)?;
    let solver = Arc::new(DirichletSolver::for_boundary(gamma, header.n_rho)?);
    let chart = Arc::clone(solver.chart());
    let read = |name: &str| -> Result<Field> { parse_field_csv(&fs::read_to_string(dir.join(format!("{name}.csv")))?, &chart) };
    let v = VectorField::new(read("vx")?, read("vy")?);
    let state = FluidState::new(solver, v, header.gravity)?;
    Ok((state, header))
}

/// Snapshot directories of a run, ordered by step.
pub fn list_snapshots(run_dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let root = run_dir.join(SNAPSHOT_DIR);
    let mut out = Vec::new();
    for entry in fs::read_dir(&root).map_err(|e| invalid(format!("no snapshots in {}: {e}", run_dir.display())))? {
        let path = entry?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(step) = step {
            if path.join(HEADER_FILE).is_file() {
                out.push((step, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    schema: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

/// Appends schema-tagged JSON lines to a file.
pub struct JsonLines {
    out: std::io::BufWriter<fs::File>,
    schema: &'static str,
}

impl JsonLines {
    pub fn create(path: &Path, schema: &'static str) -> Result<Self> {
        Ok(Self { out: std::io::BufWriter::new(fs::File::create(path)?), schema })
    }

    pub fn write<T: Serialize>(&mut self, body: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, &Tagged { schema: self.schema, body })?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub step: usize,
    pub wall_seconds: f64,
    /// Seconds since the Unix epoch when the step finished.
    pub timestamp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    #[serde(flatten)]
    pub outcome: RunOutcome,
    pub steps: usize,
    pub t_final: f64,
    pub eps: f64,
    pub n_theta: usize,
    pub n_rho: usize,
    /// `|E(T) - E(0)| / |E(0)|` for the kinetic plus potential energy.
    pub energy_drift: f64,
    /// `|area(T) - area(0)| / area(0)`.
    pub area_drift: f64,
    /// `|max|ω|(T) - max|ω|(0)|`.
    pub omega_max_drift: f64,
    /// Fitted `C` in `𝓔(after)/𝓔(before) ≤ 1 + Cε`: the largest `(ratio - 1)/ε`.
    pub energy_constant: Option<f64>,
    /// Largest approximate-solution residual over `ε²`.
    pub approx_constant: Option<f64>,
    pub b_integral: f64,
    pub a_sup: f64,
    pub min_taylor: f64,
    /// Boundary sup error against the affine reference, when there is one.
    pub oracle_boundary_error: Option<f64>,
}

fn max_abs_omega(r: &StepRecord) -> f64 {
    r.omega_min.abs().max(r.omega_max.abs())
}

pub fn summarize(records: &[StepRecord], outcome: RunOutcome, eps: f64, chart: &DiskChart, oracle_boundary_error: Option<f64>) -> Summary {
    let first = &records[0];
    let last = records.last().expect("at least the initial record");
    let rel = |a: f64, b: f64| if b.abs() > 0.0 { (a - b).abs() / b.abs() } else { (a - b).abs() };
    let fold_max = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    Summary {
        schema: SUMMARY_SCHEMA.into(),
        outcome,
        steps: last.step,
        t_final: last.t,
        eps,
        n_theta: chart.n_theta(),
        n_rho: chart.n_rho(),
        energy_drift: rel(last.physical_energy, first.physical_energy),
        area_drift: rel(last.area, first.area),
        omega_max_drift: (max_abs_omega(last) - max_abs_omega(first)).abs(),
        energy_constant: fold_max(&mut records.iter().filter_map(|r| r.energy_ratio).map(|q| (q - 1.0) / eps)),
        approx_constant: fold_max(&mut records.iter().filter_map(|r| r.approx_residual).map(|q| q / (eps * eps))),
        b_integral: last.running.b_integral,
        a_sup: last.running.a_sup,
        min_taylor: records.iter().map(|r| r.controls.min_a).fold(f64::INFINITY, f64::min),
        oracle_boundary_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{to_fluid_state, AffineState};

    #[test]
    fn field_csv_round_trip() {
        let s = to_fluid_state(&AffineState::straining(0.3), 32, 8).unwrap().state;
        let text = field_csv(&s.velocity().x);
        assert!(text.starts_with("# schema=droplet.field/1\n"));
        let back = parse_field_csv(&text, s.chart()).unwrap();
        assert_eq!(back.values, s.velocity().x.values);
        assert!(parse_field_csv(&text.replacen("# schema=droplet.field/1", "", 1), s.chart()).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = to_fluid_state(&AffineState::straining(0.3), 32, 8).unwrap().state;
        let path = dir.path().join(SNAPSHOT_DIR).join(snapshot_dir_name(7));
        write_snapshot(&path, &s, 7, 0.07).unwrap();
        let (back, header) = read_snapshot(&path).unwrap();
        assert_eq!(header.step, 7);
        assert_eq!(header.fields, ["vx", "vy", "p", "omega"]);
        assert_eq!(back.gamma().eta(), s.gamma().eta());
        assert_eq!(back.velocity().y.values, s.velocity().y.values);
        assert_eq!(list_snapshots(dir.path()).unwrap(), vec![(7, path)]);
    }
}
