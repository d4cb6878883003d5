use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use droplet_core::commands::{compare, simulate, SimulateOptions, TrajectorySource};
use droplet_core::config::RunConfig;
use droplet_core::stepper::RunOutcome;
use droplet_core::verify::{format_table, run_suites, VerifyOptions};

/// Free-boundary Euler droplet simulator.
#[derive(Parser, Debug)]
#[command(name = "droplet", version, about)]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation and write diagnostics, snapshots and a summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Snapshot every N steps (overrides `output.snapshot_every`).
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Distance series and Grönwall fit between two runs.
    Compare {
        /// Run directory or config file.
        a: PathBuf,
        /// Run directory or config file.
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification suites (`elliptic`, `identities`, `regularization`, `monitor`, `all`).
    Verify {
        #[arg(default_value = "all")]
        suites: Vec<String>,
        /// Config whose `[seeds]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for `verify.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn threads() -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("DROPLET_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(available.max(1)),
        _ => available,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Simulate { config, out, snapshots } => {
            let cfg = RunConfig::load(&config)?;
            let opts = SimulateOptions { out, snapshot_every: snapshots };
            let report = simulate(&cfg, &opts, |rec| {
                if !quiet && rec.step % 50 == 0 {
                    eprintln!(
                        "step {:>6}  t = {:.4}  E = {:.10e}  min a = {:.4e}",
                        rec.step, rec.t, rec.physical_energy, rec.controls.min_a
                    );
                }
            })?;
            let s = &report.summary;
            match s.outcome {
                RunOutcome::Completed => {
                    if !quiet {
                        eprintln!(
                            "completed {} steps to t = {:.4}; energy drift {:.3e}, area drift {:.3e}",
                            s.steps, s.t_final, s.energy_drift, s.area_drift
                        );
                    }
                }
                RunOutcome::Tripped { reason, step } => eprintln!("monitor trip at step {step}: {reason}"),
            }
            if !quiet {
                eprintln!("artifacts in {}", report.out_dir.display());
            }
            Ok(report.exit_code() as u8)
        }
        Command::Compare { a, b, out } => {
            let sa = TrajectorySource::from_path(&a).with_context(|| format!("loading {}", a.display()))?;
            let sb = TrajectorySource::from_path(&b).with_context(|| format!("loading {}", b.display()))?;
            let report = compare(&sa, &sb, out.as_deref())?;
            if !quiet {
                println!("{:>8} {:>12} {:>14} {:>14}", "step", "t", "D", "B_diff sum");
                for i in 0..report.steps.len() {
                    println!(
                        "{:>8} {:>12.6} {:>14.6e} {:>14.6e}",
                        report.steps[i], report.fit.times[i], report.fit.d_values[i], report.fit.b_sum[i]
                    );
                }
                match report.fit.max_ratio {
                    Some(c) => println!("Grönwall constant (max ratio): {c:.6e}"),
                    None => println!("degenerate: D vanishes, no ratio formed"),
                }
            }
            Ok(0)
        }
        Command::Verify { suites, config, out } => {
            let seed = match config {
                Some(p) => RunConfig::load(&p)?.seeds.verify,
                None => VerifyOptions::default().seed,
            };
            let reports = run_suites(&suites, &VerifyOptions { seed }, threads())?;
            if !quiet {
                print!("{}", format_table(&reports));
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
            }
            Ok(if reports.iter().all(|r| r.pass) { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
