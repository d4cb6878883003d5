//! Named verification suites: measured values against pinned thresholds.

use std::f64::consts::TAU;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{advance, to_fluid_state, AffineState};
use crate::artifacts::VERIFY_SCHEMA;
use crate::boundary::{BoundaryGraph, BoundaryScalar};
use crate::chart::{interior_sobolev_norm, VectorField};
use crate::elliptic::{DirichletSolver, DtnOperator};
use crate::error::{DropletError, Result};
use crate::regularization::{div_free_regularize, MomentKernel};
use crate::state::{check_moving_identities, curvature_pressure_residual, FluidState, MovingIdentityReport};
use crate::stepper::{run, RunOutcome, StepConfig};

pub const SUITES: &[&str] = &["elliptic", "identities", "regularization", "monitor"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Inclusive lower bound, if any.
    pub lower: Option<f64>,
    /// Exclusive upper bound, if any.
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, upper: f64) -> Self {
        Self { name: name.into(), value, lower: None, upper: Some(upper), pass: value < upper }
    }

    pub fn at_least(name: &str, value: f64, lower: f64) -> Self {
        Self { name: name.into(), value, lower: Some(lower), upper: None, pass: value >= lower }
    }

    pub fn within(name: &str, value: f64, lower: f64, upper: f64) -> Self {
        Self { name: name.into(), value, lower: Some(lower), upper: Some(upper), pass: value >= lower && value < upper }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema: String,
    pub suite: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: crate::config::SeedConfig::default().verify }
    }
}

/// Largest relative error of the disk spectrum `λ = |m|` for `1 ≤ m ≤ n_theta/4`.
pub fn dtn_disk_spectrum_error(n_theta: usize, n_rho: usize) -> Result<f64> {
    let solver = DirichletSolver::for_boundary(BoundaryGraph::circle(n_theta, 1.0)?, n_rho)?;
    let op = DtnOperator::assemble(&solver)?;
    let values = &op.eigen()?.values;
    let mut worst = values[0].abs();
    for m in 1..=n_theta / 4 {
        for v in [values[2 * m - 1], values[2 * m]] {
            worst = worst.max((v - m as f64).abs() / m as f64);
        }
    }
    Ok(worst)
}

/// L∞ error of the harmonic extension of `Re (x+iy)³` on `η = 0.1 cos 3θ`.
pub fn manufactured_dirichlet_error(n_theta: usize, n_rho: usize) -> Result<f64> {
    let solver = DirichletSolver::for_boundary(BoundaryGraph::from_fn(n_theta, |t| 0.1 * (3.0 * t).cos())?, n_rho)?;
    let exact = |x: f64, y: f64| x * x * x - 3.0 * x * y * y;
    let g = solver.chart().boundary_from_fn(exact);
    let u = solver.harmonic_extension(&g)?;
    Ok(u.sub(&solver.chart().field_from_fn(exact)).max_abs())
}

/// Random trigonometric polynomial with modes up to `top`, coefficients decaying like `m⁻²`.
pub fn random_band_limited(n_theta: usize, top: usize, rng: &mut impl Rng) -> BoundaryScalar {
    let coeffs: Vec<(f64, f64)> =
        (0..=top).map(|_| (rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * TAU)).collect();
    BoundaryScalar::new(
        (0..n_theta)
            .map(|k| {
                let t = TAU * k as f64 / n_theta as f64;
                coeffs.iter().enumerate().map(|(m, (c, ph))| c * (m as f64 * t + ph).cos() / (1 + m * m) as f64).sum()
            })
            .collect(),
    )
}

/// Product-rule residuals on `η = 0.1 cos 3θ` for `pairs` random pairs with modes up to 6.
pub fn leibniz_residuals(n_theta: usize, n_rho: usize, pairs: usize, seed: u64) -> Result<Vec<f64>> {
    let solver = DirichletSolver::for_boundary(BoundaryGraph::from_fn(n_theta, |t| 0.1 * (3.0 * t).cos())?, n_rho)?;
    let op = DtnOperator::assemble(&solver)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let f = random_band_limited(n_theta, 6, &mut rng);
            let g = random_band_limited(n_theta, 6, &mut rng);
            Ok(crate::elliptic::check_dtn_leibniz(&solver, &op, &f, &g)?.residual)
        })
        .collect()
}

/// Moving-surface identities at `t0` on the straining solution, from oracle states at `t0 ± dt`.
pub fn affine_moving_identities(alpha: f64, t0: f64, dt: f64, n_theta: usize, n_rho: usize) -> Result<MovingIdentityReport> {
    let s0 = AffineState::straining(alpha);
    let states: Result<Vec<FluidState>> = [t0 - dt, t0, t0 + dt]
        .iter()
        .map(|&t| Ok(to_fluid_state(&advance(&s0, t, 1e-13)?, n_theta, n_rho)?.state))
        .collect();
    check_moving_identities(&states?, dt)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Empirical rate of `‖(I - Ψ_{≤j})v‖_{L²} ≤ C 2^{-j}‖v‖_{H¹}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub scales: Vec<u32>,
    /// `‖(I - Ψ_{≤j})v_j‖ / ‖v_j‖_{H¹}` per scale.
    pub ratios: Vec<f64>,
    /// Fitted `α` in `ratio ∝ 2^{-jα}`.
    pub rate: f64,
    /// Largest `|∇·Ψ_{≤j}v_j|` at interior nodes.
    pub max_divergence: f64,
}

/// Divergence-free field `∇^⊥ψ` built from plane waves with wavenumbers in `[top/2, top]`:
/// four magnitudes, `directions` angles each, random phases.
pub fn plane_wave_field(solver: &DirichletSolver, top: f64, directions: usize, rng: &mut impl Rng) -> VectorField {
    let mut waves = Vec::with_capacity(4 * directions);
    for u in 0..4 {
        let k = top * 2f64.powf(-(u as f64) / 4.0);
        for d in 0..directions {
            let th = TAU * (d as f64 + 0.618 * u as f64) / directions as f64;
            waves.push((k * th.cos(), k * th.sin(), rng.gen::<f64>() * TAU));
        }
    }
    solver.chart().vector_from_fn(|x, y| {
        let mut v = [0.0, 0.0];
        for (kx, ky, ph) in &waves {
            let c = (kx * x + ky * y + ph).cos() / top;
            v[0] -= ky * c;
            v[1] += kx * c;
        }
        v
    })
}

/// For each scale `j`, a band-limited field with top mode `2^j` (the scale the
/// bound is sharp at) and the ratio of the regularization error to its `H¹` norm.
pub fn regularization_rate(solver: &DirichletSolver, scales: &[u32], seed: u64) -> Result<RateFit> {
    regularization_rate_ensemble(solver, scales, seed, 1)
}

/// [`regularization_rate`] with the ratio at each scale replaced by its geometric
/// mean over `realizations` fields seeded `seed, seed + 1, ...`.
pub fn regularization_rate_ensemble(solver: &DirichletSolver, scales: &[u32], seed: u64, realizations: u64) -> Result<RateFit> {
    let mut log_sum = vec![0.0f64; scales.len()];
    let mut max_divergence = 0.0f64;
    for r in 0..realizations.max(1) {
        let fit = single_rate(solver, scales, seed.wrapping_add(r))?;
        max_divergence = max_divergence.max(fit.max_divergence);
        for (acc, q) in log_sum.iter_mut().zip(&fit.ratios) {
            *acc += q.log2();
        }
    }
    let ratios: Vec<f64> = log_sum.iter().map(|s| (s / realizations.max(1) as f64).exp2()).collect();
    let x: Vec<f64> = scales.iter().map(|&j| j as f64).collect();
    let y: Vec<f64> = ratios.iter().map(|r| r.log2()).collect();
    Ok(RateFit { scales: scales.to_vec(), ratios, rate: -fit_slope(&x, &y), max_divergence })
}

fn single_rate(solver: &DirichletSolver, scales: &[u32], seed: u64) -> Result<RateFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = solver.chart().boundary_offset();
    let mut ratios = Vec::new();
    let mut max_divergence = 0.0f64;
    for &j in scales {
        let v = plane_wave_field(solver, 2f64.powi(j as i32), 24, &mut rng);
        let h1 = interior_sobolev_norm(&v.x, 1)?.hypot(interior_sobolev_norm(&v.y, 1)?);
        let w = div_free_regularize(&v, j, solver)?;
        max_divergence = max_divergence.max(w.divergence().values[..b].iter().fold(0.0f64, |m, x| m.max(x.abs())));
        ratios.push(v.sub(&w).l2_norm_sqr().sqrt() / h1);
    }
    let x: Vec<f64> = scales.iter().map(|&j| j as f64).collect();
    let y: Vec<f64> = ratios.iter().map(|r| r.log2()).collect();
    Ok(RateFit { scales: scales.to_vec(), ratios, rate: -fit_slope(&x, &y), max_divergence })
}

fn suite_elliptic(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut checks = vec![Check::below("dtn_disk_spectrum_rel_error", dtn_disk_spectrum_error(64, 16)?, 1e-6)];
    checks.push(Check::below("manufactured_dirichlet_linf", manufactured_dirichlet_error(64, 16)?, 1e-7));
    let worst = leibniz_residuals(64, 16, 10, opts.seed)?.into_iter().fold(0.0, f64::max);
    checks.push(Check::below("dtn_leibniz_residual", worst, 1e-5));
    let solver = DirichletSolver::for_boundary(BoundaryGraph::from_fn(64, |t| 0.1 * (3.0 * t).cos())?, 16)?;
    let op = DtnOperator::assemble(&solver)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5a);
    let ip = |a: &BoundaryScalar, b: &BoundaryScalar| solver.chart().boundary_integrate(&a.zip_with(b, |x, y| x * y));
    let mut gap = 0.0f64;
    for _ in 0..10 {
        let f = random_band_limited(64, 16, &mut rng);
        let g = random_band_limited(64, 16, &mut rng);
        let d = (ip(&op.apply(&f), &g) - ip(&f, &op.apply(&g))).abs() / (ip(&f, &f) * ip(&g, &g)).sqrt();
        gap = gap.max(d);
    }
    checks.push(Check::below("dtn_self_adjoint_gap", gap, 1e-8));
    let u = solver.chart().vector_from_fn(|x, y| [(x + 0.5 * y).sin(), x * y * y]);
    let flux = (u.divergence().integrate() - solver.chart().boundary_integrate(&u.normal_trace())).abs();
    checks.push(Check::below("divergence_theorem_gap", flux, 1e-8));
    Ok(checks)
}

fn suite_identities(_: &VerifyOptions) -> Result<Vec<Check>> {
    let dts = [4e-3, 2e-3, 1e-3];
    let reports: Result<Vec<MovingIdentityReport>> = dts.iter().map(|&dt| affine_moving_identities(0.25, 0.1, dt, 64, 16)).collect();
    let reports = reports?;
    let x: Vec<f64> = dts.iter().map(|d| d.log2()).collect();
    let mut checks = Vec::new();
    for (name, get) in [
        ("normal", (|r: &MovingIdentityReport| r.normal) as fn(&MovingIdentityReport) -> f64),
        ("h_commutator", |r| r.h_commutator),
        ("n_commutator", |r| r.n_commutator),
    ] {
        let y: Vec<f64> = reports.iter().map(|r| get(r).log2()).collect();
        checks.push(Check::at_least(&format!("moving_{name}_order"), fit_slope(&x, &y), 0.8));
        checks.push(Check::below(&format!("moving_{name}_at_dt_1e-3"), get(&reports[2]), 1e-3));
    }
    checks.push(Check::below("moving_surface_leibniz_at_dt_1e-3", reports[2].surface_leibniz, 1e-3));
    let rest = FluidState::at_rest(BoundaryGraph::from_fn(64, |t| 0.1 * (2.0 * t).cos())?, 16, 0.0)?;
    let r = check_moving_identities(&[rest.clone(), rest.clone(), rest], 1e-3)?;
    checks.push(Check::below("rest_state_max_residual", r.max_commutator().max(r.surface_leibniz).max(r.area_rate), 1e-9));
    let s = to_fluid_state(&AffineState::new(
        nalgebra::Matrix2::new(0.2, 0.1, -0.3, -0.2),
        nalgebra::Matrix2::new(1.2, 0.1, 0.1, 0.9),
    )?, 64, 16)?
    .state;
    checks.push(Check::below("curvature_pressure_residual", curvature_pressure_residual(&s, 1e-2)?, 1e-4));
    Ok(checks)
}

fn suite_regularization(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let kernel = MomentKernel::standard();
    let mut worst = 0.0f64;
    for e in [[0.0, 0.0], [3.0, 0.0], [-1.2, 2.5]] {
        worst = worst.max((kernel.moment(e, (0, 0)) - 1.0).abs());
        for d in 1..=kernel.moment_order() as i32 {
            for b in 0..=d {
                worst = worst.max(kernel.moment(e, (d - b, b)).abs());
            }
        }
    }
    let mut checks = vec![Check::below("kernel_moment_defect", worst, 1e-8)];
    let solver = DirichletSolver::for_boundary(BoundaryGraph::circle(128, 1.0)?, 24)?;
    let fit = regularization_rate_ensemble(&solver, &[3, 4, 5], opts.seed, 4)?;
    checks.push(Check::within("regularization_rate", fit.rate, 0.75, 1.25));
    checks.push(Check::below("regularized_divergence", fit.max_divergence, 1e-8));
    let g = BoundaryGraph::from_fn(64, |t| 0.1 * (4.0 * t).cos())?;
    let s = crate::regularization::parabolic_smooth(&g, 0.05, 0.01)?;
    let outside = (0..64).map(|k| s.gamma.eta()[k] - g.eta()[k]).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::below("smoothed_boundary_excess", outside, 0.0));
    Ok(checks)
}

fn suite_monitor(_: &VerifyOptions) -> Result<Vec<Check>> {
    let rot = to_fluid_state(&AffineState::rotation(0.5), 64, 16)?.state;
    let r = run(&rot, &StepConfig::new(1e-2), 0.1)?;
    let tripped = matches!(r.outcome, RunOutcome::Tripped { reason: crate::error::TripReason::TaylorSign, step: 0 });
    let mut checks = vec![Check::at_least("rotation_trips_taylor_sign_at_step_0", tripped as u8 as f64, 1.0)];
    let strain = to_fluid_state(&AffineState::straining(0.25), 64, 16)?.state;
    let r = run(&strain, &StepConfig::new(1e-2), 0.05)?;
    checks.push(Check::at_least("straining_completes", matches!(r.outcome, RunOutcome::Completed) as u8 as f64, 1.0));
    let finite = r.records.iter().all(|rec| {
        [rec.controls.a_sharp, rec.controls.b_diff, rec.controls.min_a, rec.controls.thickness].iter().all(|v| v.is_finite())
    });
    checks.push(Check::at_least("monitored_quantities_finite", finite as u8 as f64, 1.0));
    Ok(checks)
}

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "elliptic" => suite_elliptic(opts)?,
        "identities" => suite_identities(opts)?,
        "regularization" => suite_regularization(opts)?,
        "monitor" => suite_monitor(opts)?,
        other => return Err(DropletError::UnknownSuite(other.into())),
    };
    Ok(SuiteReport {
        schema: VERIFY_SCHEMA.into(),
        suite: name.into(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Expands `all`, rejects unknown names, and runs suites on up to `threads` threads.
pub fn run_suites(names: &[String], opts: &VerifyOptions, threads: usize) -> Result<Vec<SuiteReport>> {
    let mut list: Vec<String> = Vec::new();
    for n in names {
        if n == "all" {
            list.extend(SUITES.iter().map(|s| s.to_string()));
        } else if SUITES.contains(&n.as_str()) {
            list.push(n.clone());
        } else {
            return Err(DropletError::UnknownSuite(n.clone()));
        }
    }
    let next = AtomicUsize::new(0);
    let results: Arc<Mutex<Vec<Option<Result<SuiteReport>>>>> = Arc::new(Mutex::new((0..list.len()).map(|_| None).collect()));
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, list.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= list.len() {
                    break;
                }
                let r = run_suite(&list[i], opts);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let results = Arc::try_unwrap(results).expect("threads joined").into_inner().expect("results lock");
    results.into_iter().map(|r| r.expect("every suite ran")).collect()
}

/// Plain-text pass/fail table.
pub fn format_table(reports: &[SuiteReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out += &format!("[{}] {} ({:.1} s)\n", if r.pass { "PASS" } else { "FAIL" }, r.suite, r.seconds);
        for c in &r.checks {
            let bound = match (c.lower, c.upper) {
                (Some(lo), Some(hi)) => format!("in [{lo:e}, {hi:e})"),
                (Some(lo), None) => format!(">= {lo:e}"),
                (None, Some(hi)) => format!("< {hi:e}"),
                (None, None) => String::new(),
            };
            out += &format!("  {:4} {:<40} {:>12.4e} {}\n", if c.pass { "ok" } else { "FAIL" }, c.name, c.value, bound);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite() {
        assert!(matches!(run_suite("nope", &VerifyOptions::default()), Err(DropletError::UnknownSuite(s)) if s == "nope"));
        assert!(matches!(run_suites(&["all".into(), "x".into()], &VerifyOptions::default(), 2), Err(DropletError::UnknownSuite(_))));
    }

    #[test]
    fn slope_fit_is_exact_on_lines() {
        assert!((fit_slope(&[1.0, 2.0, 3.0], &[1.0, -1.0, -3.0]) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn check_bounds() {
        assert!(Check::below("a", 1.0, 2.0).pass);
        assert!(!Check::below("a", 2.0, 2.0).pass);
        assert!(Check::at_least("a", 2.0, 2.0).pass);
        assert!(!Check::within("a", 1.3, 0.75, 1.25).pass);
    }
}
