//! Fluid states `(v, Γ)` and everything computed from them off equilibrium:
//! pressure, Taylor coefficient, `D_t p`, `D_t a`, vorticity, energies,
//! control parameters and the moving-surface identities.

use std::sync::Arc;

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use crate::boundary::{besov_holder, BoundaryGraph, BoundaryScalar};
use crate::chart::{interior_sobolev_norm, DiskChart, Field, Sampler, VectorField};
use crate::elliptic::{DirichletSolver, DtnOperator, DIV_TOL};
use crate::error::{DropletError, Result};
use crate::regularization::lp_block_values;
use crate::spectral::{self, TrigInterpolant};

/// Default energy index, the least integer above `d/2 + 1` for `d = 2`.
pub const DEFAULT_K: usize = 3;
/// Smallest Taylor coefficient accepted by the modified energy.
pub const DEFAULT_A_FLOOR: f64 = 1e-8;
/// Nodes kept when evaluating pairwise Hölder quotients.
const PAIRWISE_NODES: usize = 2048;

/// `G[i][j] = ∂_i v_j`.
pub type Jacobian = [[Field; 2]; 2];

/// Quantities derived from a state, computed together and cached.
#[derive(Clone, Debug)]
pub struct Derived {
    pub grad_v: Jacobian,
    pub p: Field,
    pub grad_p: VectorField,
    /// `H[i][j] = ∂_i∂_j p`.
    pub hess_p: Jacobian,
    pub a: BoundaryScalar,
    pub dtp: Field,
    pub dt_grad_p: VectorField,
    pub dta: BoundaryScalar,
    pub omega: Field,
}

/// A velocity field on a star-shaped domain, with optional gravity `g` acting along `-e_y`.
pub struct FluidState {
    solver: Arc<DirichletSolver>,
    v: VectorField,
    gravity: f64,
    derived: OnceCell<Derived>,
    dtn: OnceCell<Arc<DtnOperator>>,
}

impl Clone for FluidState {
    fn clone(&self) -> Self {
        Self {
            solver: Arc::clone(&self.solver),
            v: self.v.clone(),
            gravity: self.gravity,
            derived: self.derived.clone(),
            dtn: self.dtn.clone(),
        }
    }
}

impl std::fmt::Debug for FluidState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FluidState")
            .field("n_theta", &self.chart().n_theta())
            .field("n_rho", &self.chart().n_rho())
            .field("gravity", &self.gravity)
            .field("cached", &self.derived.get().is_some())
            .finish()
    }
}

fn jacobian(v: &VectorField) -> Jacobian {
    let gx = v.x.gradient();
    let gy = v.y.gradient();
    [[gx.x, gy.x], [gx.y, gy.y]]
}

fn trace_product(a: &Jacobian, b: &Jacobian) -> Field {
    // tr(AB) = Σ_ij A_ij B_ji
    let mut out = a[0][0].mul(&b[0][0]);
    for i in 0..2 {
        for j in 0..2 {
            if i == 0 && j == 0 {
                continue;
            }
            out = out.add(&a[i][j].mul(&b[j][i]));
        }
    }
    out
}

fn contract(a: &Jacobian, b: &Jacobian) -> Field {
    // Σ_ij A_ij B_ij
    a[0][0].mul(&b[0][0]).add(&a[0][1].mul(&b[0][1])).add(&a[1][0].mul(&b[1][0])).add(&a[1][1].mul(&b[1][1]))
}

fn mat_vec(g: &Jacobian, w: &VectorField) -> VectorField {
    VectorField::new(g[0][0].mul(&w.x).add(&g[0][1].mul(&w.y)), g[1][0].mul(&w.x).add(&g[1][1].mul(&w.y)))
}

fn hessian(u: &Field) -> Jacobian {
    let g = u.gradient();
    let gx = g.x.gradient();
    let gy = g.y.gradient();
    [[gx.x, gx.y], [gy.x, gy.y]]
}

impl FluidState {
    pub fn new(solver: Arc<DirichletSolver>, v: VectorField, gravity: f64) -> Result<Self> {
        if !Arc::ptr_eq(solver.chart(), v.chart()) {
            return Err(DropletError::InvalidArgument("velocity must live on the solver's chart".into()));
        }
        if !(gravity >= 0.0) || !gravity.is_finite() {
            return Err(DropletError::InvalidArgument(format!("gravity must be finite and nonnegative, got {gravity}")));
        }
        Ok(Self { solver, v, gravity, derived: OnceCell::new(), dtn: OnceCell::new() })
    }

    /// State on the domain of `gamma` with velocity sampled from `f(x, y)`.
    pub fn from_fn(gamma: BoundaryGraph, n_rho: usize, gravity: f64, f: impl Fn(f64, f64) -> [f64; 2]) -> Result<Self> {
        let solver = Arc::new(DirichletSolver::for_boundary(gamma, n_rho)?);
        let v = solver.chart().vector_from_fn(f);
        Self::new(solver, v, gravity)
    }

    pub fn at_rest(gamma: BoundaryGraph, n_rho: usize, gravity: f64) -> Result<Self> {
        Self::from_fn(gamma, n_rho, gravity, |_, _| [0.0, 0.0])
    }

    pub fn gamma(&self) -> &BoundaryGraph {
        self.solver.chart().gamma()
    }

    pub fn chart(&self) -> &Arc<DiskChart> {
        self.solver.chart()
    }

    pub fn solver(&self) -> &Arc<DirichletSolver> {
        &self.solver
    }

    pub fn velocity(&self) -> &VectorField {
        &self.v
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    /// Replaces the velocity and clears every derived quantity.
    pub fn set_velocity(&mut self, v: VectorField) -> Result<()> {
        if !Arc::ptr_eq(self.solver.chart(), v.chart()) {
            return Err(DropletError::InvalidArgument("velocity must live on the state's chart".into()));
        }
        self.v = v;
        self.derived = OnceCell::new();
        Ok(())
    }

    /// Moves to a new domain, restricting the velocity onto it.
    pub fn set_boundary(&mut self, solver: Arc<DirichletSolver>) -> Result<()> {
        let r = crate::chart::restrict_to_chart(&self.v, solver.chart())?;
        self.solver = solver;
        self.v = r.value;
        self.derived = OnceCell::new();
        self.dtn = OnceCell::new();
        Ok(())
    }

    /// Same velocity and domain under a different gravity.
    pub fn with_gravity(&self, gravity: f64) -> Result<Self> {
        let mut out = Self::new(Arc::clone(&self.solver), self.v.clone(), gravity)?;
        out.dtn = self.dtn.clone();
        Ok(out)
    }

    pub fn is_cached(&self) -> bool {
        self.derived.get().is_some()
    }

    /// Largest interior divergence of the velocity.
    pub fn divergence_max(&self) -> f64 {
        let b = self.chart().boundary_offset();
        self.v.divergence().values[..b].iter().fold(0.0f64, |m, d| m.max(d.abs()))
    }

    pub fn check_divergence(&self, tol: f64) -> Result<()> {
        let d = self.divergence_max();
        if d > tol {
            return Err(DropletError::DivergenceTooLarge { divergence: d, tol });
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<&Derived> {
        self.derived.get_or_try_init(|| self.compute_derived())
    }

    fn compute_derived(&self) -> Result<Derived> {
        let chart = self.chart();
        let n = chart.n_theta();
        let zero_b = BoundaryScalar::constant(n, 0.0);
        let g = jacobian(&self.v);
        let rhs = trace_product(&g, &g).scale(-1.0);
        let p = self.solver.solve(&rhs, &zero_b)?;
        let grad_p = p.gradient();
        let a = p.normal_derivative().map(|x| -x);
        let h = hessian(&p);
        let g2 = [[trace_row(&g, &g, 0, 0), trace_row(&g, &g, 0, 1)], [trace_row(&g, &g, 1, 0), trace_row(&g, &g, 1, 1)]];
        let lap_v = VectorField::new(self.v.x.laplacian(), self.v.y.laplacian());
        let f = trace_product(&h, &g).scale(4.0).add(&trace_product(&g2, &g).scale(2.0)).add(&lap_v.dot(&grad_p));
        let dtp = self.solver.solve(&f, &zero_b)?;
        let dt_grad_p = dtp.gradient().sub(&mat_vec(&g, &grad_p));
        let b = chart.boundary_offset();
        let normals = chart.normals();
        let dta = BoundaryScalar::new(
            (0..n).map(|l| -(normals[l][0] * dt_grad_p.x.values[b + l] + normals[l][1] * dt_grad_p.y.values[b + l])).collect(),
        );
        let omega = self.v.curl();
        Ok(Derived { grad_v: g, p, grad_p, hess_p: h, a, dtp, dt_grad_p, dta, omega })
    }

    pub fn pressure(&self) -> Result<&Field> {
        Ok(&self.derived()?.p)
    }

    pub fn taylor(&self) -> Result<&BoundaryScalar> {
        Ok(&self.derived()?.a)
    }

    pub fn min_taylor(&self) -> Result<f64> {
        Ok(self.taylor()?.min())
    }

    pub fn dtp(&self) -> Result<&Field> {
        Ok(&self.derived()?.dtp)
    }

    pub fn dt_grad_p(&self) -> Result<&VectorField> {
        Ok(&self.derived()?.dt_grad_p)
    }

    pub fn dta(&self) -> Result<&BoundaryScalar> {
        Ok(&self.derived()?.dta)
    }

    pub fn vorticity(&self) -> Result<&Field> {
        Ok(&self.derived()?.omega)
    }

    pub fn dtn(&self) -> Result<&Arc<DtnOperator>> {
        self.dtn.get_or_try_init(|| Ok(Arc::new(DtnOperator::assemble(&self.solver)?)))
    }

    /// `∫(|v|²/2 + g y) dx`.
    pub fn physical_energy(&self) -> f64 {
        let g = self.gravity;
        let chart = self.chart();
        let dens = self.v.x.mul(&self.v.x).add(&self.v.y.mul(&self.v.y)).scale(0.5);
        let pot = chart.field(chart.ys().iter().map(|y| g * y).collect());
        dens.add(&pot).integrate()
    }

    pub fn area(&self) -> f64 {
        self.chart().integrate_values(&vec![1.0; self.chart().len()])
    }
}

/// `(G G)_{ij}` entry as a field.
fn trace_row(a: &Jacobian, b: &Jacobian, i: usize, j: usize) -> Field {
    a[i][0].mul(&b[0][j]).add(&a[i][1].mul(&b[1][j]))
}

pub fn compute_pressure(state: &FluidState) -> Result<Field> {
    Ok(state.pressure()?.clone())
}

pub fn compute_taylor(state: &FluidState) -> Result<BoundaryScalar> {
    Ok(state.taylor()?.clone())
}

pub fn compute_dtp(state: &FluidState) -> Result<Field> {
    Ok(state.dtp()?.clone())
}

pub fn compute_dta(state: &FluidState) -> Result<BoundaryScalar> {
    Ok(state.dta()?.clone())
}

/// `½∫_Ω |w|² + ½∫_Γ a s²`, signed when `a` changes sign.
pub fn energy_lin(state: &FluidState, w: &VectorField, s: &BoundaryScalar) -> Result<f64> {
    let a = state.taylor()?;
    let vol = 0.5 * w.l2_norm_sqr();
    let sur = 0.5 * state.chart().boundary_integrate(&a.zip_with(s, |a, s| a * s * s));
    Ok(vol + sur)
}

/// Terms of `E^k = 1 + ‖v‖² + ‖ω‖²_{H^{k-1}} + ½∫|w_k|² + ½∫a s_k²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyComponents {
    pub constant: f64,
    pub velocity_l2_sq: f64,
    pub vorticity_hk_sq: f64,
    pub lin_volume: f64,
    pub lin_surface: f64,
}

impl EnergyComponents {
    pub fn total(&self) -> f64 {
        self.constant + self.velocity_l2_sq + self.vorticity_hk_sq + self.lin_volume + self.lin_surface
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub k: usize,
    pub e_lin: f64,
    pub e_k: f64,
    /// `None` when the Taylor coefficient is not positive.
    pub e_k_modified: Option<f64>,
    pub components: EnergyComponents,
}

fn check_k(state: &FluidState, k: usize) -> Result<()> {
    if k < 3 {
        return Err(DropletError::InvalidArgument(format!("energy index k must be at least 3, got {k}")));
    }
    let m_max = state.dtn()?.m_max();
    if k - 1 > m_max {
        return Err(DropletError::PowerTooHigh { m: k - 1, max: m_max });
    }
    Ok(())
}

fn grad_extension_sq(state: &FluidState, g: &BoundaryScalar) -> Result<f64> {
    Ok(state.solver().harmonic_extension(g)?.gradient().l2_norm_sqr())
}

/// `w_k = ∇ℋ𝒩^{k-2}D_t a` and `s_k = 𝒩^{k-1}a`.
pub fn good_variables(state: &FluidState, k: usize) -> Result<(VectorField, BoundaryScalar)> {
    check_k(state, k)?;
    let op = state.dtn()?;
    let d = state.derived()?;
    let w = state.solver().harmonic_extension(&op.apply_power(&d.dta, k - 2)?)?.gradient();
    let s = op.apply_power(&d.a, k - 1)?;
    Ok((w, s))
}

fn shared_components(state: &FluidState, k: usize) -> Result<(f64, f64)> {
    let v2 = state.velocity().l2_norm_sqr();
    let om = interior_sobolev_norm(state.vorticity()?, k - 1)?;
    Ok((v2, om * om))
}

pub fn energy_k(state: &FluidState, k: usize) -> Result<EnergyReport> {
    let (w, s) = good_variables(state, k)?;
    let (v2, om2) = shared_components(state, k)?;
    let a = state.taylor()?;
    let lin_volume = 0.5 * w.l2_norm_sqr();
    let lin_surface = 0.5 * state.chart().boundary_integrate(&a.zip_with(&s, |a, s| a * s * s));
    let components = EnergyComponents { constant: 1.0, velocity_l2_sq: v2, vorticity_hk_sq: om2, lin_volume, lin_surface };
    let e_modified = match energy_k_modified(state, k, DEFAULT_A_FLOOR) {
        Ok(e) => Some(e),
        Err(DropletError::TaylorSignViolation { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(EnergyReport { k, e_lin: lin_volume + lin_surface, e_k: components.total(), e_k_modified: e_modified, components })
}

/// `‖∇ℋ𝒩^{k-2}(a⁻¹D_t a)‖² + ‖a^{-1/2}𝒩^{k-1}a‖²_{L²(Γ)} + ‖ω‖²_{H^{k-1}} + ‖v‖² + 1`.
pub fn energy_k_modified(state: &FluidState, k: usize, a_floor: f64) -> Result<f64> {
    check_k(state, k)?;
    let d = state.derived()?;
    let min_a = d.a.min();
    if !(min_a > a_floor) {
        return Err(DropletError::TaylorSignViolation { min_a, floor: a_floor });
    }
    let op = state.dtn()?;
    let q = d.dta.zip_with(&d.a, |x, a| x / a);
    let vol = grad_extension_sq(state, &op.apply_power(&q, k - 2)?)?;
    let s = op.apply_power(&d.a, k - 1)?;
    let sur = state.chart().boundary_integrate(&s.zip_with(&d.a, |s, a| s * s / a));
    let (v2, om2) = shared_components(state, k)?;
    Ok(1.0 + v2 + om2 + vol + sur)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub a_sharp: f64,
    pub b_sharp: f64,
    pub a_eps: f64,
    pub b_diff: f64,
    /// `+∞` when `min a ≤ 0`; serialized as `null`.
    pub b_lin: f64,
    pub min_a: f64,
    pub thickness: f64,
}

fn subsample(chart: &DiskChart) -> Vec<usize> {
    let len = chart.len();
    let stride = len.div_ceil(PAIRWISE_NODES).max(1);
    (0..len).step_by(stride).collect()
}

/// `sup |u(x) - u(y)| / |x - y|^α` over a subsample of nodes, for each component.
fn pairwise_holder(fields: &[&Field], alpha: f64) -> f64 {
    let chart = fields[0].chart();
    let idx = subsample(chart);
    let (xs, ys) = (chart.xs(), chart.ys());
    let mut best = 0.0f64;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d = (xs[i] - xs[j]).hypot(ys[i] - ys[j]);
            if d <= 1e-12 {
                continue;
            }
            let diff = fields.iter().map(|f| (f.values[i] - f.values[j]).powi(2)).sum::<f64>().sqrt();
            best = best.max(diff / d.powf(alpha));
        }
    }
    best
}

fn max_operator_norm(g: &Jacobian) -> f64 {
    let len = g[0][0].values.len();
    let mut best = 0.0f64;
    for i in 0..len {
        let (a, b, c, d) = (g[0][0].values[i], g[0][1].values[i], g[1][0].values[i], g[1][1].values[i]);
        let s = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
        best = best.max(((s + disc) / 2.0).sqrt());
    }
    best
}

/// Homogeneous `sup_{j≥1} 2^{jα}‖P_j f‖_∞`.
fn homogeneous_besov(values: &[f64], alpha: f64) -> f64 {
    let n = values.len();
    let mut best = 0.0f64;
    let mut j = 1u32;
    while (1usize << (j - 1)) < n / 2 + 1 {
        let b = lp_block_values(values, j).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        best = best.max(2f64.powf(j as f64 * alpha) * b);
        j += 1;
    }
    best
}

fn sup(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn control_report(state: &FluidState) -> Result<ControlReport> {
    let d = state.derived()?;
    let gamma = state.gamma();
    let v = state.velocity();
    let lip_gamma = sup(&gamma.arclength_element());
    let deta = gamma.eta_d1();
    let v_half = pairwise_holder(&[&v.x, &v.y], 0.5);
    let lip_v = max_operator_norm(&d.grad_v);
    let eps = gamma.collar().eps;
    let v_sup = v.magnitude().max_abs();
    let a_sharp = v_half + lip_gamma;
    let b_sharp = lip_v + homogeneous_besov(deta, 0.5);
    let a_eps = v_sup + pairwise_holder(&[&v.x, &v.y], 0.5 + eps) + gamma.collar_norm();
    let dtp_grad = d.dtp.gradient().magnitude().max_abs();
    let gamma_c1_half = sup(gamma.eta()) + besov_holder(deta, 0.5);
    let b_diff = v_sup + lip_v + d.dtp.max_abs() + dtp_grad + gamma_c1_half;
    let min_a = d.a.min();
    let b_lin = if min_a > 0.0 { sup(&d.dta.zip_with(&d.a, |x, a| x / a).values) + lip_v } else { f64::INFINITY };
    Ok(ControlReport { a_sharp, b_sharp, a_eps, b_diff, b_lin, min_a, thickness: gamma.thickness() })
}

/// `κ + a⁻¹(Δp - ∂²p/∂n²)` at boundary nodes where `a > a_min`, with `κ`
/// positive on convex curves.
pub fn curvature_pressure_residual(state: &FluidState, a_min: f64) -> Result<f64> {
    let d = state.derived()?;
    let chart = state.chart();
    let b = chart.boundary_offset();
    let kappa = state.gamma().mean_curvature();
    let lap = d.p.laplacian();
    let mut worst = 0.0f64;
    for (l, nv) in chart.normals().iter().enumerate() {
        let a = d.a.values[l];
        if a <= a_min {
            continue;
        }
        let i = b + l;
        let h = &d.hess_p;
        let pnn = nv[0] * nv[0] * h[0][0].values[i] + 2.0 * nv[0] * nv[1] * h[0][1].values[i] + nv[1] * nv[1] * h[1][1].values[i];
        worst = worst.max((kappa.values[l] + (lap.values[i] - pnn) / a).abs());
    }
    Ok(worst)
}

/// Outward unit normal of a boundary at an arbitrary angle.
fn normal_at(eta: &TrigInterpolant, theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    let r = 1.0 + eta.eval(theta);
    let dr = eta.eval_derivative(theta, 1);
    let t = [dr * c - r * s, dr * s + r * c];
    let m = t[0].hypot(t[1]);
    [t[1] / m, -t[0] / m]
}

fn angle(p: [f64; 2]) -> f64 {
    p[1].atan2(p[0]).rem_euclid(2.0 * std::f64::consts::PI)
}

/// Polynomial used as time-independent test data on moving boundaries.
fn test_function(x: f64, y: f64) -> f64 {
    0.5 * x * x * x + x * y * y - 0.3 * y * y * y + 0.7 * x * y + 0.2 * y
}

fn test_gradient(x: f64, y: f64) -> [f64; 2] {
    [1.5 * x * x + y * y + 0.7 * y, 2.0 * x * y - 0.9 * y * y + 0.7 * x + 0.2]
}

/// Largest deviations in the moving-surface identities at the middle of three states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingIdentityReport {
    pub dt: f64,
    /// `D_t n + ((∇v)^* n)^⊤`.
    pub normal: f64,
    /// `[D_t, ℋ]f - Δ⁻¹(2∇v·∇²ℋf + ∇ℋf·Δv)`.
    pub h_commutator: f64,
    /// `[D_t, 𝒩]f` against its expansion.
    pub n_commutator: f64,
    /// `d/dt ∫_Γ f dS` against `∫_Γ D_t f + f(∂_s v^⊤ + κ v·n) dS`.
    pub surface_leibniz: f64,
    /// `|d/dt |Ω_t||`.
    pub area_rate: f64,
}

impl MovingIdentityReport {
    pub fn max_commutator(&self) -> f64 {
        self.normal.max(self.h_commutator).max(self.n_commutator)
    }
}

/// Checks the moving-surface identities on states at `t - dt`, `t`, `t + dt`.
///
/// Time derivatives are central differences along `x ± dt·v(x)`, which follow
/// particle paths to second order.
pub fn check_moving_identities(states: &[FluidState], dt: f64) -> Result<MovingIdentityReport> {
    if states.len() < 3 {
        return Err(DropletError::InvalidArgument(format!("need three states, got {}", states.len())));
    }
    if !(dt > 0.0) {
        return Err(DropletError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mid = states.len() / 2;
    let (prev, cur, next) = (&states[mid - 1], &states[mid], &states[mid + 1]);
    let chart = cur.chart();
    let n = chart.n_theta();
    let b = chart.boundary_offset();
    let v = cur.velocity();
    let g = jacobian(v);
    let normals = chart.normals();

    let shifted = |idx: usize, sign: f64| -> [f64; 2] {
        let x = chart.node(idx);
        [x[0] + sign * dt * v.x.values[idx], x[1] + sign * dt * v.y.values[idx]]
    };

    // Normal.
    let eta_p = prev.gamma().interpolant();
    let eta_n = next.gamma().interpolant();
    let mut normal = 0.0f64;
    let mut dtn_formula = Vec::with_capacity(n);
    for l in 0..n {
        let nl = normals[l];
        let np = normal_at(&eta_n, angle(shifted(b + l, 1.0)));
        let nm = normal_at(&eta_p, angle(shifted(b + l, -1.0)));
        let lhs = [(np[0] - nm[0]) / (2.0 * dt), (np[1] - nm[1]) / (2.0 * dt)];
        let i = b + l;
        let gn = [
            g[0][0].values[i] * nl[0] + g[0][1].values[i] * nl[1],
            g[1][0].values[i] * nl[0] + g[1][1].values[i] * nl[1],
        ];
        let dot = gn[0] * nl[0] + gn[1] * nl[1];
        let rhs = [-(gn[0] - dot * nl[0]), -(gn[1] - dot * nl[1])];
        dtn_formula.push(rhs);
        normal = normal.max((lhs[0] - rhs[0]).hypot(lhs[1] - rhs[1]));
    }

    // Harmonic extension commutator with f = F|Γ.
    let f_of = |s: &FluidState| s.chart().boundary_from_fn(test_function);
    let ext_p = prev.solver().harmonic_extension(&f_of(prev))?;
    let ext_n = next.solver().harmonic_extension(&f_of(next))?;
    let u = cur.solver().harmonic_extension(&f_of(cur))?;
    let dtf = BoundaryScalar::new(
        (0..n)
            .map(|l| {
                let i = b + l;
                let gr = test_gradient(chart.xs()[i], chart.ys()[i]);
                v.x.values[i] * gr[0] + v.y.values[i] * gr[1]
            })
            .collect(),
    );
    let h_dtf = cur.solver().harmonic_extension(&dtf)?;
    let sp = Sampler::new(&[&ext_p]);
    let sn = Sampler::new(&[&ext_n]);
    let mut buf = [0.0];
    let mut dt_u = vec![0.0; chart.len()];
    for (idx, out) in dt_u.iter_mut().enumerate() {
        let xp = shifted(idx, 1.0);
        let xm = shifted(idx, -1.0);
        sn.eval_xy(xp[0], xp[1], &mut buf)?;
        let up = buf[0];
        sp.eval_xy(xm[0], xm[1], &mut buf)?;
        *out = (up - buf[0]) / (2.0 * dt);
    }
    let grad_u = u.gradient();
    let hu = hessian(&u);
    let lap_v = VectorField::new(v.x.laplacian(), v.y.laplacian());
    let s0_rhs = contract(&g, &hu).scale(2.0).add(&grad_u.dot(&lap_v));
    let s0 = cur.solver().solve(&s0_rhs, &BoundaryScalar::constant(n, 0.0))?;
    let mut h_commutator = 0.0f64;
    for idx in 0..chart.len() {
        h_commutator = h_commutator.max((dt_u[idx] - h_dtf.values[idx] - s0.values[idx]).abs());
    }

    // Dirichlet-to-Neumann commutator.
    let nf_p = prev.dtn()?.apply(&f_of(prev));
    let nf_n = next.dtn()?.apply(&f_of(next));
    let ip = TrigInterpolant::new(&nf_p.values);
    let inn = TrigInterpolant::new(&nf_n.values);
    let n_dtf = cur.dtn()?.apply(&dtf);
    let grad_s0 = s0.gradient();
    let gt_grad_u = mat_vec(&g, &grad_u);
    let mut n_commutator = 0.0f64;
    for l in 0..n {
        let i = b + l;
        let lhs = (inn.eval(angle(shifted(i, 1.0))) - ip.eval(angle(shifted(i, -1.0)))) / (2.0 * dt) - n_dtf.values[l];
        let nl = normals[l];
        let dn = dtn_formula[l];
        let rhs = dn[0] * grad_u.x.values[i] + dn[1] * grad_u.y.values[i]
            - (nl[0] * gt_grad_u.x.values[i] + nl[1] * gt_grad_u.y.values[i])
            + nl[0] * grad_s0.x.values[i]
            + nl[1] * grad_s0.y.values[i];
        n_commutator = n_commutator.max((lhs - rhs).abs());
    }

    // Surface integral and area.
    let surf = |s: &FluidState| s.chart().boundary_integrate(&f_of(s));
    let lhs = (surf(next) - surf(prev)) / (2.0 * dt);
    let gamma = cur.gamma();
    let vt: Vec<f64> = (0..n)
        .map(|l| {
            let t = gamma.tangent(l);
            let m = t[0].hypot(t[1]);
            (v.x.values[b + l] * t[0] + v.y.values[b + l] * t[1]) / m
        })
        .collect();
    let ds = gamma.arclength_element();
    let dvt: Vec<f64> = spectral::periodic_derivative(&vt, 1).iter().zip(&ds).map(|(d, s)| d / s).collect();
    let kappa = gamma.mean_curvature();
    let fvals = f_of(cur);
    let integrand = BoundaryScalar::new(
        (0..n)
            .map(|l| {
                let i = b + l;
                let vn = v.x.values[i] * normals[l][0] + v.y.values[i] * normals[l][1];
                dtf.values[l] + fvals.values[l] * (dvt[l] + kappa.values[l] * vn)
            })
            .collect(),
    );
    let surface_leibniz = (lhs - chart.boundary_integrate(&integrand)).abs();
    let area_rate = ((next.gamma().area() - prev.gamma().area()) / (2.0 * dt)).abs();
    Ok(MovingIdentityReport { dt, normal, h_commutator, n_commutator, surface_leibniz, area_rate })
}

/// Velocity divergence accepted by [`FluidState::check_divergence`] by default.
pub const DEFAULT_DIV_TOL: f64 = DIV_TOL;
