//! Affine solutions: velocity `v = A x` on the ellipse `{xᵀQx < 1}`.
//!
//! With `v = Ax` the momentum equation reads `(Ȧ + A²)x = -∇p`, so the
//! pressure is quadratic. Vanishing on the boundary forces
//! `p = (μ/2)(1 - xᵀQx)`, and `Δp = -tr(∇v)²` fixes `μ = tr(A²)/tr(Q)`.
//! Hence
//!
//! ```text
//! dA/dt = -A² + μ Q,        dQ/dt = -AᵀQ - QA,
//! ```
//!
//! the second because `xᵀQx` is constant along particle paths. The Taylor
//! coefficient is `a = μ|Qx|` on the boundary, and the kinetic energy is
//! `(π/8) det(Q)^{-1/2} tr(A Q⁻¹ Aᵀ)`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Matrix2;

use crate::boundary::{BoundaryGraph, BoundaryScalar, Collar};
use crate::error::{DropletError, Result};
use crate::state::FluidState;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineState {
    pub a: Matrix2<f64>,
    pub q: Matrix2<f64>,
}

impl AffineState {
    pub fn new(a: Matrix2<f64>, q: Matrix2<f64>) -> Result<Self> {
        let s = Self { a, q };
        s.validate()?;
        Ok(s)
    }

    /// `A = diag(α, -α)` on the unit disk.
    pub fn straining(alpha: f64) -> Self {
        Self { a: Matrix2::new(alpha, 0.0, 0.0, -alpha), q: Matrix2::identity() }
    }

    /// Rigid rotation with angular velocity `omega` on the unit disk.
    pub fn rotation(omega: f64) -> Self {
        Self { a: Matrix2::new(0.0, -omega, omega, 0.0), q: Matrix2::identity() }
    }

    fn validate(&self) -> Result<()> {
        let tr = self.a.trace();
        if tr.abs() > 1e-12 * (1.0 + self.a.norm()) {
            return Err(DropletError::InvalidArgument(format!("velocity gradient must be trace-free, trace = {tr}")));
        }
        let q = &self.q;
        if (q[(0, 1)] - q[(1, 0)]).abs() > 1e-12 * q.norm() || !(q[(0, 0)] > 0.0) || !(q.determinant() > 0.0) {
            return Err(DropletError::InvalidArgument("shape matrix must be symmetric positive definite".into()));
        }
        Ok(())
    }

    /// Pressure amplitude `μ = tr(A²)/tr(Q)`.
    pub fn mu(&self) -> f64 {
        (self.a * self.a).trace() / self.q.trace()
    }

    pub fn velocity(&self, x: f64, y: f64) -> [f64; 2] {
        let a = &self.a;
        [a[(0, 0)] * x + a[(0, 1)] * y, a[(1, 0)] * x + a[(1, 1)] * y]
    }

    pub fn pressure(&self, x: f64, y: f64) -> f64 {
        let q = &self.q;
        0.5 * self.mu() * (1.0 - (q[(0, 0)] * x * x + 2.0 * q[(0, 1)] * x * y + q[(1, 1)] * y * y))
    }

    /// Polar radius of the boundary ellipse.
    pub fn polar_radius(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let q = &self.q;
        1.0 / (q[(0, 0)] * c * c + 2.0 * q[(0, 1)] * c * s + q[(1, 1)] * s * s).sqrt()
    }

    /// Graph values `η(θ_k) = r(θ_k) - 1` on `n_theta` nodes.
    pub fn eta(&self, n_theta: usize) -> Vec<f64> {
        (0..n_theta).map(|k| self.polar_radius(2.0 * PI * k as f64 / n_theta as f64) - 1.0).collect()
    }

    /// Closed-form Taylor coefficient `μ|Qx|` at the boundary point at angle θ.
    pub fn taylor(&self, theta: f64) -> f64 {
        let r = self.polar_radius(theta);
        let x = Matrix2::new(r * theta.cos(), 0.0, r * theta.sin(), 0.0);
        let qx = self.q * x;
        self.mu() * qx[(0, 0)].hypot(qx[(1, 0)])
    }

    pub fn area(&self) -> f64 {
        PI / self.q.determinant().sqrt()
    }

    pub fn kinetic_energy(&self) -> f64 {
        let qi = self.q.try_inverse().expect("positive definite");
        PI / 8.0 / self.q.determinant().sqrt() * (self.a * qi * self.a.transpose()).trace()
    }

    fn to_vec(self) -> [f64; 8] {
        let (a, q) = (self.a, self.q);
        [a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)], q[(0, 0)], q[(0, 1)], q[(1, 0)], q[(1, 1)]]
    }

    fn from_vec(y: &[f64; 8]) -> Self {
        Self { a: Matrix2::new(y[0], y[1], y[2], y[3]), q: Matrix2::new(y[4], y[5], y[6], y[7]) }
    }
}

/// Time derivatives `(dA/dt, dQ/dt)`.
pub fn affine_rhs(s: &AffineState) -> (Matrix2<f64>, Matrix2<f64>) {
    let da = -s.a * s.a + s.q * s.mu();
    let dq = -s.a.transpose() * s.q - s.q * s.a;
    (da, dq)
}

fn rhs_vec(y: &[f64; 8]) -> [f64; 8] {
    let (da, dq) = affine_rhs(&AffineState::from_vec(y));
    [da[(0, 0)], da[(0, 1)], da[(1, 0)], da[(1, 1)], dq[(0, 0)], dq[(0, 1)], dq[(1, 0)], dq[(1, 1)]]
}

// Dormand-Prince 5(4) tableau. The right-hand side is autonomous, so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

fn dopri_step(y: &[f64; 8], h: f64) -> ([f64; 8], f64) {
    let mut k = [[0.0; 8]; 7];
    for s in 0..7 {
        let mut ys = *y;
        for (r, a) in A[s].iter().enumerate().take(s) {
            for i in 0..8 {
                ys[i] += h * a * k[r][i];
            }
        }
        k[s] = rhs_vec(&ys);
    }
    let mut y5 = *y;
    let mut err = 0.0f64;
    for i in 0..8 {
        let mut d5 = 0.0;
        let mut d4 = 0.0;
        for s in 0..7 {
            d5 += B5[s] * k[s][i];
            d4 += B4[s] * k[s][i];
        }
        y5[i] += h * d5;
        let scale = 1.0 + y[i].abs().max(y5[i].abs());
        err = err.max((h * (d5 - d4)).abs() / scale);
    }
    (y5, err)
}

/// Advances `s` by `t` (possibly negative) to local tolerance `tol`.
pub fn advance(s: &AffineState, t: f64, tol: f64) -> Result<AffineState> {
    if t == 0.0 {
        return Ok(*s);
    }
    let dir = t.signum();
    let mut y = s.to_vec();
    let mut done = 0.0f64;
    let mut h = dir * (t.abs() * 0.1).min(0.01);
    let mut steps = 0usize;
    while (t - done).abs() > 1e-15 * t.abs().max(1.0) {
        if (done + h - t) * dir > 0.0 {
            h = t - done;
        }
        let (yn, err) = dopri_step(&y, h);
        if !err.is_finite() || yn.iter().any(|v| !v.is_finite()) {
            return Err(DropletError::StepFailure("non-finite affine state".into()));
        }
        if err <= tol {
            y = yn;
            done += h;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
        h *= fac;
        steps += 1;
        if steps > 1_000_000 || h.abs() < 1e-14 {
            return Err(DropletError::StepFailure(format!("step size collapsed at t = {done}")));
        }
    }
    Ok(AffineState::from_vec(&y))
}

/// Oracle states at the requested times (ascending, starting from `t = 0`).
#[derive(Clone, Debug)]
pub struct AffineTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<AffineState>,
}

pub fn integrate_affine(s0: &AffineState, times: &[f64], tol: f64) -> Result<AffineTrajectory> {
    let mut states = Vec::with_capacity(times.len());
    let mut cur = *s0;
    let mut t = 0.0;
    for &ti in times {
        cur = advance(&cur, ti - t, tol)?;
        t = ti;
        states.push(cur);
    }
    Ok(AffineTrajectory { times: times.to_vec(), states })
}

impl AffineTrajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema=droplet.affine_trajectory/1\nt,a11,a12,a21,a22,q11,q12,q22\n");
        for (t, st) in self.times.iter().zip(&self.states) {
            let (a, q) = (st.a, st.q);
            let _ = writeln!(
                s,
                "{t:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                a[(0, 0)],
                a[(0, 1)],
                a[(1, 0)],
                a[(1, 1)],
                q[(0, 0)],
                q[(0, 1)],
                q[(1, 1)]
            );
        }
        s
    }
}

/// `max |(Ȧ + A² - μQ)x|` over sample points of the ellipse, with `Ȧ` from a
/// fourth-order central difference of the integrated trajectory.
pub fn momentum_residual(s: &AffineState, tol: f64) -> Result<f64> {
    let h = 1e-2;
    let m2 = advance(s, -2.0 * h, tol)?;
    let m1 = advance(s, -h, tol)?;
    let p1 = advance(s, h, tol)?;
    let p2 = advance(s, 2.0 * h, tol)?;
    let adot = (m2.a - p2.a + (p1.a - m1.a) * 8.0) / (12.0 * h);
    let res = adot + s.a * s.a - s.q * s.mu();
    let mut worst = 0.0f64;
    for k in 0..16 {
        let th = 2.0 * PI * k as f64 / 16.0;
        for frac in [0.3, 0.7, 1.0] {
            let r = frac * s.polar_radius(th);
            let (x, y) = (r * th.cos(), r * th.sin());
            let rx = res[(0, 0)] * x + res[(0, 1)] * y;
            let ry = res[(1, 0)] * x + res[(1, 1)] * y;
            worst = worst.max(rx.hypot(ry));
        }
    }
    Ok(worst)
}

/// A fluid state sampled from an affine solution.
#[derive(Clone, Debug)]
pub struct AffineConversion {
    pub state: FluidState,
    /// `max |a - μ|Qx||` over the boundary nodes.
    pub taylor_residual: f64,
}

pub fn to_fluid_state(s: &AffineState, n_theta: usize, n_rho: usize) -> Result<AffineConversion> {
    to_fluid_state_with_collar(s, n_theta, n_rho, Collar::default())
}

pub fn to_fluid_state_with_collar(s: &AffineState, n_theta: usize, n_rho: usize, collar: Collar) -> Result<AffineConversion> {
    let gamma = BoundaryGraph::with_collar(s.eta(n_theta), collar)?;
    let norm = gamma.collar_norm();
    if norm >= collar.delta {
        return Err(DropletError::CollarExit { norm, delta: collar.delta });
    }
    let state = FluidState::from_fn(gamma, n_rho, 0.0, |x, y| s.velocity(x, y))?;
    let a = state.taylor()?;
    let exact = BoundaryScalar::new((0..n_theta).map(|k| s.taylor(state.gamma().theta(k))).collect());
    let taylor_residual = a.zip_with(&exact, |x, y| (x - y).abs()).max_abs();
    Ok(AffineConversion { state, taylor_residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straining_axes_evolve_exponentially() {
        let al = 0.25;
        let s = AffineState::straining(al);
        let (da, dq) = affine_rhs(&s);
        assert!((dq - Matrix2::new(-2.0 * al, 0.0, 0.0, 2.0 * al)).norm() < 1e-15);
        // tr(A²)/tr(Q) Q = α² I cancels -A² exactly at t = 0.
        assert!(da.norm() < 1e-15);
        // A is stationary to second order, so Q(t) follows diag(e^{-2αt}, e^{2αt}) at early times.
        let early = advance(&s, 1e-3, 1e-13).unwrap();
        assert!((early.q[(0, 0)] - (-2.0 * al * 1e-3f64).exp()).abs() < 1e-8);
        assert!((early.q[(1, 1)] - (2.0 * al * 1e-3f64).exp()).abs() < 1e-8);
        let st = advance(&s, 0.5, 1e-12).unwrap();
        assert!((st.area() - PI).abs() < 1e-11);
    }

    #[test]
    fn rest_state_stays_at_rest() {
        let s = AffineState::new(Matrix2::zeros(), Matrix2::identity()).unwrap();
        let (da, dq) = affine_rhs(&s);
        assert_eq!(da.norm(), 0.0);
        assert_eq!(dq.norm(), 0.0);
    }

    #[test]
    fn invariants_along_trajectories() {
        let s0 = AffineState::new(Matrix2::new(0.3, 0.2, -0.1, -0.3), Matrix2::new(1.1, 0.05, 0.05, 0.95)).unwrap();
        let times: Vec<f64> = (1..=5).map(|k| 0.1 * k as f64).collect();
        let tr = integrate_affine(&s0, &times, 1e-12).unwrap();
        for st in &tr.states {
            assert!((st.area() - s0.area()).abs() < 1e-12);
            assert!((st.kinetic_energy() - s0.kinetic_energy()).abs() < 1e-9);
            assert!(momentum_residual(st, 1e-13).unwrap() < 1e-9);
            assert!(st.a.trace().abs() < 1e-12);
        }
        // A boundary point carried by v = Ax stays on the ellipse.
        let th: f64 = 0.7;
        let r = s0.polar_radius(th);
        let mut x = [r * th.cos(), r * th.sin()];
        let mut s = s0;
        let dt = 1e-3;
        for _ in 0..100 {
            let mid = advance(&s, 0.5 * dt, 1e-13).unwrap();
            let v1 = s.velocity(x[0], x[1]);
            let xm = [x[0] + 0.5 * dt * v1[0], x[1] + 0.5 * dt * v1[1]];
            let v2 = mid.velocity(xm[0], xm[1]);
            let xe = [x[0] + 0.5 * dt * v2[0], x[1] + 0.5 * dt * v2[1]];
            let v3 = mid.velocity(xe[0], xe[1]);
            let end = advance(&s, dt, 1e-13).unwrap();
            let xf = [x[0] + dt * v3[0], x[1] + dt * v3[1]];
            let v4 = end.velocity(xf[0], xf[1]);
            x = [
                x[0] + dt / 6.0 * (v1[0] + 2.0 * v2[0] + 2.0 * v3[0] + v4[0]),
                x[1] + dt / 6.0 * (v1[1] + 2.0 * v2[1] + 2.0 * v3[1] + v4[1]),
            ];
            s = end;
        }
        let q = s.q;
        let level = q[(0, 0)] * x[0] * x[0] + 2.0 * q[(0, 1)] * x[0] * x[1] + q[(1, 1)] * x[1] * x[1];
        assert!((level - 1.0).abs() < 1e-10, "{level}");
    }

    #[test]
    fn conversion_matches_closed_forms() {
        let c = to_fluid_state(&AffineState::straining(0.3), 64, 16).unwrap();
        assert!(c.state.gamma().eta().iter().all(|e| e.abs() < 1e-15));
        assert!(c.taylor_residual < 1e-6);
        assert!(c.state.taylor().unwrap().values.iter().all(|a| (a - 0.09).abs() < 1e-6));
        let r = to_fluid_state(&AffineState::rotation(0.5), 64, 16).unwrap();
        assert!(r.state.taylor().unwrap().values.iter().all(|a| (a + 0.25).abs() < 1e-6));
        let e = AffineState::new(Matrix2::new(0.2, 0.0, 0.0, -0.2), Matrix2::new(1.2, 0.1, 0.1, 0.9)).unwrap();
        let ce = to_fluid_state(&e, 128, 24).unwrap();
        for k in 0..128 {
            let th = 2.0 * PI * k as f64 / 128.0;
            let (s, co) = th.sin_cos();
            let r = 1.0 / (1.2 * co * co + 0.2 * co * s + 0.9 * s * s).sqrt();
            assert!((ce.state.gamma().eta()[k] - (r - 1.0)).abs() < 1e-12);
        }
        assert!(ce.taylor_residual < 1e-6, "{}", ce.taylor_residual);
        let far = AffineState::new(Matrix2::zeros(), Matrix2::new(4.0, 0.0, 0.0, 0.25)).unwrap();
        assert!(matches!(to_fluid_state(&far, 64, 12), Err(DropletError::CollarExit { .. }) | Err(DropletError::StarShapeViolation { .. })));
    }

    #[test]
    fn pressure_and_dtp_on_an_ellipse() {
        let e = AffineState::new(Matrix2::new(0.25, 0.1, 0.0, -0.25), Matrix2::new(1.15, 0.05, 0.05, 0.9)).unwrap();
        let c = to_fluid_state(&e, 128, 24).unwrap();
        let st = &c.state;
        let exact_p = st.chart().field_from_fn(|x, y| e.pressure(x, y));
        assert!(st.pressure().unwrap().sub(&exact_p).max_abs() < 1e-10);
        // D_t p = (μ̇/2)(1 - xᵀQx) since xᵀQx is transported.
        let (da, dq) = affine_rhs(&e);
        let tr_a2_dot = (da * e.a + e.a * da).trace();
        let mu_dot = tr_a2_dot / e.q.trace() - (e.a * e.a).trace() * dq.trace() / e.q.trace().powi(2);
        let exact_dtp = st.chart().field_from_fn(|x, y| {
            let q = &e.q;
            0.5 * mu_dot * (1.0 - (q[(0, 0)] * x * x + 2.0 * q[(0, 1)] * x * y + q[(1, 1)] * y * y))
        });
        let err = st.dtp().unwrap().sub(&exact_dtp).max_abs();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn trajectory_csv_declares_schema() {
        let tr = integrate_affine(&AffineState::straining(0.1), &[0.0, 0.1], 1e-12).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("# schema=droplet.affine_trajectory/1\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
