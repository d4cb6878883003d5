//! Boundary-fitted polar chart of a star-shaped domain and the field calculus
//! on it.
//!
//! The chart maps `(ρ, θ) ∈ (0,1] × [0,2π)` to `F(ρ,θ)(cos θ, sin θ)` with
//!
//! ```text
//! F = ρ S,   S(ρ,θ) = R₀ + η_e(θ) ρ² + η_o(θ) ρ,
//! ```
//!
//! where `R₀ = 1 + mean η`, `η_e` collects the even nonzero Fourier modes of
//! `η` and `η_o` the odd ones. At `ρ = 1` this is the boundary `1 + η`; near
//! the origin `F(-ρ,θ) = F(ρ,θ+π)`, so fields extended through the centre
//! stay smooth and the folded Chebyshev differentiation in [`RadialGrid`]
//! keeps spectral accuracy.
//!
//! Values are stored row-major with shape `(n_rho, n_theta)`: row `i` is the
//! circle `ρ = ρ_i` (ascending, the last row is the boundary) and column `l`
//! the angle `θ_l = 2πl/n_theta`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::boundary::{BoundaryGraph, BoundaryScalar};
use crate::error::{DropletError, Result};
use crate::spectral::{self, RadialGrid, TrigInterpolant};

/// Highest derivative order accepted by [`interior_sobolev_norm`].
pub const MAX_DERIVATIVE_ORDER: usize = 4;

#[derive(Debug)]
pub struct DiskChart {
    gamma: BoundaryGraph,
    radial: RadialGrid,
    n_theta: usize,
    t1: DMatrix<f64>,
    t2: DMatrix<f64>,
    r0: f64,
    eta_even: TrigInterpolant,
    eta_odd: TrigInterpolant,
    pub(crate) x: Vec<f64>,
    pub(crate) y: Vec<f64>,
    pub(crate) rho_x: Vec<f64>,
    pub(crate) rho_y: Vec<f64>,
    pub(crate) th_x: Vec<f64>,
    pub(crate) th_y: Vec<f64>,
    pub(crate) g_rr: Vec<f64>,
    pub(crate) g_rt: Vec<f64>,
    pub(crate) g_tt: Vec<f64>,
    pub(crate) lap_rho: Vec<f64>,
    jacobian: Vec<f64>,
    area_w: Vec<f64>,
    normal: Vec<[f64; 2]>,
    n_rho_coef: Vec<f64>,
    n_th_coef: Vec<f64>,
    arc_w: Vec<f64>,
}

/// Location of a Cartesian point in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartPoint {
    pub rho: f64,
    pub theta: f64,
}

impl DiskChart {
    pub fn new(gamma: BoundaryGraph, n_rho: usize) -> Result<Arc<Self>> {
        if n_rho < 4 {
            return Err(DropletError::InvalidGrid(format!("n_rho must be at least 4, got {n_rho}")));
        }
        let n = gamma.n_theta();
        let radial = RadialGrid::new(n_rho);
        let (t1, t2) = spectral::fourier_diff_matrices(n);

        let c = gamma.eta_hat();
        let r0 = 1.0 + c[0].re;
        let mut ce = vec![Complex64::new(0.0, 0.0); n];
        let mut co = vec![Complex64::new(0.0, 0.0); n];
        for (k, ck) in c.iter().enumerate().skip(1) {
            if spectral::signed_mode(k, n) % 2 == 0 {
                ce[k] = *ck;
            } else {
                co[k] = *ck;
            }
        }
        let e0 = spectral::inverse(&ce);
        let o0 = spectral::inverse(&co);
        let e1 = spectral::periodic_derivative(&e0, 1);
        let o1 = spectral::periodic_derivative(&o0, 1);
        let e2 = spectral::periodic_derivative(&e0, 2);
        let o2 = spectral::periodic_derivative(&o0, 2);

        // The radial stretch must stay positive on the whole segment, not only at nodes.
        for l in 0..n {
            for s in 0..=200 {
                let r = s as f64 / 200.0;
                let f_r = r0 + 3.0 * e0[l] * r * r + 2.0 * o0[l] * r;
                if f_r <= 0.0 {
                    return Err(DropletError::ChartSingular { node: l, value: f_r });
                }
            }
        }

        let size = n_rho * n;
        let mut ch = Self {
            eta_even: TrigInterpolant::new(&e0),
            eta_odd: TrigInterpolant::new(&o0),
            gamma,
            n_theta: n,
            t1,
            t2,
            r0,
            x: vec![0.0; size],
            y: vec![0.0; size],
            rho_x: vec![0.0; size],
            rho_y: vec![0.0; size],
            th_x: vec![0.0; size],
            th_y: vec![0.0; size],
            g_rr: vec![0.0; size],
            g_rt: vec![0.0; size],
            g_tt: vec![0.0; size],
            lap_rho: vec![0.0; size],
            jacobian: vec![0.0; size],
            area_w: vec![0.0; size],
            normal: Vec::new(),
            n_rho_coef: vec![0.0; n],
            n_th_coef: vec![0.0; n],
            arc_w: Vec::new(),
            radial,
        };
        let h = 2.0 * PI / n as f64;
        for i in 0..n_rho {
            let r = ch.radial.rho[i];
            for l in 0..n {
                let idx = i * n + l;
                let (s, co_) = ch.gamma.theta(l).sin_cos();
                let f = r * (r0 + e0[l] * r * r + o0[l] * r);
                let f_r = r0 + 3.0 * e0[l] * r * r + 2.0 * o0[l] * r;
                let f_rr = 6.0 * e0[l] * r + 2.0 * o0[l];
                let f_t = e1[l] * r.powi(3) + o1[l] * r * r;
                let f_tt = e2[l] * r.powi(3) + o2[l] * r * r;
                let f_rt = 3.0 * e1[l] * r * r + 2.0 * o1[l] * r;
                if f <= 0.0 {
                    return Err(DropletError::ChartSingular { node: idx, value: f });
                }
                ch.x[idx] = f * co_;
                ch.y[idx] = f * s;
                // ∇ρ = e_r / F_ρ - F_θ e_θ / (F_ρ F),  ∇θ = e_θ / F
                let a = 1.0 / f_r;
                let b = -f_t / (f_r * f);
                ch.rho_x[idx] = a * co_ - b * s;
                ch.rho_y[idx] = a * s + b * co_;
                ch.th_x[idx] = -s / f;
                ch.th_y[idx] = co_ / f;
                ch.g_rr[idx] = (1.0 + f_t * f_t / (f * f)) / (f_r * f_r);
                ch.g_rt[idx] = -f_t / (f_r * f * f);
                ch.g_tt[idx] = 1.0 / (f * f);
                let q = -f_t / f_r;
                let q_t = -(f_tt * f_r - f_t * f_rt) / (f_r * f_r);
                let q_r = -(f_rt * f_r - f_t * f_rr) / (f_r * f_r);
                ch.lap_rho[idx] = -f_rr / f_r.powi(3) + 1.0 / (f * f_r) + (q_t + q * q_r) / (f * f);
                ch.jacobian[idx] = f * f_r;
                ch.area_w[idx] = ch.radial.quad[i] * h * f * f_r;
            }
        }
        ch.normal = ch.gamma.outward_normal();
        ch.arc_w = ch.gamma.arclength_weights();
        let b = (n_rho - 1) * n;
        for l in 0..n {
            let nv = ch.normal[l];
            ch.n_rho_coef[l] = nv[0] * ch.rho_x[b + l] + nv[1] * ch.rho_y[b + l];
            ch.n_th_coef[l] = nv[0] * ch.th_x[b + l] + nv[1] * ch.th_y[b + l];
        }
        Ok(Arc::new(ch))
    }

    pub fn gamma(&self) -> &BoundaryGraph {
        &self.gamma
    }

    pub fn n_rho(&self) -> usize {
        self.radial.n_rho
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn len(&self) -> usize {
        self.n_rho() * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn radial(&self) -> &RadialGrid {
        &self.radial
    }

    pub fn rho(&self) -> &[f64] {
        &self.radial.rho
    }

    /// Mean radius `R₀` of the chart.
    pub fn mean_radius(&self) -> f64 {
        self.r0
    }

    pub(crate) fn theta_matrices(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.t1, &self.t2)
    }

    /// Cartesian coordinates of node `idx`.
    pub fn node(&self, idx: usize) -> [f64; 2] {
        [self.x[idx], self.y[idx]]
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    /// Jacobian determinant `F F_ρ` of the chart at each node.
    pub fn jacobian(&self) -> &[f64] {
        &self.jacobian
    }

    /// Quadrature weights for `∫_Ω f dx`.
    pub fn area_weights(&self) -> &[f64] {
        &self.area_w
    }

    pub fn normals(&self) -> &[[f64; 2]] {
        &self.normal
    }

    pub fn arclength_weights(&self) -> &[f64] {
        &self.arc_w
    }

    pub fn boundary_offset(&self) -> usize {
        (self.n_rho() - 1) * self.n_theta
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        idx >= self.boundary_offset()
    }

    /// Two radial cells at the boundary, in units of ρ.
    pub fn extrapolation_band(&self) -> f64 {
        2.0 * self.radial.outer_spacing()
    }

    fn fold(&self, u: &[f64], same: &DMatrix<f64>, mirror: &DMatrix<f64>) -> Vec<f64> {
        let (nr, n) = (self.n_rho(), self.n_theta);
        let half = n / 2;
        let mut out = vec![0.0; nr * n];
        for i in 0..nr {
            let row = &mut out[i * n..(i + 1) * n];
            for k in 0..nr {
                let (a, b) = (same[(i, k)], mirror[(i, k)]);
                let src = &u[k * n..(k + 1) * n];
                for l in 0..n {
                    row[l] += a * src[l] + b * src[(l + half) % n];
                }
            }
        }
        out
    }

    fn theta_apply(&self, u: &[f64], t: &DMatrix<f64>) -> Vec<f64> {
        let (nr, n) = (self.n_rho(), self.n_theta);
        let mut out = vec![0.0; nr * n];
        for i in 0..nr {
            let src = &u[i * n..(i + 1) * n];
            for l in 0..n {
                let mut acc = 0.0;
                for (lp, s) in src.iter().enumerate() {
                    acc += t[(l, lp)] * s;
                }
                out[i * n + l] = acc;
            }
        }
        out
    }

    pub fn d_rho(&self, u: &[f64]) -> Vec<f64> {
        self.fold(u, &self.radial.d1_same, &self.radial.d1_mirror)
    }

    pub fn d_rho_rho(&self, u: &[f64]) -> Vec<f64> {
        self.fold(u, &self.radial.d2_same, &self.radial.d2_mirror)
    }

    pub fn d_theta(&self, u: &[f64]) -> Vec<f64> {
        self.theta_apply(u, &self.t1)
    }

    pub fn d_theta_theta(&self, u: &[f64]) -> Vec<f64> {
        self.theta_apply(u, &self.t2)
    }

    /// Cartesian gradient of nodal values.
    pub fn grad_values(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ur = self.d_rho(u);
        let ut = self.d_theta(u);
        let gx = (0..u.len()).map(|i| self.rho_x[i] * ur[i] + self.th_x[i] * ut[i]).collect();
        let gy = (0..u.len()).map(|i| self.rho_y[i] * ur[i] + self.th_y[i] * ut[i]).collect();
        (gx, gy)
    }

    /// Chart Laplacian of nodal values.
    pub fn laplacian_values(&self, u: &[f64]) -> Vec<f64> {
        let ur = self.d_rho(u);
        let urr = self.d_rho_rho(u);
        let utt = self.d_theta_theta(u);
        let urt = self.d_theta(&ur);
        (0..u.len())
            .map(|i| {
                self.g_rr[i] * urr[i] + 2.0 * self.g_rt[i] * urt[i] + self.g_tt[i] * utt[i] + self.lap_rho[i] * ur[i]
            })
            .collect()
    }

    /// Outward normal derivative at the boundary nodes.
    pub fn normal_derivative_values(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n_theta;
        let b = self.boundary_offset();
        let (nr, rad) = (self.n_rho(), &self.radial);
        let half = n / 2;
        let i = nr - 1;
        let mut out = vec![0.0; n];
        for l in 0..n {
            let mut ur = 0.0;
            for k in 0..nr {
                ur += rad.d1_same[(i, k)] * u[k * n + l] + rad.d1_mirror[(i, k)] * u[k * n + (l + half) % n];
            }
            let mut ut = 0.0;
            for lp in 0..n {
                ut += self.t1[(l, lp)] * u[b + lp];
            }
            out[l] = self.n_rho_coef[l] * ur + self.n_th_coef[l] * ut;
        }
        out
    }

    pub fn integrate_values(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.area_w).map(|(a, w)| a * w).sum()
    }

    pub fn boundary_integrate(&self, g: &BoundaryScalar) -> f64 {
        g.values.iter().zip(&self.arc_w).map(|(a, w)| a * w).sum()
    }

    /// Chart coordinates of a Cartesian point (ρ may exceed 1 outside the domain).
    pub fn locate(&self, x: f64, y: f64) -> Result<ChartPoint> {
        let r = x.hypot(y);
        let theta = y.atan2(x).rem_euclid(2.0 * PI);
        if r == 0.0 {
            return Ok(ChartPoint { rho: 0.0, theta: 0.0 });
        }
        let e = self.eta_even.eval(theta);
        let o = self.eta_odd.eval(theta);
        let mut rho = r / (self.r0 + e + o);
        for _ in 0..60 {
            let g = rho * (self.r0 + e * rho * rho + o * rho) - r;
            let dg = self.r0 + 3.0 * e * rho * rho + 2.0 * o * rho;
            if dg <= 0.0 {
                return Err(DropletError::InversionFailure(format!("chart stretch vanishes at ({x}, {y})")));
            }
            let step = g / dg;
            rho -= step;
            if step.abs() <= 1e-15 * rho.max(1e-300) {
                return Ok(ChartPoint { rho, theta });
            }
        }
        Err(DropletError::InversionFailure(format!("radial Newton stalled at ({x}, {y})")))
    }

    pub fn field(self: &Arc<Self>, values: Vec<f64>) -> Field {
        assert_eq!(values.len(), self.len(), "field size does not match chart");
        Field { chart: Arc::clone(self), values }
    }

    pub fn zeros(self: &Arc<Self>) -> Field {
        self.field(vec![0.0; self.len()])
    }

    pub fn field_from_fn(self: &Arc<Self>, f: impl Fn(f64, f64) -> f64) -> Field {
        let v = (0..self.len()).map(|i| f(self.x[i], self.y[i])).collect();
        self.field(v)
    }

    pub fn vector_from_fn(self: &Arc<Self>, f: impl Fn(f64, f64) -> [f64; 2]) -> VectorField {
        let (mut vx, mut vy) = (Vec::with_capacity(self.len()), Vec::with_capacity(self.len()));
        for i in 0..self.len() {
            let v = f(self.x[i], self.y[i]);
            vx.push(v[0]);
            vy.push(v[1]);
        }
        VectorField::new(self.field(vx), self.field(vy))
    }

    /// Boundary scalar sampled from a Cartesian function at the boundary nodes.
    pub fn boundary_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> BoundaryScalar {
        let b = self.boundary_offset();
        BoundaryScalar::new((0..self.n_theta).map(|l| f(self.x[b + l], self.y[b + l])).collect())
    }
}

/// Scalar samples on a chart.
#[derive(Clone, Debug)]
pub struct Field {
    chart: Arc<DiskChart>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn chart(&self) -> &Arc<DiskChart> {
        &self.chart
    }

    pub fn with_values(&self, values: Vec<f64>) -> Field {
        self.chart.field(values)
    }

    pub fn boundary_trace(&self) -> BoundaryScalar {
        BoundaryScalar::new(self.values[self.chart.boundary_offset()..].to_vec())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        self.with_values(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| v * s)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn gradient(&self) -> VectorField {
        let (gx, gy) = self.chart.grad_values(&self.values);
        VectorField::new(self.with_values(gx), self.with_values(gy))
    }

    pub fn laplacian(&self) -> Field {
        self.with_values(self.chart.laplacian_values(&self.values))
    }

    pub fn d_x(&self) -> Field {
        self.gradient().x
    }

    pub fn d_y(&self) -> Field {
        self.gradient().y
    }

    pub fn integrate(&self) -> f64 {
        self.chart.integrate_values(&self.values)
    }

    pub fn normal_derivative(&self) -> BoundaryScalar {
        BoundaryScalar::new(self.chart.normal_derivative_values(&self.values))
    }

    pub fn l2_norm(&self) -> f64 {
        self.mul(self).integrate().max(0.0).sqrt()
    }
}

/// Cartesian vector field on a chart.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub x: Field,
    pub y: Field,
}

impl VectorField {
    pub fn new(x: Field, y: Field) -> Self {
        assert!(Arc::ptr_eq(x.chart(), y.chart()), "vector components must share a chart");
        Self { x, y }
    }

    pub fn chart(&self) -> &Arc<DiskChart> {
        self.x.chart()
    }

    pub fn zeros(chart: &Arc<DiskChart>) -> Self {
        Self::new(chart.zeros(), chart.zeros())
    }

    pub fn divergence(&self) -> Field {
        self.x.d_x().add(&self.y.d_y())
    }

    pub fn curl(&self) -> Field {
        self.y.d_x().sub(&self.x.d_y())
    }

    pub fn dot(&self, other: &VectorField) -> Field {
        self.x.mul(&other.x).add(&self.y.mul(&other.y))
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField::new(self.x.add(&other.x), self.y.add(&other.y))
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField::new(self.x.sub(&other.x), self.y.sub(&other.y))
    }

    pub fn scale(&self, s: f64) -> VectorField {
        VectorField::new(self.x.scale(s), self.y.scale(s))
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> Field {
        self.x.zip_with(&self.y, f64::hypot)
    }

    pub fn max_abs(&self) -> f64 {
        self.magnitude().max()
    }

    /// `v·n` at the boundary nodes.
    pub fn normal_trace(&self) -> BoundaryScalar {
        let c = self.chart();
        let b = c.boundary_offset();
        BoundaryScalar::new(
            c.normals().iter().enumerate().map(|(l, n)| n[0] * self.x.values[b + l] + n[1] * self.y.values[b + l]).collect(),
        )
    }

    /// `∫|v|²`.
    pub fn l2_norm_sqr(&self) -> f64 {
        self.dot(self).integrate()
    }
}

pub fn gradient(f: &Field) -> VectorField {
    f.gradient()
}

pub fn divergence(u: &VectorField) -> Field {
    u.divergence()
}

pub fn curl2d(u: &VectorField) -> Field {
    u.curl()
}

pub fn laplacian(f: &Field) -> Field {
    f.laplacian()
}

pub fn integrate(f: &Field) -> f64 {
    f.integrate()
}

pub fn boundary_integrate(g: &BoundaryScalar, chart: &DiskChart) -> f64 {
    chart.boundary_integrate(g)
}

/// `(Σ_{|α|≤k} ‖∂^α f‖²_{L²})^{1/2}` with every multi-index counted once.
pub fn interior_sobolev_norm(f: &Field, k: usize) -> Result<f64> {
    interior_sobolev_norm_with_max(f, k, MAX_DERIVATIVE_ORDER)
}

pub fn interior_sobolev_norm_with_max(f: &Field, k: usize, max_order: usize) -> Result<f64> {
    if k > max_order {
        return Err(DropletError::OrderTooHigh { order: k, max: max_order });
    }
    // Level j holds ∂_x^{j-b} ∂_y^{b} f for b = 0..=j.
    let mut level = vec![f.clone()];
    let mut total = f.mul(f).integrate();
    for _ in 0..k {
        let mut next = Vec::with_capacity(level.len() + 1);
        for (b, g) in level.iter().enumerate() {
            let grad = g.gradient();
            if b == 0 {
                next.push(grad.x);
            }
            next.push(grad.y);
        }
        total += next.iter().map(|g| g.mul(g).integrate()).sum::<f64>();
        level = next;
    }
    Ok(total.max(0.0).sqrt())
}

/// Spectral evaluation of chart fields at arbitrary points.
pub struct Sampler {
    chart: Arc<DiskChart>,
    /// Per field, per radial node, the half spectrum in θ.
    coeffs: Vec<Vec<Vec<Complex64>>>,
}

impl Sampler {
    pub fn new(fields: &[&Field]) -> Self {
        let chart = Arc::clone(fields[0].chart());
        let (nr, n) = (chart.n_rho(), chart.n_theta());
        let coeffs = fields
            .iter()
            .map(|f| {
                assert!(Arc::ptr_eq(f.chart(), &chart), "sampled fields must share a chart");
                (0..nr)
                    .map(|i| {
                        let c = spectral::forward(&f.values[i * n..(i + 1) * n]);
                        c[..=n / 2].to_vec()
                    })
                    .collect()
            })
            .collect();
        Self { chart, coeffs }
    }

    pub fn chart(&self) -> &Arc<DiskChart> {
        &self.chart
    }

    pub fn n_fields(&self) -> usize {
        self.coeffs.len()
    }

    /// Values of all fields at a chart point.
    pub fn eval(&self, p: ChartPoint, out: &mut [f64]) {
        let n = self.chart.n_theta();
        let (even, odd) = self.chart.radial.parity_weights(p.rho);
        let e1 = Complex64::from_polar(1.0, p.theta);
        for (fi, c) in self.coeffs.iter().enumerate() {
            let mut e = Complex64::new(1.0, 0.0);
            let mut acc = 0.0;
            for m in 0..=n / 2 {
                let w = if m % 2 == 0 { &even } else { &odd };
                let mut cm = Complex64::new(0.0, 0.0);
                for (i, wi) in w.iter().enumerate() {
                    cm += c[i][m] * *wi;
                }
                acc += if m == 0 {
                    cm.re
                } else if 2 * m == n {
                    cm.re * (m as f64 * p.theta).cos()
                } else {
                    2.0 * (cm * e).re
                };
                e *= e1;
            }
            out[fi] = acc;
        }
    }

    /// Evaluates at a Cartesian point, returning the chart radius as well.
    pub fn eval_xy(&self, x: f64, y: f64, out: &mut [f64]) -> Result<f64> {
        let p = self.chart.locate(x, y)?;
        self.eval(p, out);
        Ok(p.rho)
    }
}

/// Result of moving a field onto another chart.
#[derive(Clone, Debug)]
pub struct Restricted<T> {
    pub value: T,
    /// Number of target nodes that fell outside the source domain (within the band).
    pub extrapolated: usize,
}

/// Samples fields at the nodes of `target`, which must lie inside the source
/// domain up to the extrapolation band.
pub fn transfer_fields(fields: &[&Field], target: &Arc<DiskChart>) -> Result<Restricted<Vec<Field>>> {
    let sampler = Sampler::new(fields);
    let band = fields[0].chart().extrapolation_band();
    let mut out = vec![vec![0.0; target.len()]; fields.len()];
    let mut buf = vec![0.0; fields.len()];
    let mut extrapolated = 0;
    for idx in 0..target.len() {
        let rho = sampler.eval_xy(target.x[idx], target.y[idx], &mut buf)?;
        if rho > 1.0 + band {
            return Err(DropletError::DomainNotContained { excess: rho - 1.0, band });
        }
        if rho > 1.0 + 1e-13 {
            extrapolated += 1;
        }
        for (o, b) in out.iter_mut().zip(&buf) {
            o[idx] = *b;
        }
    }
    Ok(Restricted { value: out.into_iter().map(|v| target.field(v)).collect(), extrapolated })
}

pub fn restrict_to_chart(u: &VectorField, target: &Arc<DiskChart>) -> Result<Restricted<VectorField>> {
    let r = transfer_fields(&[&u.x, &u.y], target)?;
    let mut it = r.value.into_iter();
    let (x, y) = (it.next().unwrap(), it.next().unwrap());
    Ok(Restricted { value: VectorField::new(x, y), extrapolated: r.extrapolated })
}

/// Restriction of a velocity field to the domain bounded by `gamma_b`.
pub fn restrict(u: &VectorField, gamma_b: &BoundaryGraph) -> Result<Restricted<VectorField>> {
    let target = DiskChart::new(gamma_b.clone(), u.chart().n_rho())?;
    restrict_to_chart(u, &target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(n: usize, nr: usize, f: impl Fn(f64) -> f64) -> Arc<DiskChart> {
        DiskChart::new(BoundaryGraph::from_fn(n, f).unwrap(), nr).unwrap()
    }

    #[test]
    fn gradient_of_linear_function() {
        let c = chart(64, 16, |_| 0.0);
        let g = c.field_from_fn(|x, _| x).gradient();
        assert!(g.x.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
        assert!(g.y.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn straining_and_rotation_fields() {
        let c = chart(64, 16, |t| 0.1 * (2.0 * t).cos());
        let a = 0.3;
        let u = c.vector_from_fn(|x, y| [a * x, -a * y]);
        assert!(u.divergence().max_abs() < 1e-10);
        assert!(u.curl().max_abs() < 1e-10);
        let w = 0.7;
        let r = c.vector_from_fn(|x, y| [-w * y, w * x]);
        assert!(r.curl().values.iter().all(|v| (v - 2.0 * w).abs() < 1e-10));
    }

    #[test]
    fn quadrature_examples() {
        let c = chart(64, 16, |_| 0.0);
        assert!((c.field_from_fn(|_, _| 1.0).integrate() - PI).abs() < 1e-10);
        assert!((c.boundary_integrate(&BoundaryScalar::constant(64, 1.0)) - 2.0 * PI).abs() < 1e-10);
        let c = chart(64, 16, |t| 0.1 * (2.0 * t).cos());
        assert!((c.field_from_fn(|_, _| 1.0).integrate() - PI * 1.005).abs() < 1e-8);
    }

    #[test]
    fn sobolev_norm_examples() {
        let c = chart(64, 16, |_| 0.0);
        for k in 0..=4 {
            let v = interior_sobolev_norm(&c.field_from_fn(|_, _| 2.0), k).unwrap();
            assert!((v - 2.0 * PI.sqrt()).abs() < 1e-9);
        }
        let v = interior_sobolev_norm(&c.field_from_fn(|x, _| x), 1).unwrap();
        assert!((v - (PI / 4.0 + PI).sqrt()).abs() < 1e-9);
        assert!(matches!(
            interior_sobolev_norm(&c.zeros(), 5),
            Err(DropletError::OrderTooHigh { order: 5, max: 4 })
        ));
    }

    #[test]
    fn sobolev_norm_of_cubic_harmonic() {
        // u = r³ cos 3θ: ‖u‖² = π/8, |∇u|² = 9r⁴ integrates to 3π, and
        // ∂xx = 6x, ∂xy = -6y, ∂yy = -6x give 36·3π/4.
        let c = chart(64, 16, |_| 0.0);
        let u = c.field_from_fn(|x, y| x * x * x - 3.0 * x * y * y);
        let expect = (PI / 8.0 + 3.0 * PI + 27.0 * PI).sqrt();
        let v = interior_sobolev_norm(&u, 2).unwrap();
        assert!((v - expect).abs() < 1e-6, "{v} vs {expect}");
    }

    #[test]
    fn div_grad_matches_laplacian_and_curl_grad_vanishes() {
        let c = chart(64, 20, |t| 0.08 * (3.0 * t).sin() + 0.05 * t.cos());
        let f = c.field_from_fn(|x, y| (1.3 * x - 0.4 * y).sin() * (0.7 * y).exp());
        let g = f.gradient();
        let diff = g.divergence().sub(&f.laplacian()).max_abs();
        assert!(diff < 1e-8, "{diff}");
        assert!(g.curl().max_abs() < 1e-9);
    }

    #[test]
    fn divergence_theorem() {
        let c = chart(64, 20, |t| 0.1 * (2.0 * t).cos() + 0.03 * (5.0 * t).sin());
        let u = c.vector_from_fn(|x, y| [x * x * y + (y).sin(), x.cos() * y]);
        let lhs = u.divergence().integrate();
        let rhs = c.boundary_integrate(&u.normal_trace());
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} {rhs}");
    }

    #[test]
    fn restriction_reproduces_fields() {
        let a = chart(64, 16, |_| 0.2);
        let u = a.vector_from_fn(|x, y| [x, -y]);
        let r = restrict(&u, &BoundaryGraph::circle(64, 1.0).unwrap()).unwrap();
        let expect = r.value.chart().vector_from_fn(|x, y| [x, -y]);
        assert!(r.value.sub(&expect).max_abs() < 1e-10);

        let b = chart(64, 16, |t| 0.1 * (2.0 * t).cos());
        let w = b.vector_from_fn(|x, y| [(x + 0.3 * y).sin(), (x * y).cos()]);
        let same = restrict(&w, b.gamma()).unwrap();
        assert!(same.value.sub(&w).max_abs() < 1e-9);
        assert_eq!(same.extrapolated, 0);

        let too_big = BoundaryGraph::circle(64, 1.5).unwrap();
        assert!(matches!(restrict(&w, &too_big), Err(DropletError::DomainNotContained { .. })));
    }

    #[test]
    fn locate_inverts_the_chart() {
        let c = chart(64, 12, |t| 0.1 * (2.0 * t).cos() + 0.05 * (3.0 * t).sin());
        for idx in [0, 5, 100, 400, c.len() - 1] {
            let p = c.locate(c.x[idx], c.y[idx]).unwrap();
            let (i, l) = (idx / 64, idx % 64);
            assert!((p.rho - c.rho()[i]).abs() < 1e-13);
            assert!((p.theta - c.gamma().theta(l)).abs() < 1e-13);
        }
    }
}
