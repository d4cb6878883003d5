//! Free boundaries as radial graphs over the unit circle.
//!
//! A boundary is stored as offsets `η_k` at the equispaced angles
//! `θ_k = 2πk/n`; the curve is `θ ↦ (1 + η(θ))(cos θ, sin θ)` with `η`
//! trigonometrically interpolated.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DropletError, Result};
use crate::regularization::lp_block_values;
use crate::spectral::{self, TrigInterpolant};

pub const DEFAULT_R_MIN: f64 = 0.3;
pub const DEFAULT_COLLAR_EPS: f64 = 0.25;
pub const DEFAULT_COLLAR_DELTA: f64 = 0.45;
pub const MIN_NODES: usize = 32;

/// Collar neighbourhood of the unit circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Collar {
    /// Hölder exponent of the collar norm.
    pub eps: f64,
    /// Collar radius: admissible graphs have `‖η‖_{C^{1,eps}} < delta`.
    pub delta: f64,
    /// Minimal polar radius `1 + η`.
    pub r_min: f64,
}

impl Default for Collar {
    fn default() -> Self {
        Self { eps: DEFAULT_COLLAR_EPS, delta: DEFAULT_COLLAR_DELTA, r_min: DEFAULT_R_MIN }
    }
}

/// Equispaced angular grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReferenceCircle {
    n_theta: usize,
}

impl ReferenceCircle {
    pub fn new(n_theta: usize) -> Result<Self> {
        if n_theta % 2 != 0 || n_theta < MIN_NODES {
            return Err(DropletError::InvalidGrid(format!(
                "n_theta must be even and at least {MIN_NODES}, got {n_theta}"
            )));
        }
        Ok(Self { n_theta })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn theta(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_theta as f64
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.n_theta).map(|k| self.theta(k)).collect()
    }
}

/// Values at the boundary nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryScalar {
    pub values: Vec<f64>,
}

impl BoundaryScalar {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self { values: vec![c; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
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

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }
}

/// Region of the intersection boundary a node belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionTag {
    /// On the first boundary, strictly inside the second domain.
    A,
    /// On the second boundary, strictly inside the first domain.
    AH,
    Common,
}

/// Supported boundary norms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    /// `(a_0² + Σ_m (1+m²)^s (a_m² + b_m²))^{1/2}` for `f = a_0 + Σ a_m cos mθ + b_m sin mθ`.
    Sobolev(f64),
    /// `sup|f|` plus the largest pairwise quotient `|f(x)-f(y)| / d(x,y)^α`, arclength `d`.
    Holder(f64),
    /// Largest pairwise quotient `|f(x)-f(y)| / d(x,y)`.
    Lipschitz,
    /// `‖P_0 f‖_∞ + sup_{j≥1} 2^{jα} ‖P_j f‖_∞` with the circle dyadic blocks.
    BesovHolder(f64),
}

/// A star-shaped boundary curve.
#[derive(Clone, Debug)]
pub struct BoundaryGraph {
    circle: ReferenceCircle,
    eta: Vec<f64>,
    eta_hat: Vec<Complex64>,
    eta_d1: Vec<f64>,
    eta_d2: Vec<f64>,
    collar: Collar,
}

#[derive(Serialize, Deserialize)]
struct BoundaryJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
    n_theta: usize,
    eta: Vec<f64>,
}

pub const BOUNDARY_SCHEMA: &str = "droplet.boundary/1";

impl BoundaryGraph {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        Self::with_collar(eta, Collar::default())
    }

    pub fn with_collar(eta: Vec<f64>, collar: Collar) -> Result<Self> {
        let circle = ReferenceCircle::new(eta.len())?;
        if let Some((node, &e)) = eta.iter().enumerate().find(|(_, &e)| !(1.0 + e >= collar.r_min)) {
            return Err(DropletError::StarShapeViolation { node, radius: 1.0 + e, r_min: collar.r_min });
        }
        let eta_hat = spectral::forward(&eta);
        let eta_d1 = spectral::periodic_derivative(&eta, 1);
        let eta_d2 = spectral::periodic_derivative(&eta, 2);
        Ok(Self { circle, eta, eta_hat, eta_d1, eta_d2, collar })
    }

    pub fn from_fn(n_theta: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let c = ReferenceCircle::new(n_theta)?;
        Self::new(c.angles().into_iter().map(f).collect())
    }

    /// Circle of the given radius centred at the origin.
    pub fn circle(n_theta: usize, radius: f64) -> Result<Self> {
        Self::new(vec![radius - 1.0; n_theta])
    }

    pub fn n_theta(&self) -> usize {
        self.circle.n_theta()
    }

    pub fn reference(&self) -> ReferenceCircle {
        self.circle
    }

    pub fn theta(&self, k: usize) -> f64 {
        self.circle.theta(k)
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn eta_hat(&self) -> &[Complex64] {
        &self.eta_hat
    }

    pub fn eta_d1(&self) -> &[f64] {
        &self.eta_d1
    }

    pub fn eta_d2(&self) -> &[f64] {
        &self.eta_d2
    }

    pub fn collar(&self) -> Collar {
        self.collar
    }

    /// Same curve with a different collar.
    pub fn with_collar_params(&self, collar: Collar) -> Result<Self> {
        Self::with_collar(self.eta.clone(), collar)
    }

    pub fn radius(&self, k: usize) -> f64 {
        1.0 + self.eta[k]
    }

    pub fn point(&self, k: usize) -> [f64; 2] {
        let (s, c) = self.theta(k).sin_cos();
        let r = self.radius(k);
        [r * c, r * s]
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        (0..self.n_theta()).map(|k| self.point(k)).collect()
    }

    /// Derivative of the point map with respect to θ.
    pub fn tangent(&self, k: usize) -> [f64; 2] {
        let (s, c) = self.theta(k).sin_cos();
        let (r, dr) = (self.radius(k), self.eta_d1[k]);
        [dr * c - r * s, dr * s + r * c]
    }

    /// Arclength element `|d/dθ point map|` at each node.
    pub fn arclength_element(&self) -> Vec<f64> {
        (0..self.n_theta()).map(|k| self.radius(k).hypot(self.eta_d1[k])).collect()
    }

    /// Trapezoid weights for `∫_Γ f dS`.
    pub fn arclength_weights(&self) -> Vec<f64> {
        let h = 2.0 * PI / self.n_theta() as f64;
        self.arclength_element().into_iter().map(|e| e * h).collect()
    }

    pub fn length(&self) -> f64 {
        self.arclength_weights().iter().sum()
    }

    /// Enclosed area `½∫(1+η)² dθ`.
    pub fn area(&self) -> f64 {
        let h = 2.0 * PI / self.n_theta() as f64;
        0.5 * h * self.eta.iter().map(|e| (1.0 + e) * (1.0 + e)).sum::<f64>()
    }

    pub fn outward_normal(&self) -> Vec<[f64; 2]> {
        (0..self.n_theta())
            .map(|k| {
                let (s, c) = self.theta(k).sin_cos();
                let (r, dr) = (self.radius(k), self.eta_d1[k]);
                let norm = r.hypot(dr);
                // (R e_r - R' e_θ) / |·|
                [(r * c + dr * s) / norm, (r * s - dr * c) / norm]
            })
            .collect()
    }

    /// Signed curvature, positive for the boundary of a disk.
    pub fn mean_curvature(&self) -> BoundaryScalar {
        BoundaryScalar::new(
            (0..self.n_theta())
                .map(|k| {
                    let (r, d1, d2) = (self.radius(k), self.eta_d1[k], self.eta_d2[k]);
                    (r * r + 2.0 * d1 * d1 - r * d2) / (r * r + d1 * d1).powf(1.5)
                })
                .collect(),
        )
    }

    pub fn interpolant(&self) -> TrigInterpolant {
        TrigInterpolant::new(&self.eta)
    }

    /// `‖η‖_∞ + besov_holder(collar.eps)(η')`.
    pub fn collar_norm(&self) -> f64 {
        let sup = self.eta.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        sup + besov_holder(&self.eta_d1, self.collar.eps)
    }

    pub fn in_collar(&self) -> bool {
        self.collar_norm() < self.collar.delta
    }

    /// Conservative thickness: the largest radius `R` on a geometric candidate
    /// grid such that every ball `B(x, R)` centred on the curve meets it in a
    /// single arc whose tangent turns by less than π/4 from the tangent at `x`.
    pub fn thickness(&self) -> f64 {
        let n_up = (4 * self.n_theta()).max(512);
        let eta = self.interpolant();
        let mut pts = Vec::with_capacity(n_up);
        let mut tang = Vec::with_capacity(n_up);
        for i in 0..n_up {
            let t = 2.0 * PI * i as f64 / n_up as f64;
            let (s, c) = t.sin_cos();
            let r = 1.0 + eta.eval(t);
            let dr = eta.eval_derivative(t, 1);
            pts.push([r * c, r * s]);
            tang.push((dr * s + r * c).atan2(dr * c - r * s));
        }
        let r_max = 2.0 * pts.iter().fold(0.0f64, |m, p| m.max(p[0].hypot(p[1])));
        let ratio: f64 = 1.02;
        let candidates: Vec<f64> =
            (0..).map(|i| r_max * ratio.powi(-i)).take_while(|&r| r > 1e-6).collect();
        let passes = |radius: f64| (0..n_up).all(|i| ball_is_graph(&pts, &tang, i, radius));
        // Candidates are decreasing and the property is monotone in R.
        let (mut lo, mut hi) = (0usize, candidates.len() - 1);
        if passes(candidates[0]) {
            return candidates[0];
        }
        if !passes(candidates[hi]) {
            return 0.0;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if passes(candidates[mid]) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        candidates[hi]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&BoundaryJson {
            schema: Some(BOUNDARY_SCHEMA.to_string()),
            n_theta: self.n_theta(),
            eta: self.eta.clone(),
        })
        .expect("boundary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: BoundaryJson = serde_json::from_str(s)?;
        if b.eta.len() != b.n_theta {
            return Err(DropletError::GridMismatch { left: b.n_theta, right: b.eta.len() });
        }
        Self::new(b.eta)
    }

    pub fn check_same_grid(&self, other: &BoundaryGraph) -> Result<()> {
        if self.n_theta() != other.n_theta() {
            return Err(DropletError::GridMismatch { left: self.n_theta(), right: other.n_theta() });
        }
        Ok(())
    }
}

fn ball_is_graph(pts: &[[f64; 2]], tang: &[f64], i: usize, radius: f64) -> bool {
    let n = pts.len();
    let dist = |j: usize| (pts[j][0] - pts[i][0]).hypot(pts[j][1] - pts[i][1]);
    let turn = |j: usize| {
        let d = (tang[j] - tang[i]).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    };
    let mut fwd = 0;
    while fwd < n && dist((i + fwd + 1) % n) < radius {
        if turn((i + fwd + 1) % n) >= PI / 4.0 {
            return false;
        }
        fwd += 1;
    }
    let mut back = 0;
    while back + fwd < n && dist((i + n - back - 1) % n) < radius {
        if turn((i + n - back - 1) % n) >= PI / 4.0 {
            return false;
        }
        back += 1;
    }
    if fwd + back + 1 >= n {
        return false;
    }
    // Nothing outside the arc may come back into the ball.
    (fwd + 1..n - back).all(|o| dist((i + o) % n) >= radius)
}

/// Pointwise minimum of two graphs with the per-node region decomposition.
pub fn intersection_graph(a: &BoundaryGraph, b: &BoundaryGraph) -> Result<(BoundaryGraph, Vec<RegionTag>)> {
    a.check_same_grid(b)?;
    let sup = |g: &BoundaryGraph| g.eta().iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let tie = 1e-12 * 1f64.max(sup(a)).max(sup(b));
    let mut eta = Vec::with_capacity(a.n_theta());
    let mut tags = Vec::with_capacity(a.n_theta());
    for (&ea, &eb) in a.eta().iter().zip(b.eta()) {
        eta.push(ea.min(eb));
        tags.push(if ea < eb - tie {
            RegionTag::A
        } else if eb < ea - tie {
            RegionTag::AH
        } else {
            RegionTag::Common
        });
    }
    let collar = a.collar();
    Ok((BoundaryGraph::with_collar(eta, collar)?, tags))
}

/// Cumulative arclength at the nodes, starting from 0 at θ = 0.
fn cumulative_arclength(gamma: &BoundaryGraph) -> (Vec<f64>, f64) {
    let n = gamma.n_theta();
    let c = spectral::forward(&gamma.arclength_element());
    let total = 2.0 * PI * c[0].re;
    let s = (0..n)
        .map(|k| {
            let t = gamma.theta(k);
            let mut acc = c[0].re * t;
            for (j, cj) in c.iter().enumerate().skip(1) {
                let m = spectral::signed_mode(j, n);
                if 2 * m.unsigned_abs() as usize == n {
                    continue;
                }
                let e = Complex64::from_polar(1.0, m as f64 * t) - 1.0;
                acc += (cj * e / Complex64::new(0.0, m as f64)).re;
            }
            acc
        })
        .collect();
    (s, total)
}

fn pairwise_quotient(f: &[f64], gamma: &BoundaryGraph, alpha: f64) -> f64 {
    let (s, total) = cumulative_arclength(gamma);
    let n = f.len();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let d = (s[j] - s[i]).abs();
            let d = d.min(total - d);
            if d > 0.0 {
                best = best.max((f[i] - f[j]).abs() / d.powf(alpha));
            }
        }
    }
    best
}

/// `‖P_0 f‖_∞ + sup_{j≥1} 2^{jα}‖P_j f‖_∞`.
pub fn besov_holder(values: &[f64], alpha: f64) -> f64 {
    let n = values.len();
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut best = 0.0f64;
    let mut j = 1;
    while (1usize << (j - 1)) < n / 2 + 1 {
        best = best.max(2f64.powf(j as f64 * alpha) * sup(&lp_block_values(values, j)));
        j += 1;
    }
    sup(&lp_block_values(values, 0)) + best
}

pub fn boundary_norm(f: &BoundaryScalar, gamma: &BoundaryGraph, kind: NormKind) -> f64 {
    let v = &f.values;
    let n = v.len();
    match kind {
        NormKind::Sobolev(s) => {
            let c = spectral::forward(v);
            let mut acc = c[0].norm_sqr();
            for (k, ck) in c.iter().enumerate().skip(1) {
                let m = spectral::signed_mode(k, n) as f64;
                let w = if 2 * k == n { 1.0 } else { 2.0 };
                acc += w * (1.0 + m * m).powf(s) * ck.norm_sqr();
            }
            acc.sqrt()
        }
        NormKind::Holder(alpha) => v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + pairwise_quotient(v, gamma, alpha),
        NormKind::Lipschitz => pairwise_quotient(v, gamma, 1.0),
        NormKind::BesovHolder(alpha) => besov_holder(v, alpha),
    }
}
