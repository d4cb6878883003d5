//! Mollifiers with vanishing moments, divergence-free regularization,
//! Littlewood-Paley blocks on the circle and parabolic boundary smoothing.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use once_cell::sync::Lazy;

use crate::boundary::{BoundaryGraph, BoundaryScalar};
use crate::chart::{DiskChart, Field, Sampler, VectorField};
use crate::elliptic::DirichletSolver;
use crate::error::{DropletError, Result};
use crate::spectral::{self, gauss_legendre_unit, lp_bump};

/// Number of vanishing moments of the mollifier.
pub const MOMENT_ORDER: usize = 4;
/// Kernel centre `e(x) = SHIFT_FACTOR · x`, in units of the scale `2^{-j}`.
pub const SHIFT_FACTOR: f64 = 3.0;
/// Kernel support radius around its centre, in units of `2^{-j}`.
pub const SUPPORT_RADIUS: f64 = 2.0;
/// Allowed outward enlargement of the target, in units of `2^{-j}`.
pub const ENLARGEMENT: f64 = 0.5;
/// Smallest admissible dyadic scale.
pub const MIN_SCALE: u32 = 2;

/// Dyadic block `P_j` of circle data: `φ(|m|)` for `j = 0`,
/// `φ(2^{-j}|m|) - φ(2^{1-j}|m|)` otherwise, with `φ` = [`lp_bump`].
pub fn lp_block_values(values: &[f64], j: u32) -> Vec<f64> {
    if j == 0 {
        return spectral::apply_multiplier(values, lp_bump);
    }
    let s = 0.5f64.powi(j as i32);
    spectral::apply_multiplier(values, |m| lp_bump(s * m) - lp_bump(2.0 * s * m))
}

/// Which Littlewood-Paley piece to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpPiece {
    /// `P_j`.
    Block(u32),
    /// `P_{≤j}`; `None` is the identity.
    Low(Option<u32>),
    /// `P_{>j} = I - P_{≤j}`.
    High(u32),
}

pub fn lp_project_circle(f: &BoundaryScalar, piece: LpPiece) -> BoundaryScalar {
    match piece {
        LpPiece::Block(j) => BoundaryScalar::new(lp_block_values(&f.values, j)),
        LpPiece::Low(None) => f.clone(),
        LpPiece::Low(Some(j)) => {
            let s = 0.5f64.powi(j as i32);
            BoundaryScalar::new(spectral::apply_multiplier(&f.values, |m| lp_bump(s * m)))
        }
        LpPiece::High(j) => {
            let low = lp_project_circle(f, LpPiece::Low(Some(j)));
            f.zip_with(&low, |a, b| a - b)
        }
    }
}

/// Heat-smoothed boundary pulled inward so that it never leaves the original domain.
#[derive(Clone, Debug)]
pub struct SmoothedBoundary {
    pub gamma: BoundaryGraph,
    /// The constant `C` of the inward correction `η̃ - Cε²`.
    pub shift_constant: f64,
}

/// `η_ε = e^{ε²∂_θ²}η - Cε²` with `C = max(0, max(η̃ - η))/ε² + c_margin`.
pub fn parabolic_smooth(eta: &BoundaryGraph, eps: f64, c_margin: f64) -> Result<SmoothedBoundary> {
    if !(eps > 0.0) {
        return Err(DropletError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let e2 = eps * eps;
    let heat = spectral::apply_multiplier(eta.eta(), |m| (-e2 * m * m).exp());
    let over = heat.iter().zip(eta.eta()).fold(0.0f64, |m, (h, e)| m.max(h - e));
    let c = over / e2 + c_margin;
    let out: Vec<f64> = heat.iter().map(|h| h - c * e2).collect();
    Ok(SmoothedBoundary { gamma: BoundaryGraph::with_collar(out, eta.collar())?, shift_constant: c })
}

const RADIAL_POINTS: usize = 8;
const ANGULAR_POINTS: usize = 16;

fn monomials() -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for d in 0..=MOMENT_ORDER as i32 {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

/// Mollifier profile `φ(z) = b((z - e)/δ₁)·P_e(z)` with bump
/// `b(u) = (1 - |u|²)³` and `P_e` a polynomial of degree `N` fixed by
/// `∫φ = 1` and `∫z^α φ = 0` for `1 ≤ |α| ≤ N`.
///
/// In the variable `u = (z - e)/δ₁` the moment system has a fixed Gram matrix
/// and right-hand side `((-e)/δ₁)^β`, so the quadrature weights for any centre
/// are one matrix-vector product away.
#[derive(Clone, Debug)]
pub struct MomentKernel {
    nodes: Vec<[f64; 2]>,
    /// `weights(q, β)`: contribution of the `β`-th right-hand side to node `q`.
    weights: DMatrix<f64>,
    exps: Vec<(i32, i32)>,
    pub shift_factor: f64,
    pub support_radius: f64,
}

static KERNEL: Lazy<MomentKernel> = Lazy::new(|| MomentKernel::new(SHIFT_FACTOR, SUPPORT_RADIUS));

impl MomentKernel {
    pub fn new(shift_factor: f64, support_radius: f64) -> Self {
        let (gx, gw) = gauss_legendre_unit(RADIAL_POINTS);
        let mut nodes = Vec::new();
        let mut qw = Vec::new();
        for (r, w) in gx.iter().zip(&gw) {
            for a in 0..ANGULAR_POINTS {
                let t = 2.0 * PI * (a as f64 + 0.5) / ANGULAR_POINTS as f64;
                nodes.push([r * t.cos(), r * t.sin()]);
                let b = (1.0 - r * r).powi(3);
                qw.push(w * r * 2.0 * PI / ANGULAR_POINTS as f64 * b);
            }
        }
        let exps = monomials();
        let nq = nodes.len();
        let nm = exps.len();
        let u = DMatrix::from_fn(nq, nm, |q, g| nodes[q][0].powi(exps[g].0) * nodes[q][1].powi(exps[g].1));
        let gram = DMatrix::from_fn(nm, nm, |b, g| (0..nq).map(|q| qw[q] * u[(q, b)] * u[(q, g)]).sum::<f64>());
        let ginv = gram.try_inverse().expect("moment Gram matrix is positive definite");
        let mut weights = &u * ginv;
        for q in 0..nq {
            for g in 0..nm {
                weights[(q, g)] *= qw[q];
            }
        }
        Self { nodes, weights, exps, shift_factor, support_radius }
    }

    pub fn standard() -> &'static MomentKernel {
        &KERNEL
    }

    pub fn moment_order(&self) -> usize {
        MOMENT_ORDER
    }

    /// Kernel centre `e(x)` in scale-free units.
    pub fn center(&self, x: [f64; 2]) -> [f64; 2] {
        [self.shift_factor * x[0], self.shift_factor * x[1]]
    }

    /// Quadrature nodes `z_q` and weights `c_q` with `Σ c_q g(z_q) ≈ ∫φ_e g`.
    pub fn quadrature(&self, e: [f64; 2]) -> (Vec<[f64; 2]>, Vec<f64>) {
        let d = self.support_radius;
        let r: Vec<f64> = self.exps.iter().map(|&(a, b)| (-e[0] / d).powi(a) * (-e[1] / d).powi(b)).collect();
        let c: Vec<f64> = (0..self.nodes.len())
            .map(|q| (0..r.len()).map(|g| self.weights[(q, g)] * r[g]).sum())
            .collect();
        let z = self.nodes.iter().map(|u| [e[0] + d * u[0], e[1] + d * u[1]]).collect();
        (z, c)
    }

    /// `∫ z^α φ_e(z) dz` by the kernel quadrature.
    pub fn moment(&self, e: [f64; 2], alpha: (i32, i32)) -> f64 {
        let (z, c) = self.quadrature(e);
        z.iter().zip(&c).map(|(z, c)| c * z[0].powi(alpha.0) * z[1].powi(alpha.1)).sum()
    }
}

fn check_enlargement(source: &BoundaryGraph, target: &BoundaryGraph, h: f64) -> Result<()> {
    source.check_same_grid(target)?;
    let allowed = ENLARGEMENT * h;
    let excess = (0..source.n_theta()).fold(0.0f64, |m, k| m.max(target.radius(k) / source.radius(k) - 1.0));
    if excess > allowed {
        return Err(DropletError::EnlargementTooLarge { excess, allowed });
    }
    Ok(())
}

fn mollify_fields(fields: &[&Field], j: u32, target: &Arc<DiskChart>) -> Result<Vec<Field>> {
    if j < MIN_SCALE {
        return Err(DropletError::InvalidArgument(format!("mollifier scale j must be at least {MIN_SCALE}, got {j}")));
    }
    let h = 0.5f64.powi(j as i32);
    check_enlargement(fields[0].chart().gamma(), target.gamma(), h)?;
    let kernel = MomentKernel::standard();
    let sampler = Sampler::new(fields);
    let nf = fields.len();
    let mut out = vec![vec![0.0; target.len()]; nf];
    let mut buf = vec![0.0; nf];
    for idx in 0..target.len() {
        let x = target.node(idx);
        let (z, c) = kernel.quadrature(kernel.center(x));
        let mut acc = vec![0.0; nf];
        for (zq, cq) in z.iter().zip(&c) {
            sampler.eval_xy(x[0] - h * zq[0], x[1] - h * zq[1], &mut buf)?;
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += cq * b;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            o[idx] = a;
        }
    }
    Ok(out.into_iter().map(|v| target.field(v)).collect())
}

/// `Φ_{≤j}u` sampled on the target chart.
pub fn mollify(u: &Field, j: u32, target: &Arc<DiskChart>) -> Result<Field> {
    Ok(mollify_fields(&[u], j, target)?.remove(0))
}

pub fn mollify_vector(u: &VectorField, j: u32, target: &Arc<DiskChart>) -> Result<VectorField> {
    let mut f = mollify_fields(&[&u.x, &u.y], j, target)?;
    let y = f.pop().unwrap();
    let x = f.pop().unwrap();
    Ok(VectorField::new(x, y))
}

/// `Ψ_{≤j}v = Φ_{≤j}v - ∇Δ⁻¹(∇·Φ_{≤j}v)` on the target domain.
pub fn div_free_regularize(v: &VectorField, j: u32, target: &DirichletSolver) -> Result<VectorField> {
    let m = mollify_vector(v, j, target.chart())?;
    let phi = target.solve_div_grad(&m.divergence())?;
    Ok(m.sub(&phi.gradient()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig(n: usize, f: impl Fn(f64) -> f64) -> BoundaryScalar {
        BoundaryScalar::new((0..n).map(|k| f(2.0 * PI * k as f64 / n as f64)).collect())
    }

    #[test]
    fn kernel_moments() {
        let k = MomentKernel::standard();
        for e in [[0.0, 0.0], [3.0, 0.0], [-1.2, 2.5]] {
            assert!((k.moment(e, (0, 0)) - 1.0).abs() < 1e-10);
            for d in 1..=MOMENT_ORDER as i32 {
                for b in 0..=d {
                    assert!(k.moment(e, (d - b, b)).abs() < 1e-8, "{e:?} {d} {b}");
                }
            }
        }
    }

    #[test]
    fn kernel_support_stays_inside_the_unit_disk() {
        let k = MomentKernel::standard();
        for j in MIN_SCALE..8 {
            let h = 0.5f64.powi(j as i32);
            for t in 0..32 {
                let th = 2.0 * PI * t as f64 / 32.0;
                let x = [th.cos(), th.sin()];
                let (z, _) = k.quadrature(k.center(x));
                for zq in z {
                    assert!((x[0] - h * zq[0]).hypot(x[1] - h * zq[1]) < 1.0);
                }
            }
        }
    }

    #[test]
    fn littlewood_paley_blocks() {
        let f = trig(64, |t| (4.0 * t).cos());
        let b = lp_project_circle(&f, LpPiece::Block(2));
        assert!(b.zip_with(&f, |a, c| a - c).max_abs() < 1e-12);
        let f = trig(64, |t| (5.0 * t).cos());
        let b = lp_project_circle(&f, LpPiece::Block(2)).zip_with(&lp_project_circle(&f, LpPiece::Block(3)), |a, c| a + c);
        assert!(b.zip_with(&f, |a, c| a - c).max_abs() < 1e-12);
        assert!(lp_project_circle(&f, LpPiece::Block(1)).max_abs() < 1e-12);
        assert!(lp_project_circle(&f, LpPiece::Block(5)).max_abs() < 1e-12);
        assert_eq!(lp_project_circle(&f, LpPiece::Low(None)), f);
        let g = trig(64, |t| (t.sin() * 3.0).exp() - (7.0 * t).cos());
        let mut sum = vec![0.0; 64];
        for j in 0..=6 {
            for (s, v) in sum.iter_mut().zip(lp_block_values(&g.values, j)) {
                *s += v;
            }
        }
        assert!(sum.iter().zip(&g.values).all(|(a, b)| (a - b).abs() < 1e-12));
        let hi = lp_project_circle(&g, LpPiece::High(2));
        let lo = lp_project_circle(&g, LpPiece::Low(Some(2)));
        assert!(hi.zip_with(&lo, |a, b| a + b).zip_with(&g, |a, b| a - b).max_abs() < 1e-13);
    }

    #[test]
    fn parabolic_smoothing() {
        let g = BoundaryGraph::from_fn(64, |t| 0.1 * (4.0 * t).cos()).unwrap();
        let eps = 0.01;
        let s = parabolic_smooth(&g, eps, 0.01).unwrap();
        let heat = (-16.0 * eps * eps).exp();
        let c = s.shift_constant;
        for k in 0..64 {
            let expect = heat * g.eta()[k] - c * eps * eps;
            assert!((s.gamma.eta()[k] - expect).abs() < 1e-14);
            assert!(s.gamma.eta()[k] <= g.eta()[k]);
        }
        let flat = BoundaryGraph::circle(64, 1.2).unwrap();
        let s = parabolic_smooth(&flat, 0.1, 1.0).unwrap();
        assert!(s.gamma.eta().iter().all(|e| (e - (0.2 - 0.01)).abs() < 1e-14));
        assert!(parabolic_smooth(&flat, 0.0, 1.0).is_err());
    }

    #[test]
    fn mollify_reproduces_low_degree_polynomials() {
        let solver = DirichletSolver::for_boundary(BoundaryGraph::from_fn(64, |t| 0.05 * (3.0 * t).cos()).unwrap(), 16).unwrap();
        let chart = solver.chart();
        let p = chart.field_from_fn(|x, y| 1.0 + x - 2.0 * y * y + x * x * y - 0.5 * x.powi(4) + x * y.powi(3));
        for j in [2, 4] {
            let m = mollify(&p, j, chart).unwrap();
            assert!(m.sub(&p).max_abs() < 1e-8, "j={j}: {}", m.sub(&p).max_abs());
        }
        assert!(matches!(mollify(&p, 1, chart), Err(DropletError::InvalidArgument(_))));
    }

    #[test]
    fn div_free_regularization_preserves_constants_and_strain() {
        let solver = DirichletSolver::for_boundary(BoundaryGraph::from_fn(64, |t| 0.05 * (2.0 * t).cos()).unwrap(), 16).unwrap();
        let chart = solver.chart();
        for v in [chart.vector_from_fn(|_, _| [1.0, 0.0]), chart.vector_from_fn(|x, y| [0.3 * x, -0.3 * y])] {
            let w = div_free_regularize(&v, 3, &solver).unwrap();
            assert!(w.sub(&v).max_abs() < 1e-8, "{}", w.sub(&v).max_abs());
            let b = chart.boundary_offset();
            assert!(w.divergence().values[..b].iter().all(|d| d.abs() < 1e-8));
        }
    }

    #[test]
    fn enlargement_is_bounded() {
        let src = DiskChart::new(BoundaryGraph::circle(64, 1.0).unwrap(), 12).unwrap();
        let big = DiskChart::new(BoundaryGraph::circle(64, 1.2).unwrap(), 12).unwrap();
        let u = src.field_from_fn(|x, _| x);
        assert!(matches!(mollify(&u, 3, &big), Err(DropletError::EnlargementTooLarge { .. })));
        let slightly = DiskChart::new(BoundaryGraph::circle(64, 1.02).unwrap(), 12).unwrap();
        let m = mollify(&u, 3, &slightly).unwrap();
        assert!(m.sub(&slightly.field_from_fn(|x, _| x)).max_abs() < 1e-8);
    }
}
