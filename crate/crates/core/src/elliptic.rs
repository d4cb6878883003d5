//! Dirichlet solver, harmonic extension and the Dirichlet-to-Neumann operator.

use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};
use num_complex::Complex64;
use once_cell::sync::OnceCell;

use crate::boundary::{BoundaryGraph, BoundaryScalar};
use crate::chart::{DiskChart, Field};
use crate::error::{DropletError, Result};
use crate::krylov::gmres;
use crate::spectral;

/// Interior unknown count up to which the full matrix is factorized.
pub const DENSE_LIMIT: usize = 3000;
/// Relative residual accepted from [`DirichletSolver::solve`].
pub const SOLVER_TOL: f64 = 1e-8;
/// Highest admissible power of the Dirichlet-to-Neumann operator.
pub const M_MAX: usize = 4;
/// Interior divergence accepted for velocities.
pub const DIV_TOL: f64 = 1e-8;
const GMRES_TOL: f64 = 1e-13;
/// Residual of the Laplacian predictor below which the composed-operator
/// correction is skipped.
const DIV_CORRECTION_FLOOR: f64 = 1e-3 * DIV_TOL;

/// Per-Fourier-mode solver for the disk of radius `R₀`, exact when the
/// domain is a disk and a preconditioner otherwise.
struct ModalSolver {
    n_theta: usize,
    n_int: usize,
    blocks: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl ModalSolver {
    fn new(chart: &DiskChart) -> Result<Self> {
        let (nr, n) = (chart.n_rho(), chart.n_theta());
        let ni = nr - 1;
        let rad = chart.radial();
        let (_, t2) = chart.theta_matrices();
        let r0sq = chart.mean_radius().powi(2);
        let mut blocks = Vec::with_capacity(n / 2 + 1);
        for m in 0..=n / 2 {
            let s = if m % 2 == 0 { 1.0 } else { -1.0 };
            let lam: f64 = (0..n).map(|l| t2[(0, l)] * (2.0 * std::f64::consts::PI * (m * l) as f64 / n as f64).cos()).sum();
            let mut a = DMatrix::zeros(ni, ni);
            for i in 0..ni {
                let r = rad.rho[i];
                for k in 0..ni {
                    let d2 = rad.d2_same[(i, k)] + s * rad.d2_mirror[(i, k)];
                    let d1 = rad.d1_same[(i, k)] + s * rad.d1_mirror[(i, k)];
                    a[(i, k)] = (d2 + d1 / r) / r0sq;
                }
                a[(i, i)] += lam / (r * r * r0sq);
            }
            let lu = a.lu();
            if !lu.is_invertible() {
                return Err(DropletError::SolverSingular(format!("radial block for mode {m} is singular")));
            }
            blocks.push(lu);
        }
        Ok(Self { n_theta: n, n_int: ni, blocks })
    }

    /// Solves the disk operator for interior right-hand sides (row-major interior rows).
    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let (n, ni) = (self.n_theta, self.n_int);
        let spec: Vec<Vec<Complex64>> = (0..ni).map(|i| spectral::forward(&r[i * n..(i + 1) * n])).collect();
        let mut out_spec = vec![vec![Complex64::new(0.0, 0.0); n]; ni];
        for m in 0..=n / 2 {
            let re = DVector::from_fn(ni, |i, _| spec[i][m].re);
            let im = DVector::from_fn(ni, |i, _| spec[i][m].im);
            let xr = self.blocks[m].solve(&re).expect("factorized block");
            let xi = self.blocks[m].solve(&im).expect("factorized block");
            for i in 0..ni {
                let c = Complex64::new(xr[i], xi[i]);
                out_spec[i][m] = c;
                if m != 0 && 2 * m != n {
                    out_spec[i][n - m] = c.conj();
                }
            }
        }
        let mut out = vec![0.0; ni * n];
        for i in 0..ni {
            out[i * n..(i + 1) * n].copy_from_slice(&spectral::inverse(&out_spec[i]));
        }
        out
    }
}

enum Backend {
    /// The chart is a disk and the modal solve is exact.
    Modal,
    Dense(PartialPivLu<f64>),
    Iterative,
}

/// Dirichlet problem `Δu = f` in Ω, `u = g` on Γ, discretized on a chart.
pub struct DirichletSolver {
    chart: Arc<DiskChart>,
    modal: ModalSolver,
    backend: Backend,
    op_scale: f64,
    div_grad: OnceCell<Option<PartialPivLu<f64>>>,
}

impl std::fmt::Debug for DirichletSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = match self.backend {
            Backend::Modal => "modal",
            Backend::Dense(_) => "dense",
            Backend::Iterative => "iterative",
        };
        f.debug_struct("DirichletSolver").field("n_rho", &self.chart.n_rho()).field("n_theta", &self.chart.n_theta()).field("backend", &b).finish()
    }
}

impl DirichletSolver {
    pub fn new(chart: Arc<DiskChart>) -> Result<Self> {
        let modal = ModalSolver::new(&chart)?;
        let eta = chart.gamma().eta();
        let spread = eta.iter().fold(0.0f64, |m, e| m.max((e - eta[0]).abs()));
        let n_int = (chart.n_rho() - 1) * chart.n_theta();
        let backend = if spread == 0.0 {
            Backend::Modal
        } else if n_int <= DENSE_LIMIT {
            Backend::Dense(assemble_dense(&chart).partial_piv_lu())
        } else {
            Backend::Iterative
        };
        let op_scale = operator_scale(&chart);
        Ok(Self { chart, modal, backend, op_scale, div_grad: OnceCell::new() })
    }

    pub fn for_boundary(gamma: BoundaryGraph, n_rho: usize) -> Result<Self> {
        Self::new(DiskChart::new(gamma, n_rho)?)
    }

    pub fn chart(&self) -> &Arc<DiskChart> {
        &self.chart
    }

    pub fn backend_name(&self) -> &'static str {
        match self.backend {
            Backend::Modal => "modal",
            Backend::Dense(_) => "dense",
            Backend::Iterative => "iterative",
        }
    }

    fn interior_len(&self) -> usize {
        self.chart.boundary_offset()
    }

    fn apply_interior(&self, u_int: &[f64]) -> Vec<f64> {
        let mut full = u_int.to_vec();
        full.resize(self.chart.len(), 0.0);
        let mut l = self.chart.laplacian_values(&full);
        l.truncate(self.interior_len());
        l
    }

    fn solve_interior(&self, r: &[f64]) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Modal => Ok(self.modal.solve(r)),
            Backend::Dense(lu) => {
                let b = Mat::from_fn(r.len(), 1, |i, _| r[i]);
                let x = lu.solve(&b);
                let out: Vec<f64> = (0..r.len()).map(|i| x[(i, 0)]).collect();
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(DropletError::SolverSingular("dense factorization produced non-finite values".into()));
                }
                Ok(out)
            }
            Backend::Iterative => {
                let (x, _) = gmres(|v| self.apply_interior(v), |v| Ok(self.modal.solve(v)), r, GMRES_TOL, 80, 4000)?;
                Ok(x)
            }
        }
    }

    fn solve_interior_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match &self.backend {
            Backend::Dense(lu) => {
                let ni = self.interior_len();
                let b = Mat::from_fn(ni, rhs.len(), |i, j| rhs[j][i]);
                let x = lu.solve(&b);
                Ok((0..rhs.len()).map(|j| (0..ni).map(|i| x[(i, j)]).collect()).collect())
            }
            _ => rhs.iter().map(|r| self.solve_interior(r)).collect(),
        }
    }

    fn residual_check(&self, u: &[f64], rhs: &[f64]) -> Result<()> {
        let lu = self.chart.laplacian_values(u);
        let ni = self.interior_len();
        let res = (0..ni).fold(0.0f64, |m, i| m.max((lu[i] - rhs[i]).abs()));
        let scale = rhs[..ni].iter().fold(0.0f64, |m, v| m.max(v.abs())) + self.op_scale * u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = SOLVER_TOL * scale.max(f64::MIN_POSITIVE);
        if !(res <= tol) {
            return Err(DropletError::ResidualTooLarge { residual: res, tol });
        }
        Ok(())
    }

    /// Nodal values of the solution with interior right-hand side `rhs` and boundary data `g`.
    pub fn solve_values(&self, rhs: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let ni = self.interior_len();
        let mut ub = vec![0.0; self.chart.len()];
        ub[ni..].copy_from_slice(g);
        let lb = self.chart.laplacian_values(&ub);
        let r: Vec<f64> = (0..ni).map(|i| rhs[i] - lb[i]).collect();
        let x = self.solve_interior(&r)?;
        ub[..ni].copy_from_slice(&x);
        self.residual_check(&ub, rhs)?;
        Ok(ub)
    }

    pub fn solve(&self, rhs: &Field, g: &BoundaryScalar) -> Result<Field> {
        Ok(self.chart.field(self.solve_values(&rhs.values, &g.values)?))
    }

    pub fn harmonic_extension(&self, g: &BoundaryScalar) -> Result<Field> {
        self.solve(&self.chart.zeros(), g)
    }

    /// Harmonic extensions of several boundary data at once.
    pub fn harmonic_extension_many(&self, gs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let ni = self.interior_len();
        let mut fulls = Vec::with_capacity(gs.len());
        let mut rhs = Vec::with_capacity(gs.len());
        for g in gs {
            let mut ub = vec![0.0; self.chart.len()];
            ub[ni..].copy_from_slice(g);
            let lb = self.chart.laplacian_values(&ub);
            rhs.push(lb[..ni].iter().map(|v| -v).collect::<Vec<f64>>());
            fulls.push(ub);
        }
        let xs = self.solve_interior_many(&rhs)?;
        for (u, x) in fulls.iter_mut().zip(xs) {
            u[..ni].copy_from_slice(&x);
        }
        Ok(fulls)
    }

    /// Solves `∇·∇φ = rhs` with `φ = 0` on Γ using the composed discrete
    /// divergence and gradient, so that `v - ∇φ` is discretely divergence-free
    /// at interior nodes whenever `rhs = ∇·v`.
    ///
    /// The composed operator aliases products of coefficients and derivatives
    /// and is poorly conditioned, so the smooth part comes from the collocation
    /// Laplacian and only the remaining residual goes through it.
    pub fn solve_div_grad(&self, rhs: &Field) -> Result<Field> {
        let ni = self.interior_len();
        let chart = &self.chart;
        let b = &rhs.values[..ni];
        let phi0 = self.solve_interior(b)?;
        let apply = |v: &[f64]| -> Vec<f64> {
            let mut full = v.to_vec();
            full.resize(chart.len(), 0.0);
            let (gx, gy) = chart.grad_values(&full);
            let (dxx, _) = chart.grad_values(&gx);
            let (_, dyy) = chart.grad_values(&gy);
            (0..ni).map(|i| dxx[i] + dyy[i]).collect()
        };
        let applied = apply(&phi0);
        let r: Vec<f64> = (0..ni).map(|i| b[i] - applied[i]).collect();
        if r.iter().all(|v| v.abs() <= DIV_CORRECTION_FLOOR) {
            let mut full = phi0;
            full.resize(chart.len(), 0.0);
            return Ok(chart.field(full));
        }
        let lu = self
            .div_grad
            .get_or_init(|| (ni <= DENSE_LIMIT).then(|| assemble_div_grad(chart).partial_piv_lu()));
        let dx = match lu {
            Some(lu) => {
                let m = Mat::from_fn(ni, 1, |i, _| r[i]);
                let x = lu.solve(&m);
                (0..ni).map(|i| x[(i, 0)]).collect::<Vec<f64>>()
            }
            None => gmres(apply, |v| self.solve_interior(v), &r, GMRES_TOL, 60, 3000)?.0,
        };
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(DropletError::SolverSingular("divergence correction produced non-finite values".into()));
        }
        let mut full: Vec<f64> = phi0.iter().zip(&dx).map(|(a, b)| a + b).collect();
        full.resize(chart.len(), 0.0);
        Ok(chart.field(full))
    }
}

/// Dense matrices of `∂_x` and `∂_y` on all nodes.
fn cartesian_derivative_matrices(chart: &DiskChart) -> (Mat<f64>, Mat<f64>) {
    let (nr, n) = (chart.n_rho(), chart.n_theta());
    let len = nr * n;
    let half = n / 2;
    let rad = chart.radial();
    let (t1, _) = chart.theta_matrices();
    let mut dx = Mat::<f64>::zeros(len, len);
    let mut dy = Mat::<f64>::zeros(len, len);
    for i in 0..nr {
        for l in 0..n {
            let row = i * n + l;
            let (rx, ry, tx, ty) = (chart.rho_x[row], chart.rho_y[row], chart.th_x[row], chart.th_y[row]);
            for k in 0..nr {
                let (s, m) = (rad.d1_same[(i, k)], rad.d1_mirror[(i, k)]);
                let (c1, c2) = (k * n + l, k * n + (l + half) % n);
                dx[(row, c1)] += rx * s;
                dx[(row, c2)] += rx * m;
                dy[(row, c1)] += ry * s;
                dy[(row, c2)] += ry * m;
            }
            for lp in 0..n {
                let t = t1[(l, lp)];
                dx[(row, i * n + lp)] += tx * t;
                dy[(row, i * n + lp)] += ty * t;
            }
        }
    }
    (dx, dy)
}

/// Interior block of `∂_x∂_x + ∂_y∂_y` composed from first-derivative matrices.
fn assemble_div_grad(chart: &DiskChart) -> Mat<f64> {
    let ni = chart.boundary_offset();
    let (dx, dy) = cartesian_derivative_matrices(chart);
    let rows_x = dx.as_ref().subrows(0, ni);
    let rows_y = dy.as_ref().subrows(0, ni);
    let cols_x = dx.as_ref().subcols(0, ni);
    let cols_y = dy.as_ref().subcols(0, ni);
    rows_x * cols_x + rows_y * cols_y
}

fn operator_scale(chart: &DiskChart) -> f64 {
    let (nr, n) = (chart.n_rho(), chart.n_theta());
    let rad = chart.radial();
    let (t1, t2) = chart.theta_matrices();
    let row1 = |m: &DMatrix<f64>, i: usize| (0..m.ncols()).map(|k| m[(i, k)].abs()).sum::<f64>();
    let t1n = row1(t1, 0);
    let t2n = row1(t2, 0);
    let mut best = 0.0f64;
    for i in 0..nr - 1 {
        let d1 = row1(&rad.d1_same, i) + row1(&rad.d1_mirror, i);
        let d2 = row1(&rad.d2_same, i) + row1(&rad.d2_mirror, i);
        for l in 0..n {
            let idx = i * n + l;
            let s = chart.g_rr[idx].abs() * d2 + 2.0 * chart.g_rt[idx].abs() * d1 * t1n + chart.g_tt[idx] * t2n + chart.lap_rho[idx].abs() * d1;
            best = best.max(s);
        }
    }
    best
}

/// Interior block of the collocation matrix of the chart Laplacian.
fn assemble_dense(chart: &DiskChart) -> Mat<f64> {
    let (nr, n) = (chart.n_rho(), chart.n_theta());
    let ni = (nr - 1) * n;
    let half = n / 2;
    let rad = chart.radial();
    let (t1, t2) = chart.theta_matrices();
    let mut a = Mat::<f64>::zeros(ni, ni);
    for i in 0..nr - 1 {
        for l in 0..n {
            let row = i * n + l;
            let (grr, grt, gtt, lr) = (chart.g_rr[row], chart.g_rt[row], chart.g_tt[row], chart.lap_rho[row]);
            for k in 0..nr - 1 {
                let s = grr * rad.d2_same[(i, k)] + lr * rad.d1_same[(i, k)];
                let m = grr * rad.d2_mirror[(i, k)] + lr * rad.d1_mirror[(i, k)];
                a[(row, k * n + l)] += s;
                a[(row, k * n + (l + half) % n)] += m;
            }
            for lp in 0..n {
                a[(row, i * n + lp)] += gtt * t2[(l, lp)];
                let c = 2.0 * grt * t1[(l, lp)];
                if c == 0.0 {
                    continue;
                }
                for k in 0..nr - 1 {
                    a[(row, k * n + lp)] += c * rad.d1_same[(i, k)];
                    a[(row, k * n + (lp + half) % n)] += c * rad.d1_mirror[(i, k)];
                }
            }
        }
    }
    a
}

pub fn solve_dirichlet(solver: &DirichletSolver, rhs: &Field, g: &BoundaryScalar) -> Result<Field> {
    solver.solve(rhs, g)
}

pub fn harmonic_extension(solver: &DirichletSolver, g: &BoundaryScalar) -> Result<Field> {
    solver.harmonic_extension(g)
}

/// Eigenpairs of the arclength-symmetrized operator.
#[derive(Clone, Debug)]
pub struct DtnEigen {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Columns `W^{1/2} ψ_i`, orthonormal in the Euclidean sense.
    vectors: DMatrix<f64>,
    /// Index of the constant mode.
    zero_mode: usize,
}

/// Dirichlet-to-Neumann operator of a domain.
pub struct DtnOperator {
    chart: Arc<DiskChart>,
    matrix: DMatrix<f64>,
    weights: Vec<f64>,
    eigen: OnceCell<DtnEigen>,
    m_max: usize,
}

impl std::fmt::Debug for DtnOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DtnOperator").field("n_theta", &self.matrix.nrows()).finish()
    }
}

impl DtnOperator {
    /// Assembles the operator column by column from the nodal basis.
    pub fn assemble(solver: &DirichletSolver) -> Result<Self> {
        let chart = Arc::clone(solver.chart());
        let n = chart.n_theta();
        let basis: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                e
            })
            .collect();
        let ext = solver.harmonic_extension_many(&basis)?;
        let mut matrix = DMatrix::zeros(n, n);
        for (k, u) in ext.iter().enumerate() {
            let col = chart.normal_derivative_values(u);
            for l in 0..n {
                matrix[(l, k)] = col[l];
            }
        }
        let weights = chart.arclength_weights().to_vec();
        Ok(Self { chart, matrix, weights, eigen: OnceCell::new(), m_max: M_MAX })
    }

    pub fn gamma(&self) -> &BoundaryGraph {
        self.chart.gamma()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    /// Largest Fourier mode for which `𝒩^m` is trusted.
    pub fn validity_window(&self, m: usize) -> usize {
        self.matrix.nrows() / (4 * m.max(1))
    }

    /// Relative asymmetry of the operator in the arclength inner product.
    pub fn asymmetry(&self) -> f64 {
        let m = self.weighted();
        let d = &m - m.transpose();
        d.norm() / m.norm().max(f64::MIN_POSITIVE)
    }

    fn weighted(&self) -> DMatrix<f64> {
        let n = self.matrix.nrows();
        DMatrix::from_fn(n, n, |i, j| self.weights[i].sqrt() * self.matrix[(i, j)] / self.weights[j].sqrt())
    }

    pub fn apply(&self, g: &BoundaryScalar) -> BoundaryScalar {
        let v = &self.matrix * DVector::from_column_slice(&g.values);
        BoundaryScalar::new(v.iter().cloned().collect())
    }

    pub fn apply_power(&self, g: &BoundaryScalar, m: usize) -> Result<BoundaryScalar> {
        if m > self.m_max {
            return Err(DropletError::PowerTooHigh { m, max: self.m_max });
        }
        let mut out = g.clone();
        for _ in 0..m {
            out = self.apply(&out);
        }
        Ok(out)
    }

    /// Eigendecomposition of `W^{1/2} 𝒩 W^{-1/2}`, symmetrized, with the
    /// constant mode deflated so it is an exact eigenvector for 0.
    pub fn eigen(&self) -> Result<&DtnEigen> {
        self.eigen.get_or_try_init(|| {
            let n = self.matrix.nrows();
            let m = self.weighted();
            let mut s = (&m + m.transpose()) * 0.5;
            let mut u0 = DVector::from_iterator(n, self.weights.iter().map(|w| w.sqrt()));
            u0 /= u0.norm();
            let p = DMatrix::identity(n, n) - &u0 * u0.transpose();
            s = &p * s * &p;
            s = (&s + s.transpose()) * 0.5;
            let eig = SymmetricEigen::try_new(s, 1e-15, 10_000)
                .ok_or_else(|| DropletError::EigenFailure("symmetric eigen iteration did not converge".into()))?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
            let zero_mode = (0..n)
                .max_by(|&a, &b| vectors.column(a).dot(&u0).abs().total_cmp(&vectors.column(b).dot(&u0).abs()))
                .unwrap_or(0);
            if values.iter().any(|v| !v.is_finite()) {
                return Err(DropletError::EigenFailure("non-finite eigenvalue".into()));
            }
            Ok(DtnEigen { values, vectors, zero_mode })
        })
    }

    /// Coefficients `⟨ψ_i, g⟩_W`.
    fn coefficients(&self, e: &DtnEigen, g: &BoundaryScalar) -> DVector<f64> {
        let wg = DVector::from_iterator(g.len(), g.values.iter().zip(&self.weights).map(|(v, w)| v * w.sqrt()));
        e.vectors.transpose() * wg
    }

    fn synthesize(&self, e: &DtnEigen, c: &DVector<f64>) -> BoundaryScalar {
        let v = &e.vectors * c;
        BoundaryScalar::new(v.iter().zip(&self.weights).map(|(v, w)| v / w.sqrt()).collect())
    }

    /// Projection onto eigenmodes with `λ ≤ lambda_cut`.
    pub fn spectral_projection(&self, g: &BoundaryScalar, lambda_cut: f64) -> Result<BoundaryScalar> {
        let e = self.eigen()?;
        if e.values.iter().all(|&l| l <= lambda_cut) {
            return Ok(g.clone());
        }
        let mut c = self.coefficients(e, g);
        for (i, &l) in e.values.iter().enumerate() {
            if l > lambda_cut {
                c[i] = 0.0;
            }
        }
        Ok(self.synthesize(e, &c))
    }

    /// Complementary projection onto eigenmodes with `λ > lambda_cut`.
    pub fn spectral_projection_high(&self, g: &BoundaryScalar, lambda_cut: f64) -> Result<BoundaryScalar> {
        let e = self.eigen()?;
        if e.values.iter().all(|&l| l <= lambda_cut) {
            return Ok(BoundaryScalar::constant(g.len(), 0.0));
        }
        let mut c = self.coefficients(e, g);
        for (i, &l) in e.values.iter().enumerate() {
            if l <= lambda_cut {
                c[i] = 0.0;
            }
        }
        Ok(self.synthesize(e, &c))
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(*self.eigen()?.values.last().unwrap_or(&0.0))
    }

    /// Mean-zero solution of `𝒩h = g`.
    pub fn inverse_on_mean_zero(&self, g: &BoundaryScalar) -> Result<BoundaryScalar> {
        let total: f64 = self.weights.iter().sum();
        let mean = g.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>() / total;
        let tol = 1e-10 * g.max_abs();
        if mean.abs() > tol {
            return Err(DropletError::NonzeroMean { mean, tol });
        }
        if g.max_abs() == 0.0 {
            return Ok(g.clone());
        }
        let e = self.eigen()?;
        let mut c = self.coefficients(e, g);
        for (i, &l) in e.values.iter().enumerate() {
            c[i] = if i == e.zero_mode { 0.0 } else { c[i] / l };
        }
        Ok(self.synthesize(e, &c))
    }

    /// Writes the matrix as CSV, one row per line.
    pub fn matrix_csv(&self) -> String {
        let mut s = String::from("# schema=droplet.dtn_matrix/1\n");
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = (0..self.matrix.ncols()).map(|j| format!("{:.17e}", self.matrix[(i, j)])).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Writes the ascending spectrum as CSV.
    pub fn spectrum_csv(&self) -> Result<String> {
        let e = self.eigen()?;
        let mut s = String::from("# schema=droplet.dtn_spectrum/1\nindex,lambda\n");
        for (i, l) in e.values.iter().enumerate() {
            s.push_str(&format!("{i},{l:.17e}\n"));
        }
        Ok(s)
    }
}

pub fn assemble_dtn(solver: &DirichletSolver) -> Result<DtnOperator> {
    DtnOperator::assemble(solver)
}

pub fn apply_dtn(op: &DtnOperator, g: &BoundaryScalar) -> BoundaryScalar {
    op.apply(g)
}

pub fn apply_dtn_power(op: &DtnOperator, g: &BoundaryScalar, m: usize) -> Result<BoundaryScalar> {
    op.apply_power(g, m)
}

pub fn dtn_spectral_projection(op: &DtnOperator, g: &BoundaryScalar, lambda_cut: f64) -> Result<BoundaryScalar> {
    op.spectral_projection(g, lambda_cut)
}

pub fn dtn_inverse_on_mean_zero(op: &DtnOperator, g: &BoundaryScalar) -> Result<BoundaryScalar> {
    op.inverse_on_mean_zero(g)
}

/// Terms of the product rule `𝒩(fg) = f𝒩g + g𝒩f - 2∇_nΔ⁻¹(∇ℋf·∇ℋg)`.
#[derive(Clone, Debug)]
pub struct LeibnizReport {
    pub residual: f64,
    pub lhs_max: f64,
}

pub fn check_dtn_leibniz(solver: &DirichletSolver, op: &DtnOperator, f: &BoundaryScalar, g: &BoundaryScalar) -> Result<LeibnizReport> {
    let fg = f.zip_with(g, |a, b| a * b);
    let lhs = op.apply(&fg);
    let nf = op.apply(f);
    let ng = op.apply(g);
    let hf = solver.harmonic_extension(f)?.gradient();
    let hg = solver.harmonic_extension(g)?.gradient();
    let rhs = hf.dot(&hg).scale(2.0);
    let u = solver.solve(&rhs, &BoundaryScalar::constant(f.len(), 0.0))?;
    let un = u.normal_derivative();
    let mut residual = 0.0f64;
    for l in 0..f.len() {
        let r = lhs.values[l] - f.values[l] * ng.values[l] - g.values[l] * nf.values[l] + un.values[l];
        residual = residual.max(r.abs());
    }
    Ok(LeibnizReport { residual, lhs_max: lhs.max_abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn solver(n: usize, nr: usize, f: impl Fn(f64) -> f64) -> DirichletSolver {
        DirichletSolver::for_boundary(BoundaryGraph::from_fn(n, f).unwrap(), nr).unwrap()
    }

    fn trig(n: usize, f: impl Fn(f64) -> f64) -> BoundaryScalar {
        BoundaryScalar::new((0..n).map(|k| f(2.0 * PI * k as f64 / n as f64)).collect())
    }

    #[test]
    fn constant_data_gives_constant_solution() {
        for s in [solver(64, 16, |_| 0.0), solver(64, 16, |t| 0.1 * (2.0 * t).cos())] {
            let u = s.harmonic_extension(&BoundaryScalar::constant(64, 1.5)).unwrap();
            assert!(u.values.iter().all(|v| (v - 1.5).abs() < 1e-11), "{}", s.backend_name());
        }
    }

    #[test]
    fn pressure_of_straining_flow() {
        let s = solver(64, 16, |_| 0.0);
        let a = 0.3;
        let rhs = s.chart().field_from_fn(|_, _| -2.0 * a * a);
        let u = s.solve(&rhs, &BoundaryScalar::constant(64, 0.0)).unwrap();
        let exact = s.chart().field_from_fn(|x, y| 0.5 * a * a * (1.0 - x * x - y * y));
        assert!(u.sub(&exact).max_abs() < 1e-12);
        let taylor = u.normal_derivative().map(|v| -v);
        assert!(taylor.values.iter().all(|v| (v - a * a).abs() < 1e-11));
    }

    #[test]
    fn harmonic_polynomials_on_disk() {
        let s = solver(64, 16, |_| 0.0);
        for m in 1..=16 {
            let g = trig(64, |t| (m as f64 * t).cos());
            let u = s.harmonic_extension(&g).unwrap();
            let exact = s.chart().field_from_fn(|x, y| {
                let (r, t) = (x.hypot(y), y.atan2(x));
                r.powi(m) * (m as f64 * t).cos()
            });
            assert!(u.sub(&exact).max_abs() < 1e-8, "m={m}");
        }
    }

    #[test]
    fn dense_and_iterative_paths_agree() {
        let chart = DiskChart::new(BoundaryGraph::from_fn(64, |t| 0.1 * (2.0 * t).cos()).unwrap(), 16).unwrap();
        let dense = DirichletSolver::new(Arc::clone(&chart)).unwrap();
        assert_eq!(dense.backend_name(), "dense");
        let iterative = DirichletSolver { backend: Backend::Iterative, ..DirichletSolver::new(chart).unwrap() };
        assert_eq!(iterative.backend_name(), "iterative");
        let rhs = dense.chart().field_from_fn(|x, y| (x * y).sin());
        let g = trig(64, |t| (3.0 * t).sin());
        let a = dense.solve(&rhs, &g).unwrap();
        let b = iterative.solve(&rhs, &g).unwrap();
        assert!(a.sub(&b).max_abs() < 1e-10);
    }

    #[test]
    fn manufactured_solution_on_perturbed_domain() {
        let s = solver(64, 20, |t| 0.1 * (3.0 * t).cos());
        let exact = s.chart().field_from_fn(|x, y| x * x * x - 3.0 * x * y * y);
        let u = s.harmonic_extension(&exact.boundary_trace()).unwrap();
        assert!(u.sub(&exact).max_abs() < 1e-9, "{}", u.sub(&exact).max_abs());
    }

    #[test]
    fn maximum_principle() {
        let s = solver(64, 16, |t| 0.1 * (2.0 * t).cos() + 0.05 * (5.0 * t).sin());
        let g = trig(64, |t| (t).sin() + 0.3 * (4.0 * t).cos() - 0.2 * (7.0 * t).sin());
        let u = s.harmonic_extension(&g).unwrap();
        assert!(u.min() >= g.min() - 1e-9 && u.max() <= g.max() + 1e-9);
    }

    #[test]
    fn dtn_disk_symbol() {
        let s = solver(64, 16, |_| 0.0);
        let op = DtnOperator::assemble(&s).unwrap();
        assert!(op.apply(&BoundaryScalar::constant(64, 1.0)).max_abs() < 1e-10);
        for m in 1..=16 {
            let g = trig(64, |t| (m as f64 * t).cos());
            let ng = op.apply(&g);
            let n2 = op.apply_power(&g, 2).unwrap();
            for l in 0..64 {
                assert!((ng.values[l] - m as f64 * g.values[l]).abs() < 1e-8 * m as f64);
                assert!((n2.values[l] - (m * m) as f64 * g.values[l]).abs() < 1e-7 * (m * m) as f64);
            }
        }
        assert!(matches!(op.apply_power(&BoundaryScalar::constant(64, 1.0), 5), Err(DropletError::PowerTooHigh { .. })));

        let s2 = solver(64, 16, |_| 1.0);
        let op2 = DtnOperator::assemble(&s2).unwrap();
        let g = trig(64, |t| (3.0 * t).cos());
        let ng = op2.apply(&g);
        assert!(ng.values.iter().zip(&g.values).all(|(a, b)| (a - 1.5 * b).abs() < 1e-9));
    }

    #[test]
    fn dtn_projection_and_inverse_on_disk() {
        let s = solver(64, 16, |_| 0.0);
        let op = DtnOperator::assemble(&s).unwrap();
        let g = trig(64, |t| t.cos() + (8.0 * t).cos());
        let p = op.spectral_projection(&g, 4.0).unwrap();
        let expect = trig(64, |t| t.cos());
        assert!(p.zip_with(&expect, |a, b| a - b).max_abs() < 1e-10);
        assert_eq!(op.spectral_projection(&g, f64::INFINITY).unwrap(), g);
        let h = op.inverse_on_mean_zero(&trig(64, |t| (5.0 * t).cos())).unwrap();
        assert!(h.zip_with(&trig(64, |t| 0.2 * (5.0 * t).cos()), |a, b| a - b).max_abs() < 1e-10);
        assert!(matches!(
            op.inverse_on_mean_zero(&BoundaryScalar::constant(64, 1.0)),
            Err(DropletError::NonzeroMean { .. })
        ));
        assert_eq!(op.inverse_on_mean_zero(&BoundaryScalar::constant(64, 0.0)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn leibniz_rule_on_disk() {
        let s = solver(64, 16, |_| 0.0);
        let op = DtnOperator::assemble(&s).unwrap();
        let f = trig(64, |t| t.cos());
        let r = check_dtn_leibniz(&s, &op, &f, &f).unwrap();
        assert!(r.residual < 1e-8, "{}", r.residual);
        let one = BoundaryScalar::constant(64, 1.0);
        let r = check_dtn_leibniz(&s, &op, &one, &f).unwrap();
        assert!(r.residual < 1e-9, "{}", r.residual);
    }

    #[test]
    fn div_grad_solve_removes_divergence() {
        let s = solver(64, 16, |t| 0.1 * (2.0 * t).cos());
        let v = s.chart().vector_from_fn(|x, y| [(x + y).sin(), x * y * y]);
        let div = v.divergence();
        let phi = s.solve_div_grad(&div).unwrap();
        let w = v.sub(&phi.gradient());
        let b = s.chart().boundary_offset();
        let worst = w.divergence().values[..b].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-9, "{worst}");
    }
}
