//! Fourier and Chebyshev building blocks shared by the boundary, chart and
//! elliptic layers.

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Signed frequency of DFT slot `k` on `n` points. The Nyquist slot maps to `+n/2`.
pub fn signed_mode(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Normalized forward DFT: `c_m = (1/n) Σ_k f_k e^{-i m θ_k}`.
pub fn forward(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n).process(&mut buf));
    let s = 1.0 / n as f64;
    for c in &mut buf {
        *c *= s;
    }
    buf
}

/// Inverse of [`forward`], returning the real part.
pub fn inverse(coeffs: &[Complex64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut buf = coeffs.to_vec();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut buf));
    buf.iter().map(|c| c.re).collect()
}

/// Applies an even Fourier multiplier `m ↦ mult(|m|)` to periodic nodal data.
pub fn apply_multiplier(values: &[f64], mult: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = values.len();
    let mut c = forward(values);
    for (k, ck) in c.iter_mut().enumerate() {
        *ck *= mult(signed_mode(k, n).unsigned_abs() as f64);
    }
    inverse(&c)
}

/// Spectral derivative of periodic nodal data (Nyquist mode dropped for odd orders).
pub fn periodic_derivative(values: &[f64], order: u32) -> Vec<f64> {
    let n = values.len();
    let mut c = forward(values);
    for (k, ck) in c.iter_mut().enumerate() {
        let m = signed_mode(k, n);
        if order % 2 == 1 && 2 * m.unsigned_abs() as usize == n {
            *ck = Complex64::new(0.0, 0.0);
            continue;
        }
        *ck *= Complex64::new(0.0, m as f64).powu(order);
    }
    inverse(&c)
}

/// Trigonometric interpolant of real periodic nodal data, evaluable anywhere.
#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    n: usize,
    half: Vec<Complex64>,
}

impl TrigInterpolant {
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        let c = forward(values);
        Self { n, half: c[..=n / 2].to_vec() }
    }

    /// Value of the `order`-th derivative at angle `theta`.
    pub fn eval_derivative(&self, theta: f64, order: u32) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        if order == 0 {
            acc += self.half[0].re;
        }
        let e1 = Complex64::from_polar(1.0, theta);
        let mut e = e1;
        for m in 1..n / 2 {
            let f = Complex64::new(0.0, m as f64).powu(order);
            acc += 2.0 * (self.half[m] * f * e).re;
            e *= e1;
        }
        let h = (n / 2) as f64;
        let nyq = self.half[n / 2].re;
        acc += nyq
            * match order % 4 {
                0 => h.powi(order as i32) * (h * theta).cos(),
                1 => -h.powi(order as i32) * (h * theta).sin(),
                2 => -h.powi(order as i32) * (h * theta).cos(),
                _ => h.powi(order as i32) * (h * theta).sin(),
            };
        acc
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.eval_derivative(theta, 0)
    }
}

/// Dense Fourier differentiation matrices on `n` equispaced nodes (n even).
pub fn fourier_diff_matrices(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = 2.0 * PI / n as f64;
    let mut d1 = DMatrix::zeros(n, n);
    let mut d2 = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            if j == k {
                d2[(j, k)] = -PI * PI / (3.0 * h * h) - 1.0 / 6.0;
                continue;
            }
            let d = j as i64 - k as i64;
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let half = d as f64 * h / 2.0;
            d1[(j, k)] = 0.5 * sign / half.tan();
            d2[(j, k)] = -0.5 * sign / (half.sin() * half.sin());
        }
    }
    (d1, d2)
}

/// Chebyshev points `cos(jπ/m)` and the differentiation matrix on them.
pub fn chebyshev(m: usize) -> (Vec<f64>, DMatrix<f64>) {
    let x: Vec<f64> = (0..=m).map(|j| (PI * j as f64 / m as f64).cos()).collect();
    let c = |j: usize| if j == 0 || j == m { 2.0 } else { 1.0 };
    let mut d = DMatrix::zeros(m + 1, m + 1);
    for i in 0..=m {
        for j in 0..=m {
            if i != j {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                d[(i, j)] = c(i) / c(j) * sign / (x[i] - x[j]);
            }
        }
    }
    // Negative-sum trick for the diagonal.
    for i in 0..=m {
        let s: f64 = (0..=m).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    (x, d)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Radial collocation grid: the positive half of an odd-degree Chebyshev grid
/// on `[-1, 1]`, with derivatives folded through the parity of each field.
///
/// A field on the disk extended by `U(-ρ, θ) = U(ρ, θ + π)` is smooth across
/// the origin, so differentiating along the full diameter and then keeping the
/// positive half is spectrally accurate. `same` acts on the column itself and
/// `mirror` on the column half a turn away.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    pub n_rho: usize,
    /// Ascending radial nodes, last one equal to 1.
    pub rho: Vec<f64>,
    pub d1_same: DMatrix<f64>,
    pub d1_mirror: DMatrix<f64>,
    pub d2_same: DMatrix<f64>,
    pub d2_mirror: DMatrix<f64>,
    /// Weights `q_i` with `Σ q_i h(ρ_i) = ∫_0^1 h` for odd `h` polynomial in ρ.
    pub quad: Vec<f64>,
    full_nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl RadialGrid {
    pub fn new(n_rho: usize) -> Self {
        let m = 2 * n_rho - 1;
        let (x, d) = chebyshev(m);
        let d2 = &d * &d;
        // Ascending index i ↔ full index n_rho-1-i; its mirror is m-j.
        let full = |i: usize| n_rho - 1 - i;
        let mut d1_same = DMatrix::zeros(n_rho, n_rho);
        let mut d1_mirror = DMatrix::zeros(n_rho, n_rho);
        let mut d2_same = DMatrix::zeros(n_rho, n_rho);
        let mut d2_mirror = DMatrix::zeros(n_rho, n_rho);
        for i in 0..n_rho {
            for k in 0..n_rho {
                let (ji, jk) = (full(i), full(k));
                d1_same[(i, k)] = d[(ji, jk)];
                d1_mirror[(i, k)] = d[(ji, m - jk)];
                d2_same[(i, k)] = d2[(ji, jk)];
                d2_mirror[(i, k)] = d2[(ji, m - jk)];
            }
        }
        let rho: Vec<f64> = (0..n_rho).map(|i| x[full(i)]).collect();
        let quad = odd_quadrature(&rho);
        let bary = (0..=m)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == m {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        Self { n_rho, rho, d1_same, d1_mirror, d2_same, d2_mirror, quad, full_nodes: x, bary }
    }

    /// Interpolation weights at `ρ ≥ 0` for even and odd angular modes.
    ///
    /// The value of mode `m` at `ρ` is `Σ_i w_i c_m(ρ_i)` with the even
    /// weights for even `m` and the odd weights for odd `m`.
    pub fn parity_weights(&self, r: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.full_nodes.len() - 1;
        let mut beta = vec![0.0; m + 1];
        if let Some(j) = self.full_nodes.iter().position(|&xj| xj == r) {
            beta[j] = 1.0;
        } else {
            let mut s = 0.0;
            for j in 0..=m {
                let t = self.bary[j] / (r - self.full_nodes[j]);
                beta[j] = t;
                s += t;
            }
            for b in &mut beta {
                *b /= s;
            }
        }
        let n = self.n_rho;
        let mut even = vec![0.0; n];
        let mut odd = vec![0.0; n];
        for i in 0..n {
            let j = n - 1 - i;
            even[i] = beta[j] + beta[m - j];
            odd[i] = beta[j] - beta[m - j];
        }
        (even, odd)
    }

    /// Distance between the boundary node and the next one inward.
    pub fn outer_spacing(&self) -> f64 {
        1.0 - self.rho[self.n_rho - 2]
    }
}

/// Interpolatory weights for `∫_0^1 h(ρ) dρ` where `h(ρ) = ρ E(ρ²)`.
///
/// With `u = 2ρ² - 1` the integral becomes `¼ ∫_{-1}^{1} E du`, so the weights
/// come from an interpolatory rule on the nodes `u_i`.
fn odd_quadrature(rho: &[f64]) -> Vec<f64> {
    let n = rho.len();
    let u: Vec<f64> = rho.iter().map(|r| 2.0 * r * r - 1.0).collect();
    let mut v = DMatrix::zeros(n, n);
    for (i, &ui) in u.iter().enumerate() {
        let (mut t0, mut t1) = (1.0, ui);
        for k in 0..n {
            let tk = match k {
                0 => 1.0,
                1 => ui,
                _ => {
                    let t2 = 2.0 * ui * t1 - t0;
                    t0 = t1;
                    t1 = t2;
                    t2
                }
            };
            v[(k, i)] = tk;
        }
    }
    let mom = DVector::from_fn(n, |k, _| if k % 2 == 0 { 2.0 / (1.0 - (k * k) as f64) } else { 0.0 });
    let w = v.lu().solve(&mom).expect("Chebyshev moment system is nonsingular");
    (0..n).map(|i| 0.25 * w[i] / rho[i]).collect()
}

/// Smooth cutoff equal to 1 on `[0, 1]` and 0 on `[2, ∞)`.
pub fn lp_bump(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        return 1.0;
    }
    if x >= 2.0 {
        return 0.0;
    }
    let f = |z: f64| if z > 0.0 { (-1.0 / z).exp() } else { 0.0 };
    let a = f(2.0 - x);
    a / (a + f(x - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_matrices_differentiate_trig_polynomials() {
        let n = 32;
        let (d1, d2) = fourier_diff_matrices(n);
        let th: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
        let f = DVector::from_fn(n, |k, _| (3.0 * th[k]).sin() + (5.0 * th[k]).cos());
        let df = &d1 * &f;
        let ddf = &d2 * &f;
        for k in 0..n {
            let t = th[k];
            assert!((df[k] - (3.0 * (3.0 * t).cos() - 5.0 * (5.0 * t).sin())).abs() < 1e-12);
            assert!((ddf[k] + 9.0 * (3.0 * t).sin() + 25.0 * (5.0 * t).cos()).abs() < 1e-11);
        }
    }

    #[test]
    fn radial_folding_differentiates_parity_extended_modes() {
        let g = RadialGrid::new(12);
        // r^3 cos 3θ: odd mode, so the mirror column carries the opposite sign.
        for &(m, sign) in &[(3usize, -1.0), (2, 1.0)] {
            let f = DVector::from_iterator(g.n_rho, g.rho.iter().map(|r| r.powi(m as i32)));
            let df = &g.d1_same * &f + (&g.d1_mirror * &f) * sign;
            let ddf = &g.d2_same * &f + (&g.d2_mirror * &f) * sign;
            for (i, r) in g.rho.iter().enumerate() {
                let mf = m as f64;
                assert!((df[i] - mf * r.powi(m as i32 - 1)).abs() < 1e-11);
                assert!((ddf[i] - mf * (mf - 1.0) * r.powi(m as i32 - 2)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn odd_quadrature_integrates_odd_polynomials() {
        let g = RadialGrid::new(10);
        for p in [1, 3, 5, 11] {
            let s: f64 = g.rho.iter().zip(&g.quad).map(|(r, q)| q * r.powi(p)).sum();
            assert!((s - 1.0 / (p as f64 + 1.0)).abs() < 1e-13, "p={p}");
        }
    }

    #[test]
    fn barycentric_weights_reproduce_polynomials() {
        let g = RadialGrid::new(9);
        let (even, odd) = g.parity_weights(0.37);
        let e: f64 = g.rho.iter().zip(&even).map(|(r, w)| w * r.powi(4)).sum();
        let o: f64 = g.rho.iter().zip(&odd).map(|(r, w)| w * r.powi(3)).sum();
        assert!((e - 0.37f64.powi(4)).abs() < 1e-14);
        assert!((o - 0.37f64.powi(3)).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_is_exact_to_degree_2n_minus_1() {
        let (x, w) = gauss_legendre_unit(6);
        for p in 0..12 {
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            assert!((s - 1.0 / (p as f64 + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn trig_interpolant_matches_generator() {
        let n = 16;
        let vals: Vec<f64> = (0..n).map(|k| (2.0 * PI * k as f64 / n as f64 * 3.0).cos()).collect();
        let t = TrigInterpolant::new(&vals);
        assert!((t.eval(0.3) - (0.9f64).cos()).abs() < 1e-14);
        assert!((t.eval_derivative(0.3, 1) + 3.0 * (0.9f64).sin()).abs() < 1e-13);
    }

    #[test]
    fn bump_is_a_smooth_cutoff() {
        assert_eq!(lp_bump(0.5), 1.0);
        assert_eq!(lp_bump(2.5), 0.0);
        assert!((lp_bump(1.5) - 0.5).abs() < 1e-15);
    }
}
