//! Distance between two states on the intersection of their domains and the
//! empirical Grönwall constant along a pair of trajectories.
//!
//! ```text
//! D = ½∫_Ω̃ |v - v_h|² dx + ½∫_Γ̃ b |p - p_h|² dS,   b = 1/a on Γ̃∩Γ, 1/a_h on Γ̃∩Γ_h.
//! ```

use serde::{Deserialize, Serialize};

use crate::boundary::{intersection_graph, RegionTag};
use crate::chart::{transfer_fields, DiskChart, Sampler};
use crate::error::{DropletError, Result};
use crate::state::{control_report, FluidState, DEFAULT_A_FLOOR};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionBreakdown {
    pub a_nodes: usize,
    pub a_h_nodes: usize,
    pub common_nodes: usize,
    /// Surface contribution from nodes on the first boundary.
    pub surface_a: f64,
    /// Surface contribution from nodes on the second boundary.
    pub surface_a_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub d_value: f64,
    pub volume_part: f64,
    pub surface_part: f64,
    pub regions: RegionBreakdown,
    pub tags: Vec<RegionTag>,
    /// `p - p_h` at the nodes of Γ̃.
    pub pressure_gap: Vec<f64>,
}

pub fn distance(a: &FluidState, b: &FluidState) -> Result<DistanceReport> {
    distance_with_floor(a, b, DEFAULT_A_FLOOR)
}

/// [`distance`] with an explicit lower bound on the Taylor coefficients used as weights.
pub fn distance_with_floor(a: &FluidState, b: &FluidState, taylor_floor: f64) -> Result<DistanceReport> {
    let (ga, gb) = (a.gamma(), b.gamma());
    let (gamma, tags) = intersection_graph(ga, gb)?;
    let n = gamma.n_theta();
    let chart = DiskChart::new(gamma, a.chart().n_rho())?;
    let va = a.velocity();
    let vb = b.velocity();
    let ra = transfer_fields(&[&va.x, &va.y], &chart)?.value;
    let rb = transfer_fields(&[&vb.x, &vb.y], &chart)?.value;
    let dx = ra[0].sub(&rb[0]);
    let dy = ra[1].sub(&rb[1]);
    let volume_part = 0.5 * dx.mul(&dx).add(&dy.mul(&dy)).integrate();

    let ta = a.taylor()?;
    let tb = b.taylor()?;
    let sa = Sampler::new(&[a.pressure()?]);
    let sb = Sampler::new(&[b.pressure()?]);
    let (wa, wb) = (ga.arclength_weights(), gb.arclength_weights());
    let mut regions = RegionBreakdown::default();
    let mut gap = vec![0.0; n];
    let mut buf = [0.0];
    for (k, tag) in tags.iter().enumerate() {
        match tag {
            RegionTag::Common => regions.common_nodes += 1,
            RegionTag::A => {
                regions.a_nodes += 1;
                let w = ta.values[k];
                if !(w > taylor_floor) {
                    return Err(DropletError::TaylorSignViolation { min_a: w, floor: taylor_floor });
                }
                let x = ga.point(k);
                sb.eval_xy(x[0], x[1], &mut buf)?;
                gap[k] = -buf[0];
                regions.surface_a += 0.5 * wa[k] * gap[k] * gap[k] / w;
            }
            RegionTag::AH => {
                regions.a_h_nodes += 1;
                let w = tb.values[k];
                if !(w > taylor_floor) {
                    return Err(DropletError::TaylorSignViolation { min_a: w, floor: taylor_floor });
                }
                let x = gb.point(k);
                sa.eval_xy(x[0], x[1], &mut buf)?;
                gap[k] = buf[0];
                regions.surface_a_h += 0.5 * wb[k] * gap[k] * gap[k] / w;
            }
        }
    }
    let surface_part = regions.surface_a + regions.surface_a_h;
    Ok(DistanceReport { d_value: volume_part + surface_part, volume_part, surface_part, regions, tags, pressure_gap: gap })
}

/// States sampled at increasing times.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<FluidState>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, state: FluidState) {
        self.times.push(t);
        self.states.push(state);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallFit {
    pub times: Vec<f64>,
    pub d_values: Vec<f64>,
    /// `B_diff + B_diff,h` at each time.
    pub b_sum: Vec<f64>,
    /// `log(D_{i+1}/D_i) / ∫(B_diff + B_diff,h) dt` per interval.
    pub ratios: Vec<f64>,
    /// Largest ratio, the empirical Grönwall constant; `None` when degenerate.
    pub max_ratio: Option<f64>,
    /// True when some `D` vanishes and no ratio can be formed.
    pub degenerate: bool,
}

pub fn gronwall_check(traj_a: &Trajectory, traj_b: &Trajectory) -> Result<GronwallFit> {
    if traj_a.len() != traj_b.len() || traj_a.len() < 2 {
        return Err(DropletError::InvalidArgument(format!(
            "trajectories must be aligned with at least two samples, got {} and {}",
            traj_a.len(),
            traj_b.len()
        )));
    }
    for (ta, tb) in traj_a.times.iter().zip(&traj_b.times) {
        if (ta - tb).abs() > 1e-12 * (1.0 + ta.abs()) {
            return Err(DropletError::InvalidArgument(format!("sample times differ: {ta} vs {tb}")));
        }
    }
    let mut d_values = Vec::with_capacity(traj_a.len());
    let mut b_sum = Vec::with_capacity(traj_a.len());
    for (sa, sb) in traj_a.states.iter().zip(&traj_b.states) {
        d_values.push(distance(sa, sb)?.d_value);
        b_sum.push(control_report(sa)?.b_diff + control_report(sb)?.b_diff);
    }
    let degenerate = d_values.iter().any(|d| !(*d > 0.0));
    let mut ratios = Vec::new();
    if !degenerate {
        for i in 0..d_values.len() - 1 {
            let dt = traj_a.times[i + 1] - traj_a.times[i];
            let integral = 0.5 * dt * (b_sum[i] + b_sum[i + 1]);
            ratios.push((d_values[i + 1] / d_values[i]).ln() / integral);
        }
    }
    let max_ratio = ratios.iter().copied().reduce(f64::max);
    Ok(GronwallFit { times: traj_a.times.clone(), d_values, b_sum, ratios, max_ratio, degenerate })
}

/// Writes `t,D,B_sum` rows.
pub fn distance_series_csv(fit: &GronwallFit) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("# schema=droplet.distance_series/1\nt,d,b_sum\n");
    for ((t, d), b) in fit.times.iter().zip(&fit.d_values).zip(&fit.b_sum) {
        let _ = writeln!(s, "{t:.17e},{d:.17e},{b:.17e}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{to_fluid_state, AffineState};
    use crate::boundary::BoundaryGraph;
    use nalgebra::Matrix2;

    fn strain_on(eta: impl Fn(f64) -> f64, alpha: f64) -> FluidState {
        FluidState::from_fn(BoundaryGraph::from_fn(64, eta).unwrap(), 16, 0.0, |x, y| [alpha * x, -alpha * y]).unwrap()
    }

    #[test]
    fn identical_states_are_at_distance_zero() {
        let s = strain_on(|t| 0.05 * (2.0 * t).cos(), 0.3);
        let r = distance(&s, &s).unwrap();
        assert_eq!(r.d_value, 0.0);
        assert_eq!(r.regions.common_nodes, 64);
    }

    #[test]
    fn nested_disks_scale_quadratically() {
        let a = 0.3;
        let base = strain_on(|_| 0.0, a);
        let mut surf = Vec::new();
        for delta in [1e-3, 5e-4] {
            let inner = strain_on(|_| -delta, a);
            let r = distance(&base, &inner).unwrap();
            assert!(r.volume_part < 1e-20, "{}", r.volume_part);
            assert_eq!(r.regions.a_h_nodes, 64);
            // p = (α²/2)(1 - r²) on the unit disk is sampled on the circle of radius R = 1 - δ,
            // whose length 2πR cancels against the weight 1/a_h = 1/(α²R).
            let rad = 1.0 - delta;
            let exact = std::f64::consts::PI * (a * a * (1.0 - rad * rad) / 2.0).powi(2) / (a * a);
            assert!((r.surface_part - exact).abs() < 1e-6 * exact, "{} {exact}", r.surface_part);
            surf.push(r.surface_part);
        }
        let ratio = surf[0] / surf[1];
        assert!((ratio - 4.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn shifted_velocity_adds_a_volume_term() {
        let d = 1e-2;
        let a = strain_on(|t| 0.05 * (3.0 * t).sin(), 0.3);
        let gamma = a.gamma().clone();
        let b = FluidState::from_fn(gamma, 16, 0.0, |x, y| [0.3 * x + d, -0.3 * y]).unwrap();
        let r = distance(&a, &b).unwrap();
        assert!((r.volume_part - 0.5 * d * d * a.area()).abs() < 1e-12);
        assert_eq!(r.surface_part, 0.0);
    }

    #[test]
    fn distance_is_symmetric() {
        let a = strain_on(|t| 0.04 * (2.0 * t).cos(), 0.3);
        let b = strain_on(|t| 0.04 * (2.0 * t).cos() + 0.002 * (3.0 * t).sin(), 0.28);
        let ab = distance(&a, &b).unwrap();
        let ba = distance(&b, &a).unwrap();
        assert!((ab.d_value - ba.d_value).abs() < 1e-12 * ab.d_value.max(1e-300));
        assert_eq!(ab.regions.a_nodes, ba.regions.a_h_nodes);
        assert!(ab.regions.a_nodes > 0 && ab.regions.a_h_nodes > 0);
    }

    #[test]
    fn negative_taylor_weight_is_rejected() {
        let rot = to_fluid_state(&AffineState::rotation(0.5), 64, 16).unwrap().state;
        let inner = FluidState::from_fn(BoundaryGraph::circle(64, 0.99).unwrap(), 16, 0.0, |x, y| [-0.5 * y, 0.5 * x]).unwrap();
        assert!(matches!(distance(&rot, &inner), Err(DropletError::TaylorSignViolation { .. })));
    }

    #[test]
    fn gronwall_on_identical_trajectories_is_degenerate() {
        let mut t = Trajectory::default();
        for (i, al) in [0.2, 0.21].iter().enumerate() {
            t.push(i as f64 * 0.1, strain_on(|_| 0.0, *al));
        }
        let fit = gronwall_check(&t, &t).unwrap();
        assert!(fit.degenerate);
        assert!(fit.max_ratio.is_none());
        assert!(fit.d_values.iter().all(|d| *d == 0.0));
        assert!(distance_series_csv(&fit).starts_with("# schema=droplet.distance_series/1"));
    }

    #[test]
    fn gronwall_on_an_oracle_pair() {
        let s0 = AffineState::straining(0.25);
        let delta: f64 = 1e-3;
        let q = Matrix2::new((1.0 - delta).powi(-2), 0.0, 0.0, 1.0);
        let s1 = AffineState::new(s0.a, q).unwrap();
        let times = [0.0, 0.1, 0.2];
        let ta = crate::affine::integrate_affine(&s0, &times, 1e-12).unwrap();
        let tb = crate::affine::integrate_affine(&s1, &times, 1e-12).unwrap();
        let mut a = Trajectory::default();
        let mut b = Trajectory::default();
        for (i, t) in times.iter().enumerate() {
            a.push(*t, to_fluid_state(&ta.states[i], 64, 16).unwrap().state);
            b.push(*t, to_fluid_state(&tb.states[i], 64, 16).unwrap().state);
        }
        let fit = gronwall_check(&a, &b).unwrap();
        assert!(!fit.degenerate);
        assert!(fit.max_ratio.unwrap().is_finite());
        let rev = gronwall_check(&b, &a).unwrap();
        for (x, y) in fit.d_values.iter().zip(&rev.d_values) {
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }
}
