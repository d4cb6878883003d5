//! Shared fixtures for the solver benchmarks.

use droplet_core::affine::{to_fluid_state, AffineState};
use droplet_core::{BoundaryGraph, DirichletSolver, FluidState, Result};

/// Solver on the perturbed disk `r = 1 + 0.1 cos 3θ`.
pub fn perturbed_solver(n_theta: usize, n_rho: usize) -> Result<DirichletSolver> {
    DirichletSolver::for_boundary(BoundaryGraph::from_fn(n_theta, |t| 0.1 * (3.0 * t).cos())?, n_rho)
}

/// Straining flow on the unit disk.
pub fn straining_state(n_theta: usize, n_rho: usize) -> Result<FluidState> {
    Ok(to_fluid_state(&AffineState::straining(0.25), n_theta, n_rho)?.state)
}
