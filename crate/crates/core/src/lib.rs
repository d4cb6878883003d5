//! Two-dimensional free-boundary incompressible Euler droplets.
//!
//! The domain is a star-shaped perturbation of the unit disk, stored as the
//! radial graph `r = 1 + η(θ)`. Fields live on a boundary-fitted polar chart
//! ([`chart`]) and are solved for spectrally ([`elliptic`]). On top of this sit
//! the derived fluid quantities and energies ([`state`]), the regularization
//! operators ([`regularization`]), the time stepper ([`stepper`]), the
//! distance between two solutions ([`distance`]) and exact affine solutions
//! used as references ([`affine`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod affine;
pub mod artifacts;
pub mod boundary;
pub mod chart;
pub mod commands;
pub mod config;
pub mod distance;
pub mod elliptic;
pub mod error;
mod krylov;
pub mod regularization;
pub mod spectral;
pub mod state;
pub mod stepper;
pub mod verify;

pub use affine::{integrate_affine, AffineState, AffineTrajectory};
pub use boundary::{BoundaryGraph, BoundaryScalar, Collar, RegionTag};
pub use chart::{DiskChart, Field, VectorField};
pub use config::RunConfig;
pub use distance::{distance, gronwall_check, DistanceReport, GronwallFit, Trajectory};
pub use elliptic::{DirichletSolver, DtnOperator};
pub use error::{DropletError, Result, TripReason};
pub use state::{ControlReport, EnergyReport, FluidState};
pub use stepper::{run, run_with, RunOutcome, RunResult, StepConfig, StepRecord};
