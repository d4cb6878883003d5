use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reason the continuation monitor stopped a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TripReason {
    TaylorSign,
    Thickness,
    ControlA,
    ControlB,
    CollarExit,
    StarShape,
}

impl fmt::Display for TripReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TripReason::TaylorSign => "TaylorSign",
            TripReason::Thickness => "Thickness",
            TripReason::ControlA => "ControlA",
            TripReason::ControlB => "ControlB",
            TripReason::CollarExit => "CollarExit",
            TripReason::StarShape => "StarShape",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum DropletError {
    #[error("star shape violated: radius {radius} at node {node} is below r_min = {r_min}")]
    StarShapeViolation { node: usize, radius: f64, r_min: f64 },
    #[error("grid mismatch: {left} vs {right} nodes")]
    GridMismatch { left: usize, right: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("chart singular: radial stretch {value} at node {node}")]
    ChartSingular { node: usize, value: f64 },
    #[error("derivative order {order} exceeds the maximum {max}")]
    OrderTooHigh { order: usize, max: usize },
    #[error("target domain exceeds the source by {excess} (allowed {band})")]
    DomainNotContained { excess: f64, band: f64 },
    #[error("linear solver failed: {0}")]
    SolverSingular(String),
    #[error("solver residual {residual:e} exceeds tolerance {tol:e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error("power {m} of the Dirichlet-to-Neumann operator exceeds m_max = {max}")]
    PowerTooHigh { m: usize, max: usize },
    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),
    #[error("boundary data has nonzero mean {mean:e} (tolerance {tol:e})")]
    NonzeroMean { mean: f64, tol: f64 },
    #[error("Taylor coefficient minimum {min_a} is not above {floor}")]
    TaylorSignViolation { min_a: f64, floor: f64 },
    #[error("target domain extends {excess} outward, more than the allowed {allowed}")]
    EnlargementTooLarge { excess: f64, allowed: f64 },
    #[error("inverse map did not converge: {0}")]
    InversionFailure(String),
    #[error("velocity divergence {divergence:e} exceeds {tol:e}")]
    DivergenceTooLarge { divergence: f64, tol: f64 },
    #[error("collar exit: norm {norm} is not below {delta}")]
    CollarExit { norm: f64, delta: f64 },
    #[error("ODE integration failed: {0}")]
    StepFailure(String),
    #[error("monitor trip: {0}")]
    MonitorTrip(TripReason),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("unknown verification suite `{0}`")]
    UnknownSuite(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DropletError>;
