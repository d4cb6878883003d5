//! Run configuration, read from TOML.
//!
//! ```toml
//! [grid]
//! n_theta = 64
//! n_rho = 16
//!
//! [step]
//! eps = 1e-3
//! horizon = 0.5
//!
//! [initial]
//! kind = "affine"
//! a = [[0.25, 0.0], [0.0, -0.25]]
//! ```
//!
//! Every section except `[step]` and `[initial]` is optional. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::affine::{to_fluid_state_with_collar, AffineState};
use crate::artifacts::read_snapshot;
use crate::boundary::{Collar, MIN_NODES};
use crate::error::{DropletError, Result};
use crate::state::{FluidState, DEFAULT_K};
use crate::stepper::{MonitorConfig, StepConfig, DEFAULT_C_MARGIN};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_theta: usize,
    pub n_rho: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_theta: 64, n_rho: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSection {
    pub eps: f64,
    pub horizon: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub gravity: f64,
    #[serde(default = "default_c_margin")]
    pub c_margin: f64,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_true")]
    pub energy_checks: bool,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_c_margin() -> f64 {
    DEFAULT_C_MARGIN
}

fn default_true() -> bool {
    true
}

fn identity() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 1.0]]
}

/// Initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Affine flow `v = Ax` on the ellipse `xᵀQx = 1`, plus `swirl·∇^⊥|x|⁴`.
    Affine {
        a: [[f64; 2]; 2],
        #[serde(default = "identity")]
        q: [[f64; 2]; 2],
        #[serde(default)]
        swirl: f64,
    },
    /// Rigid rotation of the unit disk.
    Rotation { omega: f64 },
    /// A snapshot directory written by a previous run.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a snapshot every this many steps; 0 keeps only the first and last.
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("droplet-out"), snapshot_every: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    /// Seed of the randomized verification fields.
    pub verify: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { verify: 20_240_601 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: GridConfig,
    pub step: StepSection,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub collar: Collar,
    pub initial: InitialCondition,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn config_err(key: &str, message: impl Into<String>) -> DropletError {
    DropletError::Config { key: key.into(), message: message.into() }
}

/// Pulls the field name out of serde's "unknown field `x`" style messages.
fn key_from_message(msg: &str) -> Option<String> {
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(i) = msg.find(marker) {
            let rest = &msg[i + marker.len()..];
            return rest.find('`').map(|j| rest[..j].to_string());
        }
    }
    None
}

fn prefixed(section: &str, e: DropletError) -> DropletError {
    match e {
        DropletError::Config { key, message } => DropletError::Config { key: format!("{section}.{key}"), message },
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| {
            let message = e.message().to_string();
            let key = key_from_message(&message).unwrap_or_else(|| "<document>".into());
            config_err(&key, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.n_theta < MIN_NODES || self.grid.n_theta % 2 != 0 {
            return Err(config_err(
                "grid.n_theta",
                format!("must be even and at least {MIN_NODES}, got {}", self.grid.n_theta),
            ));
        }
        if self.grid.n_rho < 4 {
            return Err(config_err("grid.n_rho", format!("must be at least 4, got {}", self.grid.n_rho)));
        }
        self.step_config().validate().map_err(|e| match e {
            DropletError::Config { key, message } if is_monitor_key(&key) => {
                DropletError::Config { key: format!("monitor.{key}"), message }
            }
            other => prefixed("step", other),
        })?;
        if !(self.step.horizon >= 0.0) || !self.step.horizon.is_finite() {
            return Err(config_err("step.horizon", format!("must be nonnegative and finite, got {}", self.step.horizon)));
        }
        if self.step.max_steps == Some(0) {
            return Err(config_err("step.max_steps", "must be positive when given"));
        }
        let c = self.collar;
        if !(c.eps > 0.0 && c.eps < 1.0) {
            return Err(config_err("collar.eps", format!("must lie in (0, 1), got {}", c.eps)));
        }
        if !(c.delta > 0.0) || !c.delta.is_finite() {
            return Err(config_err("collar.delta", format!("must be positive, got {}", c.delta)));
        }
        if !(c.r_min > 0.0 && c.r_min < 1.0) {
            return Err(config_err("collar.r_min", format!("must lie in (0, 1), got {}", c.r_min)));
        }
        match &self.initial {
            InitialCondition::Affine { a, q, swirl } => {
                if a.iter().chain(q.iter()).flatten().chain([swirl]).any(|x| !x.is_finite()) {
                    return Err(config_err("initial.a", "entries must be finite"));
                }
                if (a[0][0] + a[1][1]).abs() > 1e-12 {
                    return Err(config_err("initial.a", format!("must be trace-free, trace is {}", a[0][0] + a[1][1])));
                }
                let qm = matrix(q);
                if (qm - qm.transpose()).norm() > 1e-12 || !(qm[(0, 0)] > 0.0 && qm.determinant() > 0.0) {
                    return Err(config_err("initial.q", "must be symmetric positive definite"));
                }
            }
            InitialCondition::Rotation { omega } => {
                if !omega.is_finite() {
                    return Err(config_err("initial.omega", format!("must be finite, got {omega}")));
                }
            }
            InitialCondition::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(config_err("initial.path", "must not be empty"));
                }
            }
        }
        Ok(())
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            eps: self.step.eps,
            k: self.step.k,
            gravity: self.step.gravity,
            c_margin: self.step.c_margin,
            monitor: self.monitor,
            max_steps: self.step.max_steps,
            energy_checks: self.step.energy_checks,
        }
    }

    /// Resolves a path from the config against its directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// The affine state behind the initial data, if any.
    pub fn affine_initial(&self) -> Option<AffineState> {
        match &self.initial {
            InitialCondition::Affine { a, q, swirl } if *swirl == 0.0 => AffineState::new(matrix(a), matrix(q)).ok(),
            InitialCondition::Rotation { omega } => Some(AffineState::rotation(*omega)),
            _ => None,
        }
    }

    pub fn initial_state(&self) -> Result<FluidState> {
        let GridConfig { n_theta, n_rho } = self.grid;
        let state = match &self.initial {
            InitialCondition::Affine { a, q, swirl } => {
                let s = AffineState::new(matrix(a), matrix(q)).map_err(|e| config_err("initial.a", e.to_string()))?;
                let base = to_fluid_state_with_collar(&s, n_theta, n_rho, self.collar)?.state;
                if *swirl == 0.0 {
                    base
                } else {
                    let b = *swirl;
                    FluidState::from_fn(base.gamma().clone(), n_rho, 0.0, |x, y| {
                        let v = s.velocity(x, y);
                        let r2 = x * x + y * y;
                        [v[0] - 4.0 * b * r2 * y, v[1] + 4.0 * b * r2 * x]
                    })?
                }
            }
            InitialCondition::Rotation { omega } => {
                to_fluid_state_with_collar(&AffineState::rotation(*omega), n_theta, n_rho, self.collar)?.state
            }
            InitialCondition::File { path } => {
                let (state, _) = read_snapshot(&self.resolve(path))?;
                if state.chart().n_theta() != n_theta || state.chart().n_rho() != n_rho {
                    return Err(DropletError::GridMismatch { left: n_theta * n_rho, right: state.chart().len() });
                }
                state
            }
        };
        state.with_gravity(self.step.gravity)
    }
}

fn is_monitor_key(key: &str) -> bool {
    matches!(key, "taylor_floor" | "thickness_min" | "a_max" | "b_budget")
}

fn matrix(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}
