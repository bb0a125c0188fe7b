use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinchain_core::BoundaryCondition;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    FreeRelax,
    WindingMetastability,
    GapVsBeta,
    PathVerify,
    PoincareCheck,
    CenterOfMass,
    BottleneckScan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub beta_schedule: Vec<f64>,
    pub bc: BoundaryCondition,
    pub replicas: usize,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub total_time: Option<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Steps between recorded rows.
    #[serde(default)]
    pub record_stride: Option<usize>,
    /// Bottleneck width δ.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Independent draws per replica for sampling experiments.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Angular grid size for the XY oracle.
    #[serde(default)]
    pub grid_m: Option<usize>,
}

fn bad(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {reason}"))
}

fn positive(field: &str, x: Option<f64>) -> Result<(), CliError> {
    match x {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(bad(field, format!("must be positive, got {v}"))),
        _ => Ok(()),
    }
}

fn require(field: &str, x: Option<f64>) -> Result<f64, CliError> {
    x.ok_or_else(|| bad(field, "required for this experiment"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Validation(format!("config: {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok((cfg, bytes))
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(1e-3)
    }

    pub fn total_time(&self) -> f64 {
        self.total_time.unwrap_or(1.0)
    }

    pub fn record_stride(&self) -> usize {
        self.record_stride.unwrap_or(10)
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(spinchain_core::observables::DEFAULT_DELTA)
    }

    pub fn samples(&self) -> usize {
        self.samples.unwrap_or(10_000)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(spinchain_core::paths::DEFAULT_EPSILON)
    }

    pub fn grid_m(&self) -> usize {
        self.grid_m.unwrap_or(48)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        use Experiment::*;
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        if self.n < 2 {
            return Err(bad("N", "must be at least 2"));
        }
        if self.l < 2 {
            return Err(bad("L", "must be at least 2"));
        }
        if self.replicas == 0 {
            return Err(bad("replicas", "must be positive"));
        }
        if self.beta_schedule.is_empty() {
            return Err(bad("beta_schedule", "must not be empty"));
        }
        for &b in &self.beta_schedule {
            if !(b > 0.0 && b.is_finite()) {
                return Err(bad("beta_schedule", format!("entries must be positive, got {b}")));
            }
        }
        positive("dt", self.dt)?;
        positive("total_time", self.total_time)?;
        positive("delta", self.delta)?;
        positive("epsilon", self.epsilon)?;
        if self.record_stride == Some(0) {
            return Err(bad("record_stride", "must be positive"));
        }
        if self.samples == Some(0) {
            return Err(bad("samples", "must be positive"));
        }
        if let Some(m) = self.grid_m {
            if m < 8 || m % 2 != 0 {
                return Err(bad("grid_m", "must be even and at least 8"));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(bad("output_dir", "must not be empty"));
        }
        match self.experiment {
            FreeRelax | GapVsBeta | CenterOfMass | WindingMetastability => {
                let dt = require("dt", self.dt)?;
                let t = require("total_time", self.total_time)?;
                if t < dt {
                    return Err(bad("total_time", "must be at least dt"));
                }
            }
            _ => {}
        }
        match self.experiment {
            WindingMetastability | BottleneckScan => {
                if self.n != 2 {
                    return Err(bad("N", "winding experiments need N = 2"));
                }
                if self.bc != BoundaryCondition::Periodic {
                    return Err(bad("bc", "winding experiments need periodic boundary"));
                }
            }
            CenterOfMass => {
                if self.n != 2 {
                    return Err(bad("N", "center-of-mass diffusion needs N = 2"));
                }
            }
            PathVerify => {
                if self.n != 3 {
                    return Err(bad("N", "the explicit path is built for N = 3"));
                }
                if self.l < 3 {
                    return Err(bad("L", "the explicit path needs L ≥ 3"));
                }
                let e = self.epsilon();
                if e >= spinchain_core::paths::epsilon_max() {
                    return Err(bad("epsilon", format!("must be below {}", spinchain_core::paths::epsilon_max())));
                }
            }
            _ => {}
        }
        Ok(())
    }
}
