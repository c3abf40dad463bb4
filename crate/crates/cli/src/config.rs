//! TOML inputs: the filter configuration and the simulation spec.

use crate::error::CliError;
use pdr_core::iekf::{FilterConfig, InitialCovariance, MeasurementConfig, ProcessNoise};
use pdr_core::sim::{ImuNoiseSpec, TrajectorySpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Filter settings plus an optional adapter choice.
///
/// ```toml
/// adapter = "constant"          # or a weight-file path
/// sample_rate_hz = 200
///
/// [initial_covariance]
/// rotation = 1e-6
///
/// [process_noise]
/// accel = 1e-3
///
/// [measurement]
/// sigma0 = [3.0, 2.0, 0.2]
/// mode = "full"                 # full | lateral_vertical | none
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub adapter: Option<String>,
    pub sample_rate_hz: f64,
    pub initial_covariance: InitialCovariance,
    pub process_noise: ProcessNoise,
    pub measurement: MeasurementConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_filter(None, &FilterConfig::default())
    }
}

impl RunConfig {
    fn from_filter(adapter: Option<String>, f: &FilterConfig) -> Self {
        Self {
            adapter,
            sample_rate_hz: f.sample_rate_hz,
            initial_covariance: f.initial_covariance,
            process_noise: f.process_noise,
            measurement: f.measurement,
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            initial_covariance: self.initial_covariance,
            process_noise: self.process_noise,
            measurement: self.measurement,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// What `simulate` generates.
///
/// ```toml
/// seed = 7
///
/// [trajectory]
/// imu_mount = [0.4, -0.2, 1.2]
/// segments = [
///   { duration = 20.0, speed = 1.2 },
///   { duration = 8.0, speed = 1.1, turn_rate = 0.196 },
/// ]
///
/// [noise]
/// accel_white_std = 0.03
/// accel_bias_initial = [0.03, -0.02, 0.01]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub seed: u64,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub noise: ImuNoiseSpec,
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = match path {
        Some(p) => read_toml(p)?,
        None => RunConfig::default(),
    };
    cfg.filter().validate()?;
    Ok(cfg)
}

pub fn load_simulation_spec(path: &Path) -> Result<SimulationSpec, CliError> {
    read_toml(path)
}
