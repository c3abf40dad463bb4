//! Invariant EKF over orientation, velocity, position, IMU biases and the
//! IMU-to-body misalignment.

mod measurement;
mod propagation;
mod runner;
mod state;

pub use measurement::{
    build_pseudo_measurement, observation_model, update, PositionHistory, PseudoObservation,
};
pub use propagation::{
    jacobians, left_jacobian, predict_covariance, propagate, propagate_with_noise, right_jacobian,
    NoiseJacobian, NoiseVector, ProcessNoise, TransitionMatrix,
};
pub use runner::{run_sequence, run_sequence_with, FilterOutput, Iekf, InitialCondition};
pub use state::{
    block, init_state, min_eigenvalue, symmetrize, ErrorVector, FilterState, StateCovariance,
    NOISE_DIM, STATE_DIM,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("covariance has non-finite entries")]
    NonFiniteCovariance,
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("time step {dt} s before t_ns = {t_ns} is outside (0, 0.1]")]
    BadTimestep { t_ns: i64, dt: f64 },
    #[error("filter diverged at t_ns = {t_ns}: {reason}")]
    Diverged { t_ns: i64, reason: String },
}

/// Which rows of the body-velocity pseudo-measurement are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Forward speed plus null lateral and vertical velocity.
    #[default]
    Full,
    /// Null lateral and vertical velocity only.
    LateralVertical,
    /// No update at all; the filter reduces to plain strapdown integration.
    None,
}

/// Initial error-state variances per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialCovariance {
    pub rotation: f64,
    pub velocity: f64,
    pub position: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
    pub misalignment: f64,
}

impl Default for InitialCovariance {
    fn default() -> Self {
        Self {
            rotation: 1e-6,
            velocity: 1e-5,
            position: 0.0,
            gyro_bias: 1e-6,
            accel_bias: 1e-3,
            misalignment: 1e-5,
        }
    }
}

impl InitialCovariance {
    pub fn matrix(&self) -> StateCovariance {
        let v = [
            self.rotation,
            self.velocity,
            self.position,
            self.gyro_bias,
            self.accel_bias,
            self.misalignment,
        ];
        StateCovariance::from_diagonal(&ErrorVector::from_fn(|i, _| v[i / 3]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Baseline variances (forward, lateral, up), (m/s)^2.
    pub sigma0: [f64; 3],
    /// Averaging window for the forward speed, s.
    pub window_s: f64,
    /// Upper clamp on the forward speed, m/s.
    pub max_speed: f64,
    pub mode: ObservationMode,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            sigma0: [3.0, 2.0, 0.2],
            window_s: 5.0,
            max_speed: 2.0,
            mode: ObservationMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub initial_covariance: InitialCovariance,
    pub process_noise: ProcessNoise,
    pub measurement: MeasurementConfig,
    /// Nominal IMU rate, Hz.
    pub sample_rate_hz: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            initial_covariance: InitialCovariance::default(),
            process_noise: ProcessNoise::default(),
            measurement: MeasurementConfig::default(),
            sample_rate_hz: 200.0,
        }
    }
}

/// Steps between re-projections of the rotations onto SO(3).
pub const REPROJECT_EVERY: usize = 1000;

impl FilterConfig {
    pub fn with_mode(mut self, mode: ObservationMode) -> Self {
        self.measurement.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let p0 = self.initial_covariance.matrix();
        if p0.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(FilterError::Config(
                "initial variances must be finite and non-negative".into(),
            ));
        }
        self.process_noise.validate()?;
        let m = &self.measurement;
        if m.sigma0.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(FilterError::Config(
                "sigma0 entries must be positive".into(),
            ));
        }
        if !(m.window_s > 0.0 && m.window_s.is_finite()) {
            return Err(FilterError::Config("speed window must be positive".into()));
        }
        if !(m.max_speed > 0.0 && m.max_speed.is_finite()) {
            return Err(FilterError::Config("speed clamp must be positive".into()));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(FilterError::Config("sample rate must be positive".into()));
        }
        Ok(())
    }
}
