//! Strapdown propagation and its linearization.
//!
//! Mean propagation over one step `dt` with gravity-free readings:
//!
//! ```text
//! R' = R exp((w - b_w) dt)      v' = v + R (a - b_a) dt      p' = p + v dt
//! ```
//!
//! Biases and the misalignment keep their mean; their noise is a per-step
//! random walk. Process noise enters as integrated increments over the step:
//! an angle `n_w` and a velocity `n_a` subtracted from the integrated
//! readings, bias increments `n_bw`, `n_ba`, and a misalignment increment
//! `n_r` applied as `R_bi exp(n_r)`. Each increment is a rate-level noise
//! held over the step, so with `Q` the per-sample variance of those rates the
//! increment covariance is `Q dt^2`.

use super::state::{block, set_block, FilterState, StateCovariance, NOISE_DIM, STATE_DIM};
use super::FilterError;
use crate::dataset::ImuSample;
use crate::geometry::{exp_so3, skew, Mat3, Vec3};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

pub type NoiseVector = SVector<f64, NOISE_DIM>;
pub type TransitionMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type NoiseJacobian = SMatrix<f64, STATE_DIM, NOISE_DIM>;

/// Per-sample noise variances in the order gyro (rad/s)^2, accel (m/s^2)^2,
/// gyro bias rate, accel bias rate, misalignment rate. One value per block,
/// applied to all three axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessNoise {
    pub gyro: f64,
    pub accel: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
    pub misalignment: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            gyro: 2e-4,
            accel: 1e-3,
            gyro_bias: 1e-6,
            accel_bias: 2e-5,
            misalignment: 1e-3,
        }
    }
}

impl ProcessNoise {
    pub fn diagonal(&self) -> NoiseVector {
        let v = [
            self.gyro,
            self.accel,
            self.gyro_bias,
            self.accel_bias,
            self.misalignment,
        ];
        NoiseVector::from_fn(|i, _| v[i / 3])
    }

    pub fn matrix(&self) -> SMatrix<f64, NOISE_DIM, NOISE_DIM> {
        SMatrix::from_diagonal(&self.diagonal())
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.diagonal().iter().all(|x| *x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(FilterError::Config(
                "process noise entries must be positive".into(),
            ))
        }
    }
}

fn vec3(w: &NoiseVector, at: usize) -> Vec3 {
    w.fixed_rows::<3>(at).into_owned()
}

/// Propagation with explicit noise increments (see module docs for their
/// meaning). With `noise = 0` this is the mean propagation.
pub fn propagate_with_noise(
    s: &FilterState,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseVector,
) -> FilterState {
    let omega = (imu.gyro - s.gyro_bias) * dt - vec3(noise, 0);
    let dv = s.rotation * ((imu.accel - s.accel_bias) * dt - vec3(noise, 3));
    FilterState {
        rotation: s.rotation * exp_so3(&omega),
        velocity: s.velocity + dv,
        position: s.position + s.velocity * dt,
        gyro_bias: s.gyro_bias + vec3(noise, 6),
        accel_bias: s.accel_bias + vec3(noise, 9),
        misalignment: s.misalignment * exp_so3(&vec3(noise, 12)),
    }
}

pub fn propagate(s: &FilterState, imu: &ImuSample, dt: f64) -> FilterState {
    let omega = (imu.gyro - s.gyro_bias) * dt;
    FilterState {
        rotation: s.rotation * exp_so3(&omega),
        velocity: s.velocity + s.rotation * ((imu.accel - s.accel_bias) * dt),
        position: s.position + s.velocity * dt,
        ..*s
    }
}

/// Left Jacobian of SO(3).
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let t = theta2.sqrt();
        ((1.0 - t.cos()) / theta2, (t - t.sin()) / (theta2 * t))
    };
    Mat3::identity() + k * a + k * k * b
}

/// Right Jacobian of SO(3), `J_l(phi)^T`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    left_jacobian(phi).transpose()
}

/// Transition `F` and noise `G` Jacobians of one propagation step, evaluated
/// at the pre-step mean `s`.
///
/// Block layout (rows/columns in error order rot, vel, pos, b_w, b_a, R_bi):
///
/// ```text
/// F = | E^T        0    0  -J dt  0      0 |
///     | -R (u)x    I    0  0      -R dt  0 |
///     | 0          I dt I  0      0      0 |
///     | 0          0    0  I      0      0 |
///     | ...                                |
///
/// G = | -J  0   0   |
///     | 0   -R  0   |
///     | 0   0   0   |
///     | 0   0   I_9 |
/// ```
///
/// with `phi = (w - b_w) dt`, `E = exp(phi)`, `J` the right Jacobian of
/// `phi` and `u = (a - b_a) dt`. These are the exact derivatives of the
/// discrete step.
pub fn jacobians(s: &FilterState, imu: &ImuSample, dt: f64) -> (TransitionMatrix, NoiseJacobian) {
    let phi = (imu.gyro - s.gyro_bias) * dt;
    let u = (imu.accel - s.accel_bias) * dt;
    let r = *s.rotation.matrix();
    let jr = right_jacobian(&phi);

    let mut f = TransitionMatrix::identity();
    set_block(
        &mut f,
        block::ROT,
        block::ROT,
        &exp_so3(&phi).matrix().transpose(),
    );
    set_block(&mut f, block::ROT, block::GYRO_BIAS, &(-jr * dt));
    set_block(&mut f, block::VEL, block::ROT, &(-r * skew(&u)));
    set_block(&mut f, block::VEL, block::ACCEL_BIAS, &(-r * dt));
    set_block(&mut f, block::POS, block::VEL, &(Mat3::identity() * dt));

    let mut g = NoiseJacobian::zeros();
    g.fixed_view_mut::<3, 3>(block::ROT, 0).copy_from(&-jr);
    g.fixed_view_mut::<3, 3>(block::VEL, 3).copy_from(&-r);
    for i in 0..9 {
        g[(block::GYRO_BIAS + i, 6 + i)] = 1.0;
    }
    (f, g)
}

/// `P' = F P F^T + G (Q dt^2) G^T`, symmetrized.
pub fn predict_covariance(
    s: &FilterState,
    imu: &ImuSample,
    p: &StateCovariance,
    q: &ProcessNoise,
    dt: f64,
) -> Result<StateCovariance, FilterError> {
    if p.iter().any(|x| !x.is_finite()) {
        return Err(FilterError::NonFiniteCovariance);
    }
    let (f, g) = jacobians(s, imu, dt);
    let gq = g * SMatrix::<f64, NOISE_DIM, NOISE_DIM>::from_diagonal(&(q.diagonal() * (dt * dt)));
    let next = f * p * f.transpose() + gq * g.transpose();
    Ok(super::state::symmetrize(&next))
}
