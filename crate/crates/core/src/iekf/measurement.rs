//! Body-velocity pseudo-measurements and the Kalman update.

use super::state::{block, ErrorVector, FilterState, StateCovariance, STATE_DIM};
use super::{FilterError, MeasurementConfig, ObservationMode};
use crate::geometry::{skew, Vec3};
use nalgebra::{SMatrix, SVector};
use std::collections::VecDeque;

/// Fallback window before one second of history exists.
const MIN_WINDOW_NS: i64 = 1_000_000_000;

fn planar_norm(d: &Vec3) -> f64 {
    d.x.hypot(d.y)
}

/// Recent positions with the planar path length walked up to each, oldest
/// first.
#[derive(Debug, Clone)]
pub struct PositionHistory {
    window_ns: i64,
    start_ns: Option<i64>,
    entries: VecDeque<(i64, Vec3, f64)>,
}

impl PositionHistory {
    pub fn new(window_s: f64) -> Self {
        Self {
            window_ns: (window_s * 1e9).round() as i64,
            start_ns: None,
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t_ns: i64, position: Vec3) {
        self.start_ns.get_or_insert(t_ns);
        let walked = self.walked_to(&position);
        self.entries.push_back((t_ns, position, walked));
        while let Some(&(t0, _, _)) = self.entries.front() {
            if t0 < t_ns - self.window_ns {
                self.entries.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Path length from the first entry to `position` via the newest entry.
    fn walked_to(&self, position: &Vec3) -> f64 {
        self.entries
            .back()
            .map_or(0.0, |(_, p, s)| s + planar_norm(&(position - p)))
    }

    /// Time and path length of the oldest entry no older than the window, as
    /// seen from `t_ns`.
    fn reference(&self, t_ns: i64) -> Option<(i64, f64)> {
        let cutoff = t_ns - self.window_ns;
        self.entries
            .iter()
            .find(|(t, _, _)| *t >= cutoff)
            .map(|&(t, _, s)| (t, s))
    }
}

/// A pseudo-observation of the body-frame velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoObservation {
    /// `[forward speed, 0, 0]`, m/s.
    pub y: Vec3,
    /// Diagonal of the measurement covariance, (m/s)^2.
    pub noise: Vec3,
}

/// Forward speed from the average planar speed over the recent window: the
/// planar path length walked since the reference entry divided by the
/// elapsed time.
///
/// `position` is the current position at `t_ns`. With less than a second
/// of history the planar norm of `v0` stands in. The result is clamped to
/// `[0, max_speed]`.
pub fn build_pseudo_measurement(
    history: &PositionHistory,
    position: &Vec3,
    t_ns: i64,
    v0: &Vec3,
    cfg: &MeasurementConfig,
) -> Vec3 {
    let elapsed = history.start_ns.map_or(0, |s| t_ns - s);
    let speed = match history.reference(t_ns) {
        Some((t_ref, s_ref)) if elapsed >= MIN_WINDOW_NS && t_ns > t_ref => {
            (history.walked_to(position) - s_ref) / ((t_ns - t_ref) as f64 * 1e-9)
        }
        _ => planar_norm(v0),
    };
    Vec3::new(speed.clamp(0.0, cfg.max_speed), 0.0, 0.0)
}

/// Predicted body velocity and its Jacobian with respect to the error state.
///
/// `y^ = (R_i R_bi)^T v`; the rotation, velocity and misalignment blocks
/// are `R_bi^T (R_i^T v)x`, `(R_i R_bi)^T` and `(y^)x`.
pub fn observation_model(s: &FilterState) -> (Vec3, SMatrix<f64, 3, STATE_DIM>) {
    let rb_t = s.body_rotation().inverse();
    let y_hat = rb_t * s.velocity;
    let v_imu = s.rotation.inverse() * s.velocity;
    let mut h = SMatrix::<f64, 3, STATE_DIM>::zeros();
    h.fixed_view_mut::<3, 3>(0, block::ROT)
        .copy_from(&(s.misalignment.inverse().matrix() * skew(&v_imu)));
    h.fixed_view_mut::<3, 3>(0, block::VEL)
        .copy_from(rb_t.matrix());
    h.fixed_view_mut::<3, 3>(0, block::MISALIGN)
        .copy_from(&skew(&y_hat));
    (y_hat, h)
}

fn kalman_update<const M: usize>(
    s: &FilterState,
    p: &StateCovariance,
    h: &SMatrix<f64, M, STATE_DIM>,
    residual: &SVector<f64, M>,
    noise: &SVector<f64, M>,
) -> Result<(FilterState, StateCovariance), FilterError> {
    let n = SMatrix::<f64, M, M>::from_diagonal(noise);
    let ph_t = p * h.transpose();
    let innovation = h * ph_t + n;
    if innovation.iter().any(|x| !x.is_finite()) {
        return Err(FilterError::NonFiniteCovariance);
    }
    let chol = innovation
        .cholesky()
        .ok_or(FilterError::SingularInnovation)?;
    let k = chol.solve(&ph_t.transpose()).transpose();
    let delta: ErrorVector = k * residual;
    let i_kh = StateCovariance::identity() - k * h;
    let joseph = i_kh * p * i_kh.transpose() + k * n * k.transpose();
    Ok((s.retract(&delta), super::state::symmetrize(&joseph)))
}

/// One Kalman update against `obs`, restricted to the rows `mode` keeps.
pub fn update(
    s: &FilterState,
    p: &StateCovariance,
    obs: &PseudoObservation,
    mode: ObservationMode,
) -> Result<(FilterState, StateCovariance), FilterError> {
    if obs.noise.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(FilterError::Config(
            "measurement noise must be positive".into(),
        ));
    }
    let (y_hat, h) = observation_model(s);
    let r = obs.y - y_hat;
    match mode {
        ObservationMode::Full => kalman_update(s, p, &h, &r, &obs.noise),
        ObservationMode::LateralVertical => {
            let h2 = h.fixed_rows::<2>(1).into_owned();
            let r2 = r.fixed_rows::<2>(1).into_owned();
            let n2 = obs.noise.fixed_rows::<2>(1).into_owned();
            kalman_update(s, p, &h2, &r2, &n2)
        }
        ObservationMode::None => Ok((*s, *p)),
    }
}
