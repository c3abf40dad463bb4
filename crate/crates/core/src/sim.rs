//! Synthetic pedestrian walks and the IMU streams they would produce.
//!
//! Walks are planar: piecewise constant turn rate, with the speed blended
//! linearly into each new segment so the velocity stays continuous. The body
//! x axis follows the walking heading; the phone (IMU frame) hangs off the
//! body with a fixed mounting rotation.

use crate::dataset::ImuSample;
use crate::geometry::{exp_so3, log_so3, GeometryError, Rotation, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fastest walking speed accepted in a segment, m/s.
pub const MAX_WALKING_SPEED: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trajectory has no segments")]
    NoSegments,
    #[error("segment {index}: {reason}")]
    BadSegment { index: usize, reason: String },
    #[error("invalid trajectory spec: {0}")]
    BadSpec(String),
    #[error("need at least two ground-truth samples, got {0}")]
    TooShort(usize),
    #[error("timestamps are not uniform at sample {index}")]
    NonUniform { index: usize },
    #[error("invalid noise spec: {0}")]
    BadNoise(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Seconds.
    pub duration: f64,
    /// Planar speed reached in this segment, m/s.
    pub speed: f64,
    /// Heading rate, rad/s (positive turns left, about world +z).
    #[serde(default)]
    pub turn_rate: f64,
}

fn default_rate() -> f64 {
    200.0
}

fn default_ramp() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub segments: Vec<Segment>,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub initial_position: Vec3,
    /// Initial walking heading, rad from world x.
    #[serde(default)]
    pub initial_heading: f64,
    /// Rotation vector of the body-to-IMU rotation (phone held at an angle).
    #[serde(default)]
    pub imu_mount: Vec3,
    /// Time over which speed blends into a new segment's value, s.
    #[serde(default = "default_ramp")]
    pub speed_ramp_s: f64,
}

impl TrajectorySpec {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self {
            segments,
            sample_rate_hz: default_rate(),
            initial_position: Vec3::zeros(),
            initial_heading: 0.0,
            imu_mount: Vec3::zeros(),
            speed_ramp_s: default_ramp(),
        }
    }

    pub fn with_rate(mut self, hz: f64) -> Self {
        self.sample_rate_hz = hz;
        self
    }

    pub fn with_mount(mut self, rotvec: Vec3) -> Self {
        self.imu_mount = rotvec;
        self
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Body-to-IMU rotation, the true value of the filter's misalignment state.
    pub fn mount_rotation(&self) -> Rotation {
        exp_so3(&self.imu_mount)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.segments.is_empty() {
            return Err(SimError::NoSegments);
        }
        for (index, s) in self.segments.iter().enumerate() {
            let bad = |reason: &str| SimError::BadSegment {
                index,
                reason: reason.into(),
            };
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return Err(bad("duration must be positive"));
            }
            if !(0.0..=MAX_WALKING_SPEED).contains(&s.speed) {
                return Err(bad("speed must lie in [0, 2] m/s"));
            }
            if !s.turn_rate.is_finite() {
                return Err(bad("turn rate must be finite"));
            }
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(SimError::BadSpec("sample rate must be positive".into()));
        }
        if !(self.speed_ramp_s >= 0.0) {
            return Err(SimError::BadSpec("speed ramp must be non-negative".into()));
        }
        if self.imu_mount.iter().any(|x| !x.is_finite()) || self.imu_mount.norm() >= 3.0 {
            return Err(SimError::BadSpec(
                "IMU mount rotation vector must have norm < 3".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthSample {
    pub t_ns: i64,
    /// World position, m.
    pub position: Vec3,
    /// IMU frame to world frame.
    pub orientation: Rotation,
    /// World velocity, m/s.
    pub velocity: Vec3,
}

impl GroundTruthSample {
    pub fn t_s(&self) -> f64 {
        self.t_ns as f64 * 1e-9
    }
}

/// Noise injected into synthetic IMU readings.
///
/// White noise is given per sample. Bias random walks are given per square
/// root second, so a step of `dt` seconds adds `N(0, (rw * sqrt(dt))^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ImuNoiseSpec {
    #[serde(default)]
    pub gyro_white_std: f64,
    #[serde(default)]
    pub accel_white_std: f64,
    #[serde(default)]
    pub gyro_bias_walk_std: f64,
    #[serde(default)]
    pub accel_bias_walk_std: f64,
    #[serde(default)]
    pub gyro_bias_initial: Vec3,
    #[serde(default)]
    pub accel_bias_initial: Vec3,
}

impl ImuNoiseSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    /// Noise at the filter's process-noise levels.
    ///
    /// Each argument is the per-sample variance of a rate-level noise term:
    /// the gyro and accel readings get white noise of that variance, and the
    /// biases move by `w * dt` per step with `w` of that variance.
    pub fn from_sample_variances(
        gyro: f64,
        accel: f64,
        gyro_bias: f64,
        accel_bias: f64,
        rate_hz: f64,
    ) -> Self {
        Self {
            gyro_white_std: gyro.sqrt(),
            accel_white_std: accel.sqrt(),
            gyro_bias_walk_std: (gyro_bias / rate_hz).sqrt(),
            accel_bias_walk_std: (accel_bias / rate_hz).sqrt(),
            ..Self::default()
        }
    }

    pub fn with_initial_biases(mut self, gyro: Vec3, accel: Vec3) -> Self {
        self.gyro_bias_initial = gyro;
        self.accel_bias_initial = accel;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        let stds = [
            self.gyro_white_std,
            self.accel_white_std,
            self.gyro_bias_walk_std,
            self.accel_bias_walk_std,
        ];
        if stds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(SimError::BadNoise(
                "standard deviations must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Heading and position along one segment in closed form.
struct SegmentState {
    heading: f64,
    position: Vec3,
}

/// Speed at time `tau` into a segment that starts at `v_start`.
fn ramp_speed(v_start: f64, v_end: f64, ramp: f64, tau: f64) -> f64 {
    if ramp <= 0.0 || tau >= ramp {
        v_end
    } else {
        v_start + (v_end - v_start) * tau / ramp
    }
}

/// Planar displacement of `integral_0^tau (s0 + k t) [cos, sin](h0 + w t) dt`.
fn arc_displacement(h0: f64, w: f64, s0: f64, k: f64, tau: f64) -> (f64, f64) {
    // complex form: z(t) = exp(i (h0 + w t))
    let (c0, s0h) = (h0.cos(), h0.sin());
    if (w * tau).abs() < 1e-6 {
        // series to second order in w
        let i0 = (tau, w * tau * tau / 2.0); // integral of z/z0, real & imag parts
        let i1 = (tau * tau / 2.0, w * tau.powi(3) / 3.0); // integral of t z/z0
        let re = s0 * i0.0 + k * i1.0;
        let im = s0 * i0.1 + k * i1.1;
        return (c0 * re - s0h * im, s0h * re + c0 * im);
    }
    let (c1, s1) = ((h0 + w * tau).cos(), (h0 + w * tau).sin());
    // integral z dt = (z1 - z0) / (i w) = -i (z1 - z0) / w
    let dz = (c1 - c0, s1 - s0h);
    let int_z = (dz.1 / w, -dz.0 / w);
    // integral t z dt = tau z1 / (i w) - (z1 - z0) / (i w)^2 = -i tau z1 / w + (z1 - z0) / w^2
    let int_tz = (
        tau * s1 / w + dz.0 / (w * w),
        -tau * c1 / w + dz.1 / (w * w),
    );
    (s0 * int_z.0 + k * int_tz.0, s0 * int_z.1 + k * int_tz.1)
}

/// Sample a walk at the spec's rate. The last sample lands on or before the
/// total duration.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Vec<GroundTruthSample>, SimError> {
    spec.validate()?;
    let mount_t = spec.mount_rotation().inverse();
    let period_ns = 1e9 / spec.sample_rate_hz;
    let total = spec.duration();
    let n = (total * spec.sample_rate_hz + 1e-9).floor() as usize + 1;

    // segment start states
    let mut starts = Vec::with_capacity(spec.segments.len());
    let mut state = SegmentState {
        heading: spec.initial_heading,
        position: spec.initial_position,
    };
    let mut t0 = 0.0;
    let mut prev_speed = spec.segments[0].speed;
    for seg in &spec.segments {
        starts.push((t0, prev_speed, state.heading, state.position));
        let ramp = spec.speed_ramp_s.min(seg.duration);
        state = advance(&state, seg, prev_speed, ramp, seg.duration);
        t0 += seg.duration;
        prev_speed = seg.speed;
    }

    let mut out = Vec::with_capacity(n);
    let mut seg_idx = 0;
    for i in 0..n {
        let t_ns = (i as f64 * period_ns).round() as i64;
        let t = t_ns as f64 * 1e-9;
        while seg_idx + 1 < spec.segments.len() && t >= starts[seg_idx + 1].0 {
            seg_idx += 1;
        }
        let seg = &spec.segments[seg_idx];
        let (seg_t0, v_start, h0, p0) = starts[seg_idx];
        let tau = (t - seg_t0).max(0.0);
        let ramp = spec.speed_ramp_s.min(seg.duration);
        let st = advance(
            &SegmentState {
                heading: h0,
                position: p0,
            },
            seg,
            v_start,
            ramp,
            tau,
        );
        let speed = ramp_speed(v_start, seg.speed, ramp, tau);
        let body = Rotation::from_axis_angle(&Vec3::z_axis(), st.heading);
        out.push(GroundTruthSample {
            t_ns,
            position: st.position,
            orientation: body * mount_t,
            velocity: Vec3::new(speed * st.heading.cos(), speed * st.heading.sin(), 0.0),
        });
    }
    Ok(out)
}

fn advance(start: &SegmentState, seg: &Segment, v_start: f64, ramp: f64, tau: f64) -> SegmentState {
    let w = seg.turn_rate;
    let mut pos = start.position;
    let ramp_len = ramp.min(tau);
    // ramp phase: linear speed
    let k = if ramp > 0.0 {
        (seg.speed - v_start) / ramp
    } else {
        0.0
    };
    let (dx, dy) = arc_displacement(start.heading, w, v_start, k, ramp_len);
    pos.x += dx;
    pos.y += dy;
    let h_mid = start.heading + w * ramp_len;
    let cruise = tau - ramp_len;
    if cruise > 0.0 {
        let (dx, dy) = arc_displacement(h_mid, w, seg.speed, 0.0, cruise);
        pos.x += dx;
        pos.y += dy;
    }
    SegmentState {
        heading: start.heading + w * tau,
        position: pos,
    }
}

/// IMU stream plus the bias trajectories that were injected into it.
#[derive(Debug, Clone)]
pub struct SyntheticImu {
    pub samples: Vec<ImuSample>,
    pub gyro_bias: Vec<Vec3>,
    pub accel_bias: Vec<Vec3>,
    pub seed: u64,
}

/// Noise-free gyro and linear-acceleration readings implied by `gt`.
///
/// Sample `n` describes the motion from `n` to `n + 1`: the gyro is the
/// finite rotation `R_n^T R_{n+1}` over the step and the acceleration is the
/// velocity difference expressed in the IMU frame. The last sample repeats
/// the one before it.
pub fn true_imu(gt: &[GroundTruthSample]) -> Result<Vec<ImuSample>, SimError> {
    if gt.len() < 2 {
        return Err(SimError::TooShort(gt.len()));
    }
    check_uniform(gt)?;
    let mut out = Vec::with_capacity(gt.len());
    for pair in gt.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = (b.t_ns - a.t_ns) as f64 * 1e-9;
        let rel = a.orientation.inverse() * b.orientation;
        let gyro = log_so3(&rel)? / dt;
        let accel = a.orientation.inverse() * ((b.velocity - a.velocity) / dt);
        out.push(ImuSample {
            t_ns: a.t_ns,
            gyro,
            accel,
        });
    }
    let last = *out.last().unwrap();
    out.push(ImuSample {
        t_ns: gt[gt.len() - 1].t_ns,
        ..last
    });
    Ok(out)
}

fn check_uniform(gt: &[GroundTruthSample]) -> Result<(), SimError> {
    let step = gt[1].t_ns - gt[0].t_ns;
    if step <= 0 {
        return Err(SimError::NonUniform { index: 1 });
    }
    let tol = 1 + step / 1_000_000;
    for (i, pair) in gt.windows(2).enumerate() {
        if ((pair[1].t_ns - pair[0].t_ns) - step).abs() > tol {
            return Err(SimError::NonUniform { index: i + 1 });
        }
    }
    Ok(())
}

/// Corrupt the true readings with white noise and random-walk biases:
/// `measured = true + bias_n + white_n`, `bias_{n+1} = bias_n + walk_n`.
pub fn synthesize_imu(
    gt: &[GroundTruthSample],
    noise: &ImuNoiseSpec,
    seed: u64,
) -> Result<SyntheticImu, SimError> {
    noise.validate()?;
    let clean = true_imu(gt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal3 = |rng: &mut ChaCha8Rng| {
        Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        )
    };
    let mut bg = noise.gyro_bias_initial;
    let mut ba = noise.accel_bias_initial;
    let mut samples = Vec::with_capacity(clean.len());
    let mut gyro_bias = Vec::with_capacity(clean.len());
    let mut accel_bias = Vec::with_capacity(clean.len());
    for (i, s) in clean.iter().enumerate() {
        let wg = normal3(&mut rng) * noise.gyro_white_std;
        let wa = normal3(&mut rng) * noise.accel_white_std;
        samples.push(ImuSample {
            t_ns: s.t_ns,
            gyro: s.gyro + bg + wg,
            accel: s.accel + ba + wa,
        });
        gyro_bias.push(bg);
        accel_bias.push(ba);
        let dt = match clean.get(i + 1) {
            Some(next) => (next.t_ns - s.t_ns) as f64 * 1e-9,
            None => 0.0,
        };
        let sq = dt.sqrt();
        bg += normal3(&mut rng) * (noise.gyro_bias_walk_std * sq);
        ba += normal3(&mut rng) * (noise.accel_bias_walk_std * sq);
    }
    Ok(SyntheticImu {
        samples,
        gyro_bias,
        accel_bias,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_of;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn seg(duration: f64, speed: f64, turn_rate: f64) -> Segment {
        Segment {
            duration,
            speed,
            turn_rate,
        }
    }

    #[test]
    fn straight_walk_end_position() {
        let gt = generate_trajectory(&TrajectorySpec::new(vec![seg(10.0, 1.2, 0.0)])).unwrap();
        assert_eq!(gt.len(), 2001);
        assert_relative_eq!(
            gt.last().unwrap().position,
            Vec3::new(12.0, 0.0, 0.0),
            epsilon = 1e-12
        );
        assert!(gt.iter().all(|s| s.velocity.z == 0.0));
    }

    #[test]
    fn full_circle_closes() {
        let gt = generate_trajectory(&TrajectorySpec::new(vec![seg(10.0, 1.0, 2.0 * PI / 10.0)]))
            .unwrap();
        let (first, last) = (gt[0], gt[gt.len() - 1]);
        assert!((last.position - first.position).norm() < 1e-6);
    }

    #[test]
    fn in_place_turn_rotates_heading() {
        let spec = TrajectorySpec::new(vec![
            seg(5.0, 1.0, 0.0),
            seg(2.0, 0.0, FRAC_PI_2 / 2.0),
            seg(5.0, 1.0, 0.0),
        ]);
        let gt = generate_trajectory(&spec).unwrap();
        let yaw_end = yaw_of(&gt.last().unwrap().orientation);
        assert_relative_eq!(yaw_end, FRAC_PI_2, epsilon = 1e-12);
        let v = gt.last().unwrap().velocity;
        assert_relative_eq!(v, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn velocity_is_continuous_and_matches_positions() {
        let spec = TrajectorySpec::new(vec![
            seg(3.0, 1.0, 0.3),
            seg(3.0, 1.6, -0.5),
            seg(2.0, 0.4, 0.0),
        ]);
        let gt = generate_trajectory(&spec).unwrap();
        for w in gt.windows(3) {
            // central difference of the closed-form positions
            let dt = (w[2].t_ns - w[0].t_ns) as f64 * 1e-9;
            let fd = (w[2].position - w[0].position) / dt;
            assert!(
                (fd - w[1].velocity).norm() < 1e-2,
                "{fd} vs {}",
                w[1].velocity
            );
            assert!((w[1].velocity - w[0].velocity).norm() < 0.02);
        }
    }

    #[test]
    fn mount_fixes_misalignment() {
        let mount = Vec3::new(0.2, -0.4, 0.9);
        let spec = TrajectorySpec::new(vec![seg(4.0, 1.0, 0.4)]).with_mount(mount);
        let gt = generate_trajectory(&spec).unwrap();
        let expected = exp_so3(&mount);
        for s in gt.iter().step_by(97) {
            let body =
                Rotation::from_axis_angle(&Vec3::z_axis(), yaw_of(&(s.orientation * expected)));
            let r_bi = s.orientation.inverse() * body;
            assert_relative_eq!(*r_bi.matrix(), *expected.matrix(), epsilon = 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            generate_trajectory(&TrajectorySpec::new(vec![])),
            Err(SimError::NoSegments)
        ));
        assert!(generate_trajectory(&TrajectorySpec::new(vec![seg(1.0, 2.5, 0.0)])).is_err());
        assert!(generate_trajectory(&TrajectorySpec::new(vec![seg(0.0, 1.0, 0.0)])).is_err());
    }

    #[test]
    fn constant_velocity_reads_zero() {
        let gt = generate_trajectory(
            &TrajectorySpec::new(vec![seg(5.0, 1.3, 0.0)]).with_mount(Vec3::new(0.3, 0.1, -0.2)),
        )
        .unwrap();
        let imu = synthesize_imu(&gt, &ImuNoiseSpec::noiseless(), 1).unwrap();
        for s in &imu.samples {
            assert!(s.gyro.amax() <= 1e-9 && s.accel.amax() <= 1e-9);
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let gt = generate_trajectory(&TrajectorySpec::new(vec![seg(2.0, 1.0, 0.5)])).unwrap();
        let noise = ImuNoiseSpec::from_sample_variances(2e-4, 1e-3, 1e-6, 2e-5, 200.0);
        let a = synthesize_imu(&gt, &noise, 7).unwrap();
        let b = synthesize_imu(&gt, &noise, 7).unwrap();
        let c = synthesize_imu(&gt, &noise, 8).unwrap();
        let bits = |s: &SyntheticImu| -> Vec<u64> {
            s.samples
                .iter()
                .flat_map(|x| {
                    x.gyro
                        .iter()
                        .chain(x.accel.iter())
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn sample_variance_levels() {
        let n = ImuNoiseSpec::from_sample_variances(4e-4, 1e-2, 1e-6, 4e-6, 100.0);
        assert_relative_eq!(n.gyro_white_std, 0.02, epsilon = 1e-15);
        assert_relative_eq!(n.accel_white_std, 0.1, epsilon = 1e-15);
        // per-step bias increment std is sqrt(q) * dt
        assert_relative_eq!(
            n.gyro_bias_walk_std * 0.01f64.sqrt(),
            1e-3 * 0.01,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            n.accel_bias_walk_std * 0.01f64.sqrt(),
            2e-3 * 0.01,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rejects_non_uniform_timestamps() {
        let mut gt = generate_trajectory(&TrajectorySpec::new(vec![seg(1.0, 1.0, 0.0)])).unwrap();
        gt[10].t_ns += 1_000_000;
        assert!(matches!(true_imu(&gt), Err(SimError::NonUniform { .. })));
        assert!(matches!(true_imu(&gt[..1]), Err(SimError::TooShort(1))));
    }

    #[test]
    fn white_noise_is_zero_mean_about_the_bias() {
        let gt = generate_trajectory(&TrajectorySpec::new(vec![seg(500.0, 1.0, 0.05)])).unwrap();
        let noise = ImuNoiseSpec {
            accel_white_std: 0.3,
            accel_bias_walk_std: 0.01,
            accel_bias_initial: Vec3::new(0.1, -0.2, 0.05),
            ..ImuNoiseSpec::default()
        };
        let clean = true_imu(&gt).unwrap();
        let noisy = synthesize_imu(&gt, &noise, 42).unwrap();
        let n = 100_000;
        let mut mean = Vec3::zeros();
        for i in 0..n {
            mean += noisy.samples[i].accel - clean[i].accel - noisy.accel_bias[i];
        }
        mean /= n as f64;
        let bound = 3.0 * 0.3 / (n as f64).sqrt();
        assert!(mean.amax() < bound, "{mean} vs {bound}");
    }

    #[test]
    fn bias_increments_have_the_requested_spread() {
        let gt = generate_trajectory(&TrajectorySpec::new(vec![seg(500.1, 1.0, 0.0)])).unwrap();
        let noise = ImuNoiseSpec {
            gyro_bias_walk_std: 0.002,
            ..ImuNoiseSpec::default()
        };
        let out = synthesize_imu(&gt, &noise, 3).unwrap();
        let dt: f64 = 0.005;
        let expected_std = 0.002 * dt.sqrt();
        let incs: Vec<f64> = out
            .gyro_bias
            .windows(2)
            .take(100_000)
            .map(|w| w[1].x - w[0].x)
            .collect();
        let n = incs.len() as f64;
        let mean = incs.iter().sum::<f64>() / n;
        let var = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // two-sided 1% bands: mean ~ N(0, s^2/n), var/s^2 ~ 1 +- sqrt(2/n)
        assert!(mean.abs() < 2.576 * expected_std / n.sqrt());
        assert!((var / expected_std.powi(2) - 1.0).abs() < 2.576 * (2.0 / n).sqrt());
        // lag-one correlation of i.i.d. increments is ~N(0, 1/n)
        let lag: f64 = incs
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / ((n - 1.0) * var);
        assert!(lag.abs() < 2.576 / n.sqrt());
    }
}
