use crate::geometry::{exp_so3, log_so3, project_to_so3, GeometryError, Mat3, Rotation, Vec3};
use crate::sim::GroundTruthSample;
use nalgebra::{SMatrix, SVector};

pub const STATE_DIM: usize = 18;
pub const NOISE_DIM: usize = 15;

pub type ErrorVector = SVector<f64, STATE_DIM>;
pub type StateCovariance = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Offsets of the 3-vector blocks inside the error state.
pub mod block {
    pub const ROT: usize = 0;
    pub const VEL: usize = 3;
    pub const POS: usize = 6;
    pub const GYRO_BIAS: usize = 9;
    pub const ACCEL_BIAS: usize = 12;
    pub const MISALIGN: usize = 15;
}

/// Filter mean.
///
/// Errors around it are parameterized as
///
/// ```text
/// R   = R^ exp(xi_R)          v = v^ + xi_v               p = p^ + xi_p
/// b_w = b^_w + db_w           b_a = b^_a + db_a           R_bi = R^_bi exp(zeta)
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    /// IMU frame to world frame.
    pub rotation: Rotation,
    /// World velocity, m/s.
    pub velocity: Vec3,
    /// World position, m.
    pub position: Vec3,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    /// Body frame relative to the IMU frame (`R_b = R_i R_bi`).
    pub misalignment: Rotation,
}

fn sub3(d: &ErrorVector, at: usize) -> Vec3 {
    d.fixed_rows::<3>(at).into_owned()
}

impl FilterState {
    /// Orientation of the ideal body frame in the world.
    pub fn body_rotation(&self) -> Rotation {
        self.rotation * self.misalignment
    }

    /// Velocity expressed in the ideal body frame, `(R_i R_bi)^T v`.
    pub fn body_velocity(&self) -> Vec3 {
        self.misalignment.inverse() * (self.rotation.inverse() * self.velocity)
    }

    pub fn is_finite(&self) -> bool {
        let m = [self.rotation.matrix(), self.misalignment.matrix()];
        let v = [
            self.velocity,
            self.position,
            self.gyro_bias,
            self.accel_bias,
        ];
        m.iter().all(|x| x.iter().all(|e| e.is_finite()))
            && v.iter().all(|x| x.iter().all(|e| e.is_finite()))
    }

    /// Apply an error-state correction.
    pub fn retract(&self, d: &ErrorVector) -> FilterState {
        FilterState {
            rotation: self.rotation * exp_so3(&sub3(d, block::ROT)),
            velocity: self.velocity + sub3(d, block::VEL),
            position: self.position + sub3(d, block::POS),
            gyro_bias: self.gyro_bias + sub3(d, block::GYRO_BIAS),
            accel_bias: self.accel_bias + sub3(d, block::ACCEL_BIAS),
            misalignment: self.misalignment * exp_so3(&sub3(d, block::MISALIGN)),
        }
    }

    /// Inverse of [`retract`](Self::retract): the correction taking `self` to `other`.
    pub fn local(&self, other: &FilterState) -> Result<ErrorVector, GeometryError> {
        let e = self.rotation.inverse() * other.rotation;
        let mut d = ErrorVector::zeros();
        d.fixed_rows_mut::<3>(block::ROT).copy_from(&log_so3(&e)?);
        d.fixed_rows_mut::<3>(block::VEL)
            .copy_from(&(other.velocity - self.velocity));
        d.fixed_rows_mut::<3>(block::POS)
            .copy_from(&(other.position - self.position));
        d.fixed_rows_mut::<3>(block::GYRO_BIAS)
            .copy_from(&(other.gyro_bias - self.gyro_bias));
        d.fixed_rows_mut::<3>(block::ACCEL_BIAS)
            .copy_from(&(other.accel_bias - self.accel_bias));
        let m = self.misalignment.inverse() * other.misalignment;
        d.fixed_rows_mut::<3>(block::MISALIGN)
            .copy_from(&log_so3(&m)?);
        Ok(d)
    }

    /// Snap both rotations back onto SO(3).
    pub fn reproject(&mut self) -> Result<(), GeometryError> {
        self.rotation = project_to_so3(self.rotation.matrix())?;
        self.misalignment = project_to_so3(self.misalignment.matrix())?;
        Ok(())
    }
}

/// Initial mean from a pose and a world velocity.
///
/// The body frame starts with its x axis along the planar velocity, so the
/// misalignment is `R_i0^T R_b0`. Biases start at zero.
pub fn init_state(pose: &GroundTruthSample, v0: &Vec3) -> FilterState {
    let body = crate::geometry::heading_rotation(v0);
    FilterState {
        rotation: pose.orientation,
        velocity: *v0,
        position: pose.position,
        gyro_bias: Vec3::zeros(),
        accel_bias: Vec3::zeros(),
        misalignment: pose.orientation.inverse() * body,
    }
}

pub fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(p: &StateCovariance) -> f64 {
    symmetrize(p).symmetric_eigenvalues().min()
}

pub(crate) fn set_block(m: &mut StateCovariance, row: usize, col: usize, b: &Mat3) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::heading_rotation;
    use approx::assert_relative_eq;

    fn pose(r: Rotation) -> GroundTruthSample {
        GroundTruthSample {
            t_ns: 0,
            position: Vec3::new(1.0, 2.0, 0.0),
            orientation: r,
            velocity: Vec3::zeros(),
        }
    }

    #[test]
    fn init_with_identity_orientation() {
        let v0 = Vec3::new(3.0, 4.0, 1.0);
        let s = init_state(&pose(Rotation::identity()), &v0);
        assert_eq!(s.misalignment, heading_rotation(&v0));
        assert_eq!(s.velocity, v0);
        assert_eq!(s.gyro_bias, Vec3::zeros());
        assert_relative_eq!(s.body_velocity(), Vec3::new(5.0, 0.0, 1.0), epsilon = 1e-14);
    }

    #[test]
    fn init_at_rest() {
        let r = exp_so3(&Vec3::new(0.2, -0.1, 0.7));
        let s = init_state(&pose(r), &Vec3::zeros());
        assert_eq!(s.misalignment, r.inverse());
    }

    #[test]
    fn init_already_aligned() {
        let v0 = Vec3::new(0.0, 1.0, 0.0);
        let s = init_state(&pose(heading_rotation(&v0)), &v0);
        assert_relative_eq!(*s.misalignment.matrix(), Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn retract_local_round_trip() {
        let s = FilterState {
            rotation: exp_so3(&Vec3::new(0.3, -0.2, 1.0)),
            velocity: Vec3::new(1.0, 0.5, -0.1),
            position: Vec3::new(4.0, -3.0, 0.2),
            gyro_bias: Vec3::new(0.01, 0.0, -0.02),
            accel_bias: Vec3::new(0.1, 0.2, 0.3),
            misalignment: exp_so3(&Vec3::new(-0.5, 0.1, 0.4)),
        };
        let d = ErrorVector::from_fn(|i, _| ((i as f64) * 0.37).sin() * 0.1);
        let back = s.local(&s.retract(&d)).unwrap();
        assert_relative_eq!(back, d, epsilon = 1e-13);
        assert_eq!(s.retract(&ErrorVector::zeros()), s);
    }
}
