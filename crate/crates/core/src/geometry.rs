//! SO(3) primitives used throughout the filter.
//!
//! Rotations are stored as matrices. Quaternions only show up at the file
//! boundary (pose CSVs) and in tests.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Rotation = Rotation3<f64>;

/// Below this angle `exp_so3` switches to the truncated series.
const SMALL_ANGLE: f64 = 1e-8;
/// Planar speeds below this give an identity heading.
pub const HEADING_MIN_SPEED: f64 = 1e-3;
/// `log_so3` refuses rotations closer than this to pi.
const NEAR_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    NearPi { angle: f64 },
    #[error("matrix determinant {det} is not positive")]
    NonPositiveDeterminant { det: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Cross-product matrix: `skew(v) * u == v.cross(&u)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula for a rotation vector (radians).
pub fn exp_so3(w: &Vec3) -> Rotation {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation::from_matrix_unchecked(Mat3::identity() + k * a + k * k * b)
}

/// Inverse of [`exp_so3`] for rotation angles below `pi - 1e-6`.
pub fn log_so3(r: &Rotation) -> Result<Vec3, GeometryError> {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta > std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(GeometryError::NearPi { angle: theta });
    }
    let vee = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    // sin(theta)/theta -> 1, so the half-vee is already the rotation vector
    let scale = if theta < 1e-5 {
        0.5 * (1.0 + theta * theta / 6.0)
    } else {
        0.5 * theta / theta.sin()
    };
    Ok(vee * scale)
}

/// Closest rotation in Frobenius norm, via the polar decomposition.
pub fn project_to_so3(m: &Mat3) -> Result<Rotation, GeometryError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let det = m.determinant();
    if det <= 0.0 {
        return Err(GeometryError::NonPositiveDeterminant { det });
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    Ok(Rotation::from_matrix_unchecked(u * v_t))
}

/// Yaw-only rotation whose x axis points along the planar part of `v0`.
///
/// The returned `R` satisfies `R^T v0 = [|v0_xy|, 0, v0_z]`. Below
/// [`HEADING_MIN_SPEED`] there is no meaningful heading and identity is
/// returned.
pub fn heading_rotation(v0: &Vec3) -> Rotation {
    let planar = v0.x.hypot(v0.y);
    if planar < HEADING_MIN_SPEED {
        return Rotation::identity();
    }
    let (c, s) = (v0.x / planar, v0.y / planar);
    Rotation::from_matrix_unchecked(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Yaw angle of the rotation's x axis projected onto the horizontal plane.
pub fn yaw_of(r: &Rotation) -> f64 {
    let m = r.matrix();
    m[(1, 0)].atan2(m[(0, 0)])
}

/// Frobenius distance of `R^T R` from identity.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

/// Hamilton quaternion, w-first, to rotation matrix. The input is normalized.
pub fn rotation_from_wxyz(q: [f64; 4]) -> Rotation {
    let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    uq.to_rotation_matrix()
}

/// Rotation matrix to a Hamilton quaternion `[w, x, y, z]` with `w >= 0`.
pub fn wxyz_from_rotation(r: &Rotation) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let c = q.quaternion().coords; // (x, y, z, w)
    let s = if c.w < 0.0 { -1.0 } else { 1.0 };
    [s * c.w, s * c.x, s * c.y, s * c.z]
}
