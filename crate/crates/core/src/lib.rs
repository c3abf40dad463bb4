//! Pedestrian dead reckoning from phone IMU signals.
//!
//! An invariant EKF integrates gyro and gravity-free acceleration and is
//! corrected by body-frame velocity pseudo-measurements: the walker moves
//! along the body x axis at roughly its recent average speed, with no
//! lateral or vertical motion. The measurement covariance comes from a
//! [`adapter::NoiseAdapter`], either constant or a small CNN over the
//! recent IMU window.

pub mod adapter;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod iekf;
pub mod sim;

pub use adapter::{ConstantAdapter, LearnedAdapter, NoiseAdapter};
pub use dataset::{AlignedSequence, ImuSample, PoseRecord};
pub use geometry::{Mat3, Rotation, Vec3};
pub use iekf::{FilterConfig, FilterState, Iekf, InitialCondition};
pub use sim::GroundTruthSample;
