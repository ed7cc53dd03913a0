//! Radar-inertial egomotion toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: rigid-body pose algebra (Euler angles, SE(3) composition).
//! - [`sensing`]: point clouds, IMU samples and the panoramic range-image encoder.
//! - [`simulator`]: synthetic indoor worlds, ray-cast scans, radar degradation, IMU synthesis.
//! - [`registration`]: closed-form rigid solve, ICP, RANSAC and gyro-bootstrapped ICP.
//! - [`neural`]: a small reverse-mode autodiff engine and the attention-fusion odometry network.
//! - [`evaluation`]: trajectory composition, alignment and absolute trajectory error.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod neural;
pub mod registration;
pub mod rng;
pub mod sensing;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{EulerAngles, PoseSE3, RelativePose, RotMat3, Vec3};
