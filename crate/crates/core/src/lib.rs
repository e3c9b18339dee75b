//! Dead-reckoning navigation for wheeled rovers.
//!
//! This crate implements a strapdown inertial navigation system (INS) in the
//! local NED frame, wrapped in a 15-state error-state extended Kalman filter.
//! The filter is aided by pseudo-measurements that require no external
//! infrastructure: zero-velocity / zero-angular-rate updates while the rover
//! is stopped, non-holonomic motion constraints while it drives, and wheel
//! odometry with slip detection. Between stops, a Rauch-Tung-Striebel
//! backward pass refines the trajectory.
//!
//! A synthetic-data simulator ([`sim`]) generates kinematically consistent
//! ground truth plus IMU and wheel-encoder streams, and the [`pipeline`]
//! module runs batch experiments and computes error reports against that
//! ground truth.

pub mod aiding;
pub mod ekf;
pub mod geodesy;
pub mod mechanization;
pub mod pipeline;
pub mod sim;
pub mod smoother;

pub use ekf::{Covariance, ErrorFilter, ErrorState, FilterEpoch, ImuNoiseSpec};
pub use geodesy::{Dcm, EllipsoidModel, GeodeticPosition};
pub use mechanization::{ImuSample, NavState};
