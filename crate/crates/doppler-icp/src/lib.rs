//! Doppler-aware point cloud registration.
//!
//! Joint optimization of a point-to-plane geometric objective with a
//! per-point Doppler velocity objective, for range sensors that measure
//! per-return radial velocity. Ships with a synthetic FMCW LiDAR scan
//! generator and trajectory evaluation metrics, so corridor- and
//! tunnel-style odometry experiments run end to end from one config file.

pub mod cloud;
pub mod config;
pub mod eval;
pub mod io;
pub mod objectives;
pub mod se3;
pub mod sim;
pub mod solver;

pub use cloud::{CorrespondenceSet, DopplerPoint, DopplerPointCloud, SpatialIndex};
pub use objectives::Calibration;
pub use se3::{Mat3, Mat6, RigidTransform, StateVector, Vec3, Vec6};
pub use solver::{Mode, RegistrationResult, SeedMode, SolverParams};
