//! Residuals, analytic Jacobians, and robust-kernel weights for the Doppler
//! velocity and geometric objectives.
//!
//! Jacobian columns are ordered `[d/du_theta | d/du_t]` everywhere, matching
//! the state vector layout. The Doppler residual is written against the
//! source point's capture-frame ray direction and is exactly linear in the
//! state, so its Jacobian is constant.

use crate::cloud::DopplerPoint;
use crate::se3::{skew, Mat3, StateVector, Vec3, Vec6};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("point at the sensor origin has no ray direction")]
    ZeroRangePoint,
}

/// Fixed sensor extrinsics: rotation and offset of the LiDAR frame
/// relative to the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Calibration {
    /// LiDAR frame coincides with the vehicle frame.
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }
}

impl Default for Calibration {
    fn default() -> Self {
        Self::identity()
    }
}

/// One residual with its Jacobian row and robust weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBlock {
    pub value: f64,
    pub jacobian: Vec6,
    pub weight: f64,
}

fn stack(rotation: Vec3, translation: Vec3) -> Vec6 {
    Vec6::new(
        rotation.x,
        rotation.y,
        rotation.z,
        translation.x,
        translation.y,
        translation.z,
    )
}

/// Unit ray direction toward the point, expressed in the vehicle frame.
pub fn direction_in_vehicle(p: &DopplerPoint, calib: &Calibration) -> Result<Vec3, ObjectiveError> {
    let range = p.position.norm();
    if range <= 0.0 {
        return Err(ObjectiveError::ZeroRangePoint);
    }
    Ok(calib.rotation * (p.position / range))
}

/// Doppler velocity predicted for a ray direction `d_v` (vehicle frame)
/// under the state vector, using the sample period `dt`.
pub fn expected_doppler(u: &StateVector, d_v: &Vec3, calib: &Calibration, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    let coupled = u.translation - skew(&calib.translation) * u.rotation;
    d_v.dot(&coupled) / dt
}

/// Measured minus expected Doppler for a source point.
pub fn doppler_residual(
    p: &DopplerPoint,
    u: &StateVector,
    calib: &Calibration,
    dt: f64,
) -> Result<f64, ObjectiveError> {
    let d_v = direction_in_vehicle(p, calib)?;
    Ok(p.doppler - expected_doppler(u, &d_v, calib, dt))
}

/// Jacobian of the Doppler residual; constant in the state.
pub fn doppler_jacobian(
    p: &DopplerPoint,
    calib: &Calibration,
    dt: f64,
) -> Result<Vec6, ObjectiveError> {
    let d_v = direction_in_vehicle(p, calib)?;
    Ok(stack(d_v.cross(&calib.translation) / dt, -d_v / dt))
}

/// Point-to-plane residual under the small-angle rotation model:
/// signed distance of the moved source point from the target tangent plane.
pub fn p2plane_residual(p_src: &Vec3, q_tgt: &Vec3, n: &Vec3, u: &StateVector) -> f64 {
    let moved = p_src + u.rotation.cross(p_src) + u.translation;
    (moved - q_tgt).dot(n)
}

/// Jacobian of [`p2plane_residual`]; constant under the small-angle model.
pub fn p2plane_jacobian(p_src: &Vec3, n: &Vec3) -> Vec6 {
    stack(p_src.cross(n), *n)
}

/// Point-to-point residual (optional geometric metric).
pub fn p2point_residual(p_src: &Vec3, q_tgt: &Vec3, u: &StateVector) -> Vec3 {
    p_src + u.rotation.cross(p_src) + u.translation - q_tgt
}

/// 3x6 Jacobian of [`p2point_residual`] under the small-angle model.
pub fn p2point_jacobian(p_src: &Vec3) -> nalgebra::Matrix3x6<f64> {
    let mut j = nalgebra::Matrix3x6::<f64>::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(p_src)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    j
}

/// Tukey biweight: `(1 - (r/k)^2)^2` inside the cutoff, zero outside.
pub fn tukey_weight(r: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    if r.abs() < k {
        let ratio = (r / k) * (r / k);
        (1.0 - ratio) * (1.0 - ratio)
    } else {
        0.0
    }
}
