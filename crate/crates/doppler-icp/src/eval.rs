//! Trajectory metrics: relative pose error, path-length error, and the
//! composition helper tying relative estimates into absolute poses.

use crate::se3::{so3_log, RigidTransform};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trajectory length mismatch: estimated {est}, ground truth {gt}")]
    LengthMismatch { est: usize, gt: usize },
    #[error("metrics need at least two poses (got {0})")]
    TooShort(usize),
    #[error("estimated rotation is not orthonormal: {0}")]
    BadRotation(String),
}

/// Aggregate trajectory metrics plus per-pair rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rpe_trans_rmse_m: f64,
    pub rpe_rot_rmse_deg: f64,
    pub path_error_m: f64,
    /// Mean solver iterations per pair, when the run recorded them.
    pub mean_iterations: Option<f64>,
    pub per_pair: Vec<PairErrors>,
}

/// Frame-to-frame errors for one consecutive pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairErrors {
    pub index: usize,
    pub trans_error_m: f64,
    pub rot_error_deg: f64,
}

fn relative_poses(poses: &[RigidTransform]) -> Vec<RigidTransform> {
    poses
        .windows(2)
        .map(|w| w[0].inverse().compose(&w[1]))
        .collect()
}

/// Relative pose error between index-aligned trajectories: RMSE over the
/// per-pair translation norms and rotation angles of the error transform
/// `inverse(gt_rel) * est_rel`.
pub fn rpe(
    est: &[RigidTransform],
    gt: &[RigidTransform],
) -> Result<(f64, f64, Vec<PairErrors>), EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.len() < 2 {
        return Err(EvalError::TooShort(est.len()));
    }
    let est_rel = relative_poses(est);
    let gt_rel = relative_poses(gt);
    let mut per_pair = Vec::with_capacity(est_rel.len());
    let mut trans_sq = 0.0;
    let mut rot_sq = 0.0;
    for (i, (er, gr)) in est_rel.iter().zip(&gt_rel).enumerate() {
        let error = gr.inverse().compose(er);
        let trans = error.translation.norm();
        let angle = so3_log(&error.rotation)
            .map_err(|e| EvalError::BadRotation(e.to_string()))?
            .norm();
        trans_sq += trans * trans;
        rot_sq += angle * angle;
        per_pair.push(PairErrors {
            index: i,
            trans_error_m: trans,
            rot_error_deg: angle.to_degrees(),
        });
    }
    let n = est_rel.len() as f64;
    Ok((
        (trans_sq / n).sqrt(),
        (rot_sq / n).sqrt().to_degrees(),
        per_pair,
    ))
}

/// Absolute difference between the accumulated estimated path length and the
/// accumulated ground-truth path length.
pub fn path_error(est: &[RigidTransform], gt: &[RigidTransform]) -> Result<f64, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.len() < 2 {
        return Err(EvalError::TooShort(est.len()));
    }
    let sum = |poses: &[RigidTransform]| {
        relative_poses(poses)
            .iter()
            .map(|r| r.translation.norm())
            .sum::<f64>()
    };
    Ok((sum(est) - sum(gt)).abs())
}

/// Chains relative poses onto `origin`: `absolute[i] = absolute[i-1] * rel[i]`.
pub fn compose_relative(
    rel: &[RigidTransform],
    origin: &RigidTransform,
) -> Vec<RigidTransform> {
    let mut absolute = Vec::with_capacity(rel.len() + 1);
    absolute.push(*origin);
    for r in rel {
        let last = *absolute.last().unwrap();
        absolute.push(last.compose(r));
    }
    absolute
}

/// Builds the full report for index-aligned trajectories.
pub fn evaluate(
    est: &[RigidTransform],
    gt: &[RigidTransform],
    mean_iterations: Option<f64>,
) -> Result<EvalReport, EvalError> {
    let (rpe_trans_rmse_m, rpe_rot_rmse_deg, per_pair) = rpe(est, gt)?;
    let path_error_m = path_error(est, gt)?;
    Ok(EvalReport {
        rpe_trans_rmse_m,
        rpe_rot_rmse_deg,
        path_error_m,
        mean_iterations,
        per_pair,
    })
}
