//! The full Doppler ICP loop: correspondence search, Doppler-gated outlier
//! rejection, IRLS normal-equation solve of the joint objective, incremental
//! state update, and convergence control.
//!
//! Each iteration linearizes about the current estimate and solves for an
//! increment which is composed onto it through the pseudo-exponential map.
//! Geometric blocks are built from the transformed source points, so the
//! small-angle rotation model stays valid as the increment shrinks; the
//! Doppler residual is evaluated at the composed total state, where it is
//! exactly linear.

use crate::cloud::{
    build_index, estimate_normals, match_correspondences, CloudError, CorrespondenceSet,
    DopplerPointCloud, DEFAULT_NORMAL_K,
};
use crate::objectives::{
    doppler_jacobian, doppler_residual, p2plane_jacobian, tukey_weight, Calibration,
    ObjectiveError, ResidualBlock,
};
use crate::se3::{pseudo_exp, pseudo_log, Mat6, RigidTransform, Se3Error, StateVector, Vec6};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver parameter: {0}")]
    InvalidParams(String),
    #[error("mode {0} needs a source cloud with a Doppler channel")]
    MissingDoppler(Mode),
    #[error("mode {0} needs a target cloud with surface normals")]
    MissingNormals(Mode),
    #[error("no correspondences survived filtering at iteration {iteration}")]
    NoCorrespondences { iteration: usize },
    #[error("all residual weights are zero at iteration {iteration}; the system is degenerate")]
    AllZeroWeights { iteration: usize },
    #[error("normal equations are singular beyond recovery (damping up to {max_damping:.3e})")]
    DegenerateSystem { max_damping: f64 },
    #[error("odometry needs at least two scans (got {0})")]
    NotEnoughScans(usize),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Se3(#[from] Se3Error),
}

/// Which residual blocks and filters participate in the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Point-to-plane geometry only.
    P2P,
    /// Point-to-plane plus Doppler residuals.
    P2PDr,
    /// Point-to-plane plus dynamic outlier rejection.
    P2PDor,
    /// Point-to-plane, Doppler residuals, and dynamic outlier rejection.
    Dicp,
    /// Doppler residuals only.
    DopplerOnly,
}

impl Mode {
    pub fn uses_geometric(self) -> bool {
        !matches!(self, Mode::DopplerOnly)
    }

    pub fn uses_doppler_residual(self) -> bool {
        matches!(self, Mode::P2PDr | Mode::Dicp | Mode::DopplerOnly)
    }

    pub fn uses_rejection(self) -> bool {
        matches!(self, Mode::P2PDor | Mode::Dicp)
    }

    /// Blend factor actually applied: modes without a Doppler residual pin
    /// it to zero, Doppler-only pins it to one.
    pub fn effective_lambda(self, lambda_v: f64) -> f64 {
        match self {
            Mode::P2P | Mode::P2PDor => 0.0,
            Mode::DopplerOnly => 1.0,
            Mode::P2PDr | Mode::Dicp => lambda_v,
        }
    }

    /// Table label (ablation reports).
    pub fn label(self) -> &'static str {
        match self {
            Mode::P2P => "P2P",
            Mode::P2PDr => "P2P+DR",
            Mode::P2PDor => "P2P+DOR",
            Mode::Dicp => "DICP",
            Mode::DopplerOnly => "Doppler-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let token = match self {
            Mode::P2P => "p2p",
            Mode::P2PDr => "p2p+dr",
            Mode::P2PDor => "p2p+dor",
            Mode::Dicp => "dicp",
            Mode::DopplerOnly => "doppler-only",
        };
        f.write_str(token)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p2p" => Ok(Mode::P2P),
            "p2p+dr" => Ok(Mode::P2PDr),
            "p2p+dor" => Ok(Mode::P2PDor),
            "dicp" => Ok(Mode::Dicp),
            "doppler-only" => Ok(Mode::DopplerOnly),
            other => Err(format!(
                "unknown mode '{other}' (expected p2p, p2p+dr, p2p+dor, dicp, doppler-only)"
            )),
        }
    }
}

/// Seeding strategy for sequential registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedMode {
    /// Every pair starts from the zero state.
    None,
    /// Each pair starts from the previous pair's converged state.
    ConstantVelocity,
}

impl fmt::Display for SeedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeedMode::None => "none",
            SeedMode::ConstantVelocity => "constant-velocity",
        })
    }
}

impl FromStr for SeedMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(SeedMode::None),
            "constant-velocity" => Ok(SeedMode::ConstantVelocity),
            other => Err(format!(
                "unknown seed mode '{other}' (expected none, constant-velocity)"
            )),
        }
    }
}

/// Solver configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub mode: Mode,
    /// Doppler objective blend factor.
    pub lambda_v: f64,
    /// Maximum correspondence distance, meters.
    pub max_dist_m: f64,
    /// Dynamic-point rejection threshold, m/s.
    pub max_vel_err_mps: f64,
    /// Tukey cutoff for the geometric residual, meters.
    pub geometric_k: f64,
    /// Tukey cutoff for the Doppler residual, m/s.
    pub doppler_k: f64,
    /// First iteration (0-based) at which robust kernels weigh residuals.
    pub robust_kernel_start_iter: usize,
    /// First iteration (0-based) at which dynamic rejection filters pairs.
    pub rejection_start_iter: usize,
    pub max_iters: usize,
    pub conv_trans_tol_m: f64,
    pub conv_rot_tol_rad: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            mode: Mode::Dicp,
            lambda_v: 0.01,
            max_dist_m: 1.0,
            max_vel_err_mps: 2.0,
            geometric_k: 0.5,
            doppler_k: 0.2,
            robust_kernel_start_iter: 2,
            rejection_start_iter: 2,
            max_iters: 100,
            conv_trans_tol_m: 1e-6,
            conv_rot_tol_rad: 1e-6,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            ("max_dist_m", self.max_dist_m),
            ("max_vel_err_mps", self.max_vel_err_mps),
            ("geometric_k", self.geometric_k),
            ("doppler_k", self.doppler_k),
            ("conv_trans_tol_m", self.conv_trans_tol_m),
            ("conv_rot_tol_rad", self.conv_rot_tol_rad),
        ];
        for (name, value) in positive {
            if value <= 0.0 || value.is_nan() {
                return Err(SolverError::InvalidParams(format!(
                    "{name} must be positive (got {value})"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_v) {
            return Err(SolverError::InvalidParams(format!(
                "lambda_v must lie in [0, 1] (got {})",
                self.lambda_v
            )));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidParams(
                "max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Accumulated Gauss-Newton system `H * delta = g`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub h: Mat6,
    pub g: Vec6,
}

/// Diagnostics from one linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    /// Diagonal damping added to make the factorization succeed; zero when
    /// the undamped system factored cleanly.
    pub damping: f64,
    pub attempts: u32,
}

/// Residual/Jacobian/weight blocks for one correspondence pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairBlocks {
    pub geometric: Option<ResidualBlock>,
    pub doppler: Option<ResidualBlock>,
}

/// Per-iteration solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationDiagnostics {
    pub geom_rmse: f64,
    pub doppler_rmse: f64,
    pub inlier_count: usize,
    pub rejected_dynamic_count: usize,
}

/// Registration output: the transform that aligns the source cloud with the
/// target cloud, plus convergence bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub state: StateVector,
    pub iterations: usize,
    pub converged: bool,
    pub per_iteration: Vec<IterationDiagnostics>,
}

/// Evaluates the residual blocks of every correspondence at the given total
/// state. Geometry uses the transformed source point; the Doppler block uses
/// the capture-frame ray direction and is skipped for modes without it.
/// Robust weights apply once `iter` reaches `robust_kernel_start_iter`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_residuals(
    corrs: &CorrespondenceSet,
    source: &DopplerPointCloud,
    target: &DopplerPointCloud,
    state: &StateVector,
    params: &SolverParams,
    iter: usize,
    calib: &Calibration,
    dt: f64,
) -> Result<Vec<PairBlocks>, SolverError> {
    let transform = pseudo_exp(state);
    let kernel_active = iter >= params.robust_kernel_start_iter;
    let mut blocks = Vec::with_capacity(corrs.len());
    for pair in corrs.iter() {
        let src = &source.points[pair.source];
        let tgt = &target.points[pair.target];

        let geometric = if params.mode.uses_geometric() {
            tgt.normal.map(|n| {
                let moved = transform.transform_point(&src.position);
                let value = (moved - tgt.position).dot(&n);
                ResidualBlock {
                    value,
                    jacobian: p2plane_jacobian(&moved, &n),
                    weight: if kernel_active {
                        tukey_weight(value, params.geometric_k)
                    } else {
                        1.0
                    },
                }
            })
        } else {
            None
        };

        let doppler = if params.mode.uses_doppler_residual() {
            let value = doppler_residual(src, state, calib, dt)?;
            Some(ResidualBlock {
                value,
                jacobian: doppler_jacobian(src, calib, dt)?,
                weight: if kernel_active {
                    tukey_weight(value, params.doppler_k)
                } else {
                    1.0
                },
            })
        } else {
            None
        };

        blocks.push(PairBlocks { geometric, doppler });
    }
    Ok(blocks)
}

fn build_normal_equations(
    blocks: &[PairBlocks],
    lambda: f64,
    iteration: usize,
) -> Result<NormalEquations, SolverError> {
    let mut h = Mat6::zeros();
    let mut g = Vec6::zeros();
    let mut mass = 0.0;
    for block in blocks {
        if let Some(geo) = &block.geometric {
            let scale = (1.0 - lambda) * geo.weight;
            if scale > 0.0 {
                h += scale * geo.jacobian * geo.jacobian.transpose();
                g -= scale * geo.jacobian * geo.value;
                mass += scale;
            }
        }
        if let Some(dop) = &block.doppler {
            let scale = lambda * dop.weight;
            if scale > 0.0 {
                h += scale * dop.jacobian * dop.jacobian.transpose();
                g -= scale * dop.jacobian * dop.value;
                mass += scale;
            }
        }
    }
    if mass == 0.0 {
        return Err(SolverError::AllZeroWeights { iteration });
    }
    Ok(NormalEquations { h, g })
}

/// Builds the blended normal equations of the joint objective over the
/// given correspondences at the given total state.
#[allow(clippy::too_many_arguments)]
pub fn accumulate(
    corrs: &CorrespondenceSet,
    source: &DopplerPointCloud,
    target: &DopplerPointCloud,
    state: &StateVector,
    params: &SolverParams,
    iter: usize,
    calib: &Calibration,
    dt: f64,
) -> Result<NormalEquations, SolverError> {
    let blocks = evaluate_residuals(corrs, source, target, state, params, iter, calib, dt)?;
    build_normal_equations(&blocks, params.mode.effective_lambda(params.lambda_v), iter)
}

/// Weighted joint objective value (the blended sum of squared residuals)
/// for externally supplied weights, evaluated at `state`.
pub fn joint_objective(blocks: &[PairBlocks], weights: &[PairBlocks], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (block, frozen) in blocks.iter().zip(weights) {
        if let (Some(geo), Some(w)) = (&block.geometric, &frozen.geometric) {
            total += (1.0 - lambda) * w.weight * geo.value * geo.value;
        }
        if let (Some(dop), Some(w)) = (&block.doppler, &frozen.doppler) {
            total += lambda * w.weight * dop.value * dop.value;
        }
    }
    total
}

/// Solves `H * delta = g` by Cholesky factorization. Singular systems are
/// retried with escalating diagonal damping before giving up.
pub fn solve_normal_equations(
    ne: &NormalEquations,
) -> Result<(StateVector, SolveInfo), SolverError> {
    if let Some(chol) = nalgebra::Cholesky::new(ne.h) {
        let delta = chol.solve(&ne.g);
        if delta.iter().all(|v| v.is_finite()) {
            return Ok((
                StateVector::from_vector(&delta),
                SolveInfo {
                    damping: 0.0,
                    attempts: 1,
                },
            ));
        }
    }
    let base = (1e-6 * ne.h.trace() / 6.0).max(1e-12);
    let mut damping = base;
    for attempt in 2..=4u32 {
        let damped = ne.h + Mat6::identity() * damping;
        if let Some(chol) = nalgebra::Cholesky::new(damped) {
            let delta = chol.solve(&ne.g);
            if delta.iter().all(|v| v.is_finite()) {
                return Ok((
                    StateVector::from_vector(&delta),
                    SolveInfo {
                        damping,
                        attempts: attempt,
                    },
                ));
            }
        }
        damping *= 10.0;
    }
    Err(SolverError::DegenerateSystem {
        max_damping: damping / 10.0,
    })
}

/// Drops pairs whose Doppler residual at the current state exceeds the
/// rejection threshold. Identity filter while rejection is inactive (mode
/// without rejection, or before `rejection_start_iter`).
#[allow(clippy::too_many_arguments)]
pub fn reject_dynamic(
    corrs: &CorrespondenceSet,
    source: &DopplerPointCloud,
    state: &StateVector,
    params: &SolverParams,
    iter: usize,
    calib: &Calibration,
    dt: f64,
) -> CorrespondenceSet {
    if !params.mode.uses_rejection() || iter < params.rejection_start_iter {
        return corrs.clone();
    }
    let pairs = corrs
        .iter()
        .filter(|pair| {
            match doppler_residual(&source.points[pair.source], state, calib, dt) {
                Ok(r) => r.abs() < params.max_vel_err_mps,
                // A point with no ray direction cannot be judged; keep it and
                // let the residual evaluation surface the error.
                Err(_) => true,
            }
        })
        .copied()
        .collect();
    CorrespondenceSet { pairs }
}

fn rmse(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v * v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Registers `source` onto `target` starting from `seed`, following the
/// match / filter / accumulate / solve / compose loop until the increment
/// drops below the convergence tolerances or `max_iters` is reached.
pub fn register(
    source: &DopplerPointCloud,
    target: &DopplerPointCloud,
    params: &SolverParams,
    calib: &Calibration,
    seed: &StateVector,
) -> Result<RegistrationResult, SolverError> {
    params.validate()?;
    if source.period_s <= 0.0 {
        return Err(SolverError::InvalidParams(format!(
            "source cloud period_s must be positive (got {})",
            source.period_s
        )));
    }
    let needs_doppler = params.mode.uses_doppler_residual() || params.mode.uses_rejection();
    if needs_doppler {
        if !source.has_doppler {
            return Err(SolverError::MissingDoppler(params.mode));
        }
        if source.points.iter().any(|p| p.position.norm() <= 0.0) {
            return Err(ObjectiveError::ZeroRangePoint.into());
        }
    }
    if params.mode.uses_geometric() && !target.has_normals() {
        return Err(SolverError::MissingNormals(params.mode));
    }

    let index = build_index(target)?;
    let dt = source.period_s;
    let lambda = params.mode.effective_lambda(params.lambda_v);

    let mut current = pseudo_exp(seed);
    let mut per_iteration = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..params.max_iters {
        let transformed = source.transformed(&current);
        let matched = match_correspondences(&transformed, &index, params.max_dist_m);
        let state = pseudo_log(&current)?;
        let kept = reject_dynamic(&matched, source, &state, params, iter, calib, dt);
        let rejected = matched.len() - kept.len();
        if kept.is_empty() {
            return Err(SolverError::NoCorrespondences { iteration: iter });
        }

        let blocks = evaluate_residuals(&kept, source, target, &state, params, iter, calib, dt)?;
        let ne = build_normal_equations(&blocks, lambda, iter)?;
        let (delta, _info) = solve_normal_equations(&ne)?;
        current = pseudo_exp(&delta).compose(&current);

        per_iteration.push(IterationDiagnostics {
            geom_rmse: rmse(blocks.iter().filter_map(|b| b.geometric.map(|g| g.value))),
            doppler_rmse: rmse(blocks.iter().filter_map(|b| b.doppler.map(|d| d.value))),
            inlier_count: kept.len(),
            rejected_dynamic_count: rejected,
        });
        iterations = iter + 1;

        if delta.translation.norm() < params.conv_trans_tol_m
            && delta.rotation.norm() < params.conv_rot_tol_rad
        {
            converged = true;
            break;
        }
    }

    Ok(RegistrationResult {
        transform: current,
        state: pseudo_log(&current)?,
        iterations,
        converged,
        per_iteration,
    })
}

/// One pairwise registration inside an odometry run.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    /// Index of the source scan of this pair.
    pub source_index: usize,
    /// Vehicle motion from this scan to the next (inverse of the alignment
    /// transform); identity when the pair failed.
    pub relative: RigidTransform,
    pub iterations: usize,
    pub converged: bool,
    pub failed: bool,
    pub error: Option<String>,
    pub inlier_count: usize,
    pub rejected_dynamic_count: usize,
    pub geom_rmse: f64,
    pub doppler_rmse: f64,
}

/// Absolute poses (starting at the identity) plus per-pair diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryResult {
    pub poses: Vec<RigidTransform>,
    pub pairs: Vec<PairRecord>,
}

impl OdometryResult {
    pub fn mean_iterations(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.iterations as f64).sum::<f64>() / self.pairs.len() as f64
    }
}

/// Registers consecutive scans and composes the absolute trajectory.
///
/// Targets missing normals get them estimated once (geometric modes).
/// A failed pair falls back to an identity relative pose, records the error,
/// and resets the seed.
pub fn odometry(
    scans: &[DopplerPointCloud],
    params: &SolverParams,
    calib: &Calibration,
    seeding: SeedMode,
) -> Result<OdometryResult, SolverError> {
    if scans.len() < 2 {
        return Err(SolverError::NotEnoughScans(scans.len()));
    }
    let mut targets: Vec<DopplerPointCloud> = Vec::with_capacity(scans.len() - 1);
    for scan in &scans[1..] {
        if params.mode.uses_geometric() && !scan.has_normals() && scan.len() >= DEFAULT_NORMAL_K {
            targets.push(estimate_normals(scan, DEFAULT_NORMAL_K)?);
        } else {
            targets.push(scan.clone());
        }
    }

    let mut poses = vec![RigidTransform::identity()];
    let mut pairs = Vec::with_capacity(scans.len() - 1);
    let mut seed = StateVector::zero();

    for i in 0..scans.len() - 1 {
        match register(&scans[i], &targets[i], params, calib, &seed) {
            Ok(result) => {
                let relative = result.transform.inverse();
                poses.push(poses[i].compose(&relative));
                let last = result.per_iteration.last().copied().unwrap_or(
                    IterationDiagnostics {
                        geom_rmse: 0.0,
                        doppler_rmse: 0.0,
                        inlier_count: 0,
                        rejected_dynamic_count: 0,
                    },
                );
                pairs.push(PairRecord {
                    source_index: i,
                    relative,
                    iterations: result.iterations,
                    converged: result.converged,
                    failed: false,
                    error: None,
                    inlier_count: last.inlier_count,
                    rejected_dynamic_count: last.rejected_dynamic_count,
                    geom_rmse: last.geom_rmse,
                    doppler_rmse: last.doppler_rmse,
                });
                seed = match seeding {
                    SeedMode::ConstantVelocity => result.state,
                    SeedMode::None => StateVector::zero(),
                };
            }
            Err(err) => {
                poses.push(poses[i]);
                pairs.push(PairRecord {
                    source_index: i,
                    relative: RigidTransform::identity(),
                    iterations: 0,
                    converged: false,
                    failed: true,
                    error: Some(err.to_string()),
                    inlier_count: 0,
                    rejected_dynamic_count: 0,
                    geom_rmse: 0.0,
                    doppler_rmse: 0.0,
                });
                seed = StateVector::zero();
            }
        }
    }

    Ok(OdometryResult { poses, pairs })
}
