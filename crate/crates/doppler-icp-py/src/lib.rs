//! Python bindings for the doppler-icp toolkit: the point cloud and
//! transform types plus registration, simulation, and evaluation entry
//! points. Build with `cargo build -p doppler-icp-py --release` and load
//! the resulting cdylib as the module `doppler_icp_py` (see
//! `python/smoke_test.py` for a loader).

use doppler_icp::cloud::{estimate_normals, DopplerPoint, DopplerPointCloud};
use doppler_icp::eval;
use doppler_icp::objectives::Calibration;
use doppler_icp::se3::{
    pseudo_log, so3_log, Mat3, RigidTransform as CoreTransform, StateVector, Vec3,
};
use doppler_icp::sim::{
    make_scene, make_trajectory, simulate_scan, NoiseSpec, ScanPattern, SceneKind, SceneParams,
    TrajectoryKind,
};
use doppler_icp::solver::{self, Mode, SeedMode, SolverParams};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A scan: positions with per-point Doppler velocity and optional normals.
#[pyclass(name = "PointCloud", from_py_object)]
#[derive(Clone)]
struct PyPointCloud {
    inner: DopplerPointCloud,
}

#[pymethods]
impl PyPointCloud {
    /// Build a cloud from positions `[(x, y, z), ...]`, per-point Doppler
    /// velocities, and the scan period in seconds.
    #[new]
    #[pyo3(signature = (positions, doppler, period_s=0.1))]
    fn new(positions: Vec<(f64, f64, f64)>, doppler: Vec<f64>, period_s: f64) -> PyResult<Self> {
        if positions.len() != doppler.len() {
            return Err(PyValueError::new_err(format!(
                "positions ({}) and doppler ({}) lengths differ",
                positions.len(),
                doppler.len()
            )));
        }
        let points = positions
            .into_iter()
            .zip(doppler)
            .map(|((x, y, z), v)| DopplerPoint::new(Vec3::new(x, y, z), v))
            .collect();
        Ok(Self {
            inner: DopplerPointCloud::new(points, period_s),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn period_s(&self) -> f64 {
        self.inner.period_s
    }

    #[getter]
    fn timestamp_s(&self) -> f64 {
        self.inner.timestamp_s
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .points
            .iter()
            .map(|p| (p.position.x, p.position.y, p.position.z))
            .collect()
    }

    fn doppler(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.doppler).collect()
    }

    /// Unit normals where estimated, `None` for degenerate neighborhoods.
    fn normals(&self) -> Vec<Option<(f64, f64, f64)>> {
        self.inner
            .points
            .iter()
            .map(|p| p.normal.map(|n| (n.x, n.y, n.z)))
            .collect()
    }

    /// Returns a copy with surface normals estimated from the k nearest
    /// neighbors of each point.
    #[pyo3(signature = (k=20))]
    fn estimate_normals(&self, k: usize) -> PyResult<PyPointCloud> {
        Ok(PyPointCloud {
            inner: estimate_normals(&self.inner, k).map_err(value_err)?,
        })
    }
}

/// A rigid transform (rotation matrix plus translation).
#[pyclass(name = "RigidTransform", from_py_object)]
#[derive(Clone)]
struct PyRigidTransform {
    inner: CoreTransform,
}

#[pymethods]
impl PyRigidTransform {
    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: CoreTransform::identity(),
        }
    }

    /// Build from a 3x3 rotation matrix (row-major nested lists) and a
    /// translation triple.
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: (f64, f64, f64)) -> Self {
        let mut r = Mat3::zeros();
        for (i, row) in rotation.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                r[(i, j)] = *v;
            }
        }
        Self {
            inner: CoreTransform::new(r, Vec3::new(translation.0, translation.1, translation.2)),
        }
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        let t = self.inner.translation;
        (t.x, t.y, t.z)
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = &self.inner.rotation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ]
    }

    /// Rotation as an axis-angle vector (radians).
    fn rotation_axis_angle(&self) -> PyResult<(f64, f64, f64)> {
        let v = so3_log(&self.inner.rotation).map_err(value_err)?;
        Ok((v.x, v.y, v.z))
    }

    fn compose(&self, other: &PyRigidTransform) -> PyRigidTransform {
        PyRigidTransform {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn inverse(&self) -> PyRigidTransform {
        PyRigidTransform {
            inner: self.inner.inverse(),
        }
    }

    fn apply(&self, point: (f64, f64, f64)) -> (f64, f64, f64) {
        let p = self
            .inner
            .transform_point(&Vec3::new(point.0, point.1, point.2));
        (p.x, p.y, p.z)
    }

    fn __repr__(&self) -> String {
        let t = self.inner.translation;
        format!("RigidTransform(t=({:.4}, {:.4}, {:.4}))", t.x, t.y, t.z)
    }
}

/// Registration outcome: alignment transform plus convergence info.
#[pyclass(name = "RegistrationOutcome")]
struct PyRegistrationOutcome {
    #[pyo3(get)]
    transform: PyRigidTransform,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    inliers: usize,
    #[pyo3(get)]
    rejected_dynamic: usize,
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(PyValueError::new_err)
}

/// Aligns `source` onto `target`, returning the transform that maps source
/// points into the target frame.
#[pyfunction]
#[pyo3(signature = (source, target, mode="dicp", lambda_v=0.01, max_dist=1.0,
                    max_vel_err=2.0, max_iters=100, normal_k=20))]
#[allow(clippy::too_many_arguments)]
fn register(
    source: &PyPointCloud,
    target: &PyPointCloud,
    mode: &str,
    lambda_v: f64,
    max_dist: f64,
    max_vel_err: f64,
    max_iters: usize,
    normal_k: usize,
) -> PyResult<PyRegistrationOutcome> {
    let params = SolverParams {
        mode: parse_mode(mode)?,
        lambda_v,
        max_dist_m: max_dist,
        max_vel_err_mps: max_vel_err,
        max_iters,
        ..Default::default()
    };
    let prepared;
    let target_ref = if params.mode.uses_geometric() && !target.inner.has_normals() {
        prepared = estimate_normals(&target.inner, normal_k).map_err(value_err)?;
        &prepared
    } else {
        &target.inner
    };
    let result = solver::register(
        &source.inner,
        target_ref,
        &params,
        &Calibration::identity(),
        &StateVector::zero(),
    )
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let last = result.per_iteration.last().copied();
    Ok(PyRegistrationOutcome {
        transform: PyRigidTransform {
            inner: result.transform,
        },
        iterations: result.iterations,
        converged: result.converged,
        inliers: last.map(|d| d.inlier_count).unwrap_or(0),
        rejected_dynamic: last.map(|d| d.rejected_dynamic_count).unwrap_or(0),
    })
}

/// Registers consecutive scans and composes absolute poses (first pose is
/// the identity). Returns the pose list and per-pair iteration counts.
#[pyfunction]
#[pyo3(signature = (scans, mode="dicp", max_dist=1.0, seeding="constant-velocity"))]
fn run_odometry(
    scans: Vec<PyPointCloud>,
    mode: &str,
    max_dist: f64,
    seeding: &str,
) -> PyResult<(Vec<PyRigidTransform>, Vec<usize>)> {
    let params = SolverParams {
        mode: parse_mode(mode)?,
        max_dist_m: max_dist,
        ..Default::default()
    };
    let seeding: SeedMode = seeding.parse().map_err(PyValueError::new_err)?;
    let clouds: Vec<DopplerPointCloud> = scans.into_iter().map(|c| c.inner).collect();
    let result = solver::odometry(&clouds, &params, &Calibration::identity(), seeding)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((
        result
            .poses
            .into_iter()
            .map(|inner| PyRigidTransform { inner })
            .collect(),
        result.pairs.iter().map(|p| p.iterations).collect(),
    ))
}

/// Simulates a corridor scan sequence; returns the scans and the ground
/// truth vehicle poses.
#[pyfunction]
#[pyo3(signature = (scene="straight-walls", n_scans=5, speed_mps=10.0, rate_hz=10.0,
                    range_sigma_m=0.02, doppler_sigma_mps=0.03, seed=0, ground=true,
                    max_range_m=40.0))]
#[allow(clippy::too_many_arguments)]
fn simulate_corridor(
    scene: &str,
    n_scans: usize,
    speed_mps: f64,
    rate_hz: f64,
    range_sigma_m: f64,
    doppler_sigma_mps: f64,
    seed: u64,
    ground: bool,
    max_range_m: f64,
) -> PyResult<(Vec<PyPointCloud>, Vec<PyRigidTransform>)> {
    if n_scans < 1 {
        return Err(PyValueError::new_err("n_scans must be at least 1"));
    }
    let kind: SceneKind = scene.parse().map_err(PyValueError::new_err)?;
    let traj = match kind {
        SceneKind::CurvedWalls => TrajectoryKind::Arc,
        _ => TrajectoryKind::Straight,
    };
    let params = SceneParams {
        ground,
        ..Default::default()
    };
    let world = make_scene(kind, &params);
    let duration = (n_scans - 1) as f64 / rate_hz;
    let samples = make_trajectory(traj, speed_mps, duration, rate_hz, params.arc_radius_m)
        .map_err(value_err)?;
    let pattern = ScanPattern {
        max_range_m,
        period_s: 1.0 / rate_hz,
        ..Default::default()
    };
    let calib = Calibration::identity();
    let mut scans = Vec::with_capacity(samples.len());
    let mut poses = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let noise = NoiseSpec {
            range_sigma_m,
            doppler_sigma_mps,
            rng_seed: seed.wrapping_add(i as u64),
        };
        scans.push(PyPointCloud {
            inner: simulate_scan(&world, sample, &pattern, &noise, &calib),
        });
        poses.push(PyRigidTransform { inner: sample.pose });
    }
    Ok((scans, poses))
}

/// Relative pose error between index-aligned trajectories:
/// `(translation RMSE in meters, rotation RMSE in degrees)`.
#[pyfunction]
fn rpe(est: Vec<PyRigidTransform>, gt: Vec<PyRigidTransform>) -> PyResult<(f64, f64)> {
    let est: Vec<CoreTransform> = est.into_iter().map(|p| p.inner).collect();
    let gt: Vec<CoreTransform> = gt.into_iter().map(|p| p.inner).collect();
    let (t, r, _) = eval::rpe(&est, &gt).map_err(value_err)?;
    Ok((t, r))
}

/// Absolute difference of accumulated path lengths, meters.
#[pyfunction]
fn path_error(est: Vec<PyRigidTransform>, gt: Vec<PyRigidTransform>) -> PyResult<f64> {
    let est: Vec<CoreTransform> = est.into_iter().map(|p| p.inner).collect();
    let gt: Vec<CoreTransform> = gt.into_iter().map(|p| p.inner).collect();
    eval::path_error(&est, &gt).map_err(value_err)
}

/// The state vector `[rotation axis-angle | translation]` of a transform.
#[pyfunction]
fn log_state(transform: &PyRigidTransform) -> PyResult<Vec<f64>> {
    let state = pseudo_log(&transform.inner).map_err(value_err)?;
    Ok(state.to_vector().iter().cloned().collect())
}

#[pymodule]
fn doppler_icp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyRigidTransform>()?;
    m.add_class::<PyRegistrationOutcome>()?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(run_odometry, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_corridor, m)?)?;
    m.add_function(wrap_pyfunction!(rpe, m)?)?;
    m.add_function(wrap_pyfunction!(path_error, m)?)?;
    m.add_function(wrap_pyfunction!(log_state, m)?)?;
    Ok(())
}
