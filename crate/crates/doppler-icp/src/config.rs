//! Plain-text `key = value` run configuration: one key per line, `#` starts
//! a comment, unknown keys are rejected. The full key list is documented in
//! the repository README; [`RunConfig::echo`] writes the effective
//! configuration back out so any run can be reproduced from its output
//! directory.

use crate::objectives::Calibration;
use crate::se3::{so3_exp, Vec3};
use crate::sim::{NoiseSpec, ScanPattern, SceneKind, SceneParams, TrajectoryKind};
use crate::solver::{Mode, SeedMode, SolverParams};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: expected 'key = value', got '{text}'")]
    BadLine { line: usize, text: String },
    #[error("config line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for '{key}': {detail}")]
    BadValue {
        line: usize,
        key: String,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Simulation block: scene, trajectory, and sensor pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scene: SceneKind,
    pub trajectory: TrajectoryKind,
    pub speed_mps: f64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub pattern: ScanPattern,
    pub scene_params: SceneParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene: SceneKind::StraightWalls,
            trajectory: TrajectoryKind::Straight,
            speed_mps: 10.0,
            duration_s: 1.9,
            rate_hz: 10.0,
            pattern: ScanPattern::default(),
            scene_params: SceneParams::default(),
        }
    }
}

/// Everything one pipeline run needs, with sane defaults for every key.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: SolverParams,
    pub seeding: SeedMode,
    pub normal_k: usize,
    /// Roll/pitch/yaw of the LiDAR in the vehicle frame, degrees.
    pub calib_rpy_deg: Vec3,
    pub calib_translation_m: Vec3,
    pub noise: NoiseSpec,
    pub sim: SimConfig,
    pub scan_dir: Option<PathBuf>,
    pub gt_trajectory: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverParams::default(),
            seeding: SeedMode::None,
            normal_k: crate::cloud::DEFAULT_NORMAL_K,
            calib_rpy_deg: Vec3::zeros(),
            calib_translation_m: Vec3::zeros(),
            noise: NoiseSpec::default(),
            sim: SimConfig::default(),
            scan_dir: None,
            gt_trajectory: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line: line_no,
                text: line.to_string(),
            })?;
            config.set(key.trim(), value.trim(), line_no)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// The sensor extrinsics as a rotation matrix plus offset.
    pub fn calibration(&self) -> Calibration {
        let r = self.calib_rpy_deg * std::f64::consts::PI / 180.0;
        let rotation = so3_exp(&Vec3::new(0.0, 0.0, r.z))
            * so3_exp(&Vec3::new(0.0, r.y, 0.0))
            * so3_exp(&Vec3::new(r.x, 0.0, 0.0));
        Calibration {
            rotation,
            translation: self.calib_translation_m,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.solver
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.normal_k < 3 {
            return Err(ConfigError::Invalid(format!(
                "solver.normal_k must be at least 3 (got {})",
                self.normal_k
            )));
        }
        if self.sim.rate_hz <= 0.0 || self.sim.duration_s < 0.0 || self.sim.speed_mps < 0.0 {
            return Err(ConfigError::Invalid(
                "sim.rate_hz must be positive, durations and speeds non-negative".into(),
            ));
        }
        if self.noise.range_sigma_m < 0.0 || self.noise.doppler_sigma_mps < 0.0 {
            return Err(ConfigError::Invalid("noise sigmas must be >= 0".into()));
        }
        let p = &self.sim.pattern;
        if p.n_azimuth == 0
            || p.n_elevation == 0
            || !(0.0..180.0).contains(&p.fov_azimuth_deg)
            || !(0.0..180.0).contains(&p.fov_elevation_deg)
            || p.fov_azimuth_deg <= 0.0
            || p.fov_elevation_deg <= 0.0
        {
            return Err(ConfigError::Invalid(
                "scan pattern needs counts >= 1 and FOVs in (0, 180)".into(),
            ));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = |detail: String| ConfigError::BadValue {
            line,
            key: key.to_string(),
            detail,
        };
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|e| bad(format!("{e} ('{value}')")))?
            };
        }
        let parse_vec3 = |value: &str| -> Result<Vec3, ConfigError> {
            let parts: Vec<f64> = value
                .split_whitespace()
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("{e} ('{value}')")))?;
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 numbers, got {}", parts.len())));
            }
            Ok(Vec3::new(parts[0], parts[1], parts[2]))
        };

        match key {
            "solver.mode" => self.solver.mode = parse!(Mode),
            "solver.lambda_v" => self.solver.lambda_v = parse!(f64),
            "solver.max_dist_m" => self.solver.max_dist_m = parse!(f64),
            "solver.max_vel_err_mps" => self.solver.max_vel_err_mps = parse!(f64),
            "solver.geometric_k" => self.solver.geometric_k = parse!(f64),
            "solver.doppler_k" => self.solver.doppler_k = parse!(f64),
            "solver.robust_kernel_start_iter" => {
                self.solver.robust_kernel_start_iter = parse!(usize)
            }
            "solver.rejection_start_iter" => self.solver.rejection_start_iter = parse!(usize),
            "solver.max_iters" => self.solver.max_iters = parse!(usize),
            "solver.conv_trans_tol_m" => self.solver.conv_trans_tol_m = parse!(f64),
            "solver.conv_rot_tol_rad" => self.solver.conv_rot_tol_rad = parse!(f64),
            "solver.seeding" => self.seeding = parse!(SeedMode),
            "solver.normal_k" => self.normal_k = parse!(usize),
            "calib.rotation_rpy_deg" => self.calib_rpy_deg = parse_vec3(value)?,
            "calib.translation_m" => self.calib_translation_m = parse_vec3(value)?,
            "noise.range_sigma_m" => self.noise.range_sigma_m = parse!(f64),
            "noise.doppler_sigma_mps" => self.noise.doppler_sigma_mps = parse!(f64),
            "noise.rng_seed" => self.noise.rng_seed = parse!(u64),
            "sim.scene" => self.sim.scene = parse!(SceneKind),
            "sim.trajectory" => self.sim.trajectory = parse!(TrajectoryKind),
            "sim.speed_mps" => self.sim.speed_mps = parse!(f64),
            "sim.duration_s" => self.sim.duration_s = parse!(f64),
            "sim.rate_hz" => {
                self.sim.rate_hz = parse!(f64);
                if self.sim.rate_hz > 0.0 {
                    self.sim.pattern.period_s = 1.0 / self.sim.rate_hz;
                }
            }
            "sim.n_azimuth" => self.sim.pattern.n_azimuth = parse!(usize),
            "sim.n_elevation" => self.sim.pattern.n_elevation = parse!(usize),
            "sim.fov_azimuth_deg" => self.sim.pattern.fov_azimuth_deg = parse!(f64),
            "sim.fov_elevation_deg" => self.sim.pattern.fov_elevation_deg = parse!(f64),
            "sim.max_range_m" => self.sim.pattern.max_range_m = parse!(f64),
            "sim.corridor_length_m" => self.sim.scene_params.corridor_length_m = parse!(f64),
            "sim.corridor_start_m" => self.sim.scene_params.corridor_start_m = parse!(f64),
            "sim.corridor_width_m" => self.sim.scene_params.corridor_width_m = parse!(f64),
            "sim.wall_height_m" => self.sim.scene_params.wall_height_m = parse!(f64),
            "sim.floor_z_m" => self.sim.scene_params.floor_z_m = parse!(f64),
            "sim.wall_base_gap_m" => self.sim.scene_params.wall_base_gap_m = parse!(f64),
            "sim.ground" => self.sim.scene_params.ground = parse!(bool),
            "sim.panel_spacing_m" => self.sim.scene_params.panel_spacing_m = parse!(f64),
            "sim.panel_width_m" => self.sim.scene_params.panel_width_m = parse!(f64),
            "sim.panel_height_m" => self.sim.scene_params.panel_height_m = parse!(f64),
            "sim.end_cap" => self.sim.scene_params.end_cap = parse!(bool),
            "sim.arc_radius_m" => self.sim.scene_params.arc_radius_m = parse!(f64),
            "sim.arc_start_rad" => self.sim.scene_params.arc_start_rad = parse!(f64),
            "sim.arc_span_rad" => self.sim.scene_params.arc_span_rad = parse!(f64),
            "sim.max_sagitta_m" => self.sim.scene_params.max_sagitta_m = parse!(f64),
            "sim.actor_velocity_mps" => self.sim.scene_params.actor_velocity = parse_vec3(value)?,
            "sim.actor_start_x_m" => self.sim.scene_params.actor_start_x_m = parse!(f64),
            "sim.actor_width_m" => self.sim.scene_params.actor_width_m = parse!(f64),
            "sim.actor_height_m" => self.sim.scene_params.actor_height_m = parse!(f64),
            "io.scan_dir" => self.scan_dir = Some(PathBuf::from(value)),
            "io.gt_trajectory" => self.gt_trajectory = Some(PathBuf::from(value)),
            "io.out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Serializes the effective configuration; parsing it back yields the
    /// same config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let v3 = |v: &Vec3| format!("{} {} {}", v.x, v.y, v.z);
        let _ = writeln!(s, "solver.mode = {}", self.solver.mode);
        let _ = writeln!(s, "solver.lambda_v = {}", self.solver.lambda_v);
        let _ = writeln!(s, "solver.max_dist_m = {}", self.solver.max_dist_m);
        let _ = writeln!(s, "solver.max_vel_err_mps = {}", self.solver.max_vel_err_mps);
        let _ = writeln!(s, "solver.geometric_k = {}", self.solver.geometric_k);
        let _ = writeln!(s, "solver.doppler_k = {}", self.solver.doppler_k);
        let _ = writeln!(
            s,
            "solver.robust_kernel_start_iter = {}",
            self.solver.robust_kernel_start_iter
        );
        let _ = writeln!(
            s,
            "solver.rejection_start_iter = {}",
            self.solver.rejection_start_iter
        );
        let _ = writeln!(s, "solver.max_iters = {}", self.solver.max_iters);
        let _ = writeln!(s, "solver.conv_trans_tol_m = {}", self.solver.conv_trans_tol_m);
        let _ = writeln!(s, "solver.conv_rot_tol_rad = {}", self.solver.conv_rot_tol_rad);
        let _ = writeln!(s, "solver.seeding = {}", self.seeding);
        let _ = writeln!(s, "solver.normal_k = {}", self.normal_k);
        let _ = writeln!(s, "calib.rotation_rpy_deg = {}", v3(&self.calib_rpy_deg));
        let _ = writeln!(s, "calib.translation_m = {}", v3(&self.calib_translation_m));
        let _ = writeln!(s, "noise.range_sigma_m = {}", self.noise.range_sigma_m);
        let _ = writeln!(s, "noise.doppler_sigma_mps = {}", self.noise.doppler_sigma_mps);
        let _ = writeln!(s, "noise.rng_seed = {}", self.noise.rng_seed);
        let _ = writeln!(s, "sim.scene = {}", self.sim.scene);
        let _ = writeln!(s, "sim.trajectory = {}", self.sim.trajectory);
        let _ = writeln!(s, "sim.speed_mps = {}", self.sim.speed_mps);
        let _ = writeln!(s, "sim.duration_s = {}", self.sim.duration_s);
        let _ = writeln!(s, "sim.rate_hz = {}", self.sim.rate_hz);
        let p = &self.sim.pattern;
        let _ = writeln!(s, "sim.n_azimuth = {}", p.n_azimuth);
        let _ = writeln!(s, "sim.n_elevation = {}", p.n_elevation);
        let _ = writeln!(s, "sim.fov_azimuth_deg = {}", p.fov_azimuth_deg);
        let _ = writeln!(s, "sim.fov_elevation_deg = {}", p.fov_elevation_deg);
        let _ = writeln!(s, "sim.max_range_m = {}", p.max_range_m);
        let sp = &self.sim.scene_params;
        let _ = writeln!(s, "sim.corridor_length_m = {}", sp.corridor_length_m);
        let _ = writeln!(s, "sim.corridor_start_m = {}", sp.corridor_start_m);
        let _ = writeln!(s, "sim.corridor_width_m = {}", sp.corridor_width_m);
        let _ = writeln!(s, "sim.wall_height_m = {}", sp.wall_height_m);
        let _ = writeln!(s, "sim.floor_z_m = {}", sp.floor_z_m);
        let _ = writeln!(s, "sim.wall_base_gap_m = {}", sp.wall_base_gap_m);
        let _ = writeln!(s, "sim.ground = {}", sp.ground);
        let _ = writeln!(s, "sim.panel_spacing_m = {}", sp.panel_spacing_m);
        let _ = writeln!(s, "sim.panel_width_m = {}", sp.panel_width_m);
        let _ = writeln!(s, "sim.panel_height_m = {}", sp.panel_height_m);
        let _ = writeln!(s, "sim.end_cap = {}", sp.end_cap);
        let _ = writeln!(s, "sim.arc_radius_m = {}", sp.arc_radius_m);
        let _ = writeln!(s, "sim.arc_start_rad = {}", sp.arc_start_rad);
        let _ = writeln!(s, "sim.arc_span_rad = {}", sp.arc_span_rad);
        let _ = writeln!(s, "sim.max_sagitta_m = {}", sp.max_sagitta_m);
        let _ = writeln!(s, "sim.actor_velocity_mps = {}", v3(&sp.actor_velocity));
        let _ = writeln!(s, "sim.actor_start_x_m = {}", sp.actor_start_x_m);
        let _ = writeln!(s, "sim.actor_width_m = {}", sp.actor_width_m);
        let _ = writeln!(s, "sim.actor_height_m = {}", sp.actor_height_m);
        if let Some(dir) = &self.scan_dir {
            let _ = writeln!(s, "io.scan_dir = {}", dir.display());
        }
        if let Some(path) = &self.gt_trajectory {
            let _ = writeln!(s, "io.gt_trajectory = {}", path.display());
        }
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "io.out_dir = {}", dir.display());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(name: &str, content: &str) -> PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!("doppler-icp-cfg-{}-{name}", std::process::id()));
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn defaults_follow_the_reference_parameters() {
        let config = RunConfig::default();
        assert_eq!(config.solver.lambda_v, 0.01);
        assert_eq!(config.solver.max_vel_err_mps, 2.0);
        assert_eq!(config.solver.geometric_k, 0.5);
        assert_eq!(config.solver.doppler_k, 0.2);
        assert_eq!(config.solver.robust_kernel_start_iter, 2);
        assert_eq!(config.sim.pattern.fov_azimuth_deg, 120.0);
        assert_eq!(config.sim.pattern.fov_elevation_deg, 30.0);
        assert_eq!(config.sim.pattern.max_range_m, 300.0);
        assert_eq!(config.noise.range_sigma_m, 0.02);
        assert_eq!(config.noise.doppler_sigma_mps, 0.03);
    }

    #[test]
    fn parses_keys_comments_and_enums() {
        let path = temp_file(
            "basic.cfg",
            "# comment line\n\
             solver.mode = p2p+dr   # trailing comment\n\
             solver.lambda_v = 0.02\n\
             sim.scene = curved-walls\n\
             sim.trajectory = arc\n\
             calib.translation_m = 1.5 0 -0.25\n\
             \n\
             io.out_dir = /tmp/run\n",
        );
        let config = RunConfig::from_file(&path).unwrap();
        assert_eq!(config.solver.mode, Mode::P2PDr);
        assert_eq!(config.solver.lambda_v, 0.02);
        assert_eq!(config.sim.scene, SceneKind::CurvedWalls);
        assert_eq!(config.sim.trajectory, TrajectoryKind::Arc);
        assert_eq!(config.calib_translation_m, Vec3::new(1.5, 0.0, -0.25));
        assert_eq!(config.out_dir.as_deref(), Some(Path::new("/tmp/run")));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let path = temp_file("unknown.cfg", "solver.typo = 1\n");
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(ConfigError::UnknownKey { .. })
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn bad_values_are_rejected_with_location() {
        let path = temp_file("bad.cfg", "solver.lambda_v = banana\n");
        match RunConfig::from_file(&path) {
            Err(ConfigError::BadValue { line, key, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(key, "solver.lambda_v");
            }
            other => panic!("expected BadValue, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let path = temp_file("range.cfg", "solver.lambda_v = 1.5\n");
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(ConfigError::Invalid(_))
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn echo_round_trips() {
        let mut config = RunConfig::default();
        config.solver.mode = Mode::P2PDor;
        config.solver.lambda_v = 0.05;
        config.seeding = SeedMode::ConstantVelocity;
        config.sim.scene = SceneKind::WithActor;
        config.noise.rng_seed = 1234;
        config.scan_dir = Some(PathBuf::from("scans"));
        config.out_dir = Some(PathBuf::from("out"));
        let path = temp_file("echo.cfg", &config.echo());
        let back = RunConfig::from_file(&path).unwrap();
        assert_eq!(back, config);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rate_sets_the_scan_period() {
        let path = temp_file("rate.cfg", "sim.rate_hz = 20\n");
        let config = RunConfig::from_file(&path).unwrap();
        assert_eq!(config.sim.pattern.period_s, 0.05);
        std::fs::remove_file(&path).ok();
    }
}
