//! Synthetic FMCW LiDAR generator: ray-casts a raster scan pattern against
//! parametric scenes along a trajectory and emits per-point range and
//! Doppler with configurable Gaussian noise.
//!
//! Corridor scenes (parallel walls, optionally a ground plane) deliberately
//! under-constrain geometric registration along the travel direction; the
//! feature-rich variant adds perpendicular panels, and the actor variant
//! embeds a moving surface for dynamic-point experiments.

use crate::cloud::{DopplerPoint, DopplerPointCloud};
use crate::objectives::Calibration;
use crate::se3::{so3_exp, RigidTransform, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("arc trajectories need a positive radius (got {0})")]
    NonPositiveRadius(f64),
    #[error("trajectory sample rate must be positive (got {0})")]
    NonPositiveRate(f64),
}

/// Raster scan pattern: one ray per azimuth/elevation grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPattern {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub fov_azimuth_deg: f64,
    pub fov_elevation_deg: f64,
    pub max_range_m: f64,
    /// Period of one scan, seconds (10 Hz sampling by default).
    pub period_s: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self {
            n_azimuth: 96,
            n_elevation: 16,
            fov_azimuth_deg: 120.0,
            fov_elevation_deg: 30.0,
            max_range_m: 300.0,
            period_s: 0.1,
        }
    }
}

/// Finite planar parallelogram: corner plus two edge vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
}

impl Rect {
    pub fn new(corner: Vec3, edge_u: Vec3, edge_v: Vec3) -> Self {
        Self {
            corner,
            edge_u,
            edge_v,
        }
    }

    fn translated(&self, offset: Vec3) -> Rect {
        Rect {
            corner: self.corner + offset,
            edge_u: self.edge_u,
            edge_v: self.edge_v,
        }
    }

    /// Ray parameter of the intersection, if any.
    fn intersect(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<f64> {
        let normal = self.edge_u.cross(&self.edge_v);
        let denom = dir.dot(&normal);
        if denom.abs() < 1e-12 * normal.norm() {
            return None;
        }
        let t = (self.corner - origin).dot(&normal) / denom;
        if t < 1e-9 || t > max_range {
            return None;
        }
        let w = origin + dir * t - self.corner;
        let uu = self.edge_u.norm_squared();
        let vv = self.edge_v.norm_squared();
        let uv = self.edge_u.dot(&self.edge_v);
        let wu = w.dot(&self.edge_u);
        let wv = w.dot(&self.edge_v);
        let det = uu * vv - uv * uv;
        if det.abs() < 1e-18 {
            return None;
        }
        let a = (wu * vv - wv * uv) / det;
        let b = (wv * uu - wu * uv) / det;
        let eps = 1e-12;
        if (-eps..=1.0 + eps).contains(&a) && (-eps..=1.0 + eps).contains(&b) {
            Some(t)
        } else {
            None
        }
    }
}

/// A rigid set of surfaces moving at constant linear velocity (inertial frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub surfaces: Vec<Rect>,
    pub linear_velocity: Vec3,
}

/// Static surfaces plus moving actors, all in the inertial frame.
/// Actor surfaces are stored at their time-zero poses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub static_surfaces: Vec<Rect>,
    pub actors: Vec<Actor>,
}

impl Scene {
    /// The scene with actor surfaces displaced to their pose at `time_s`.
    pub fn at_time(&self, time_s: f64) -> Scene {
        Scene {
            static_surfaces: self.static_surfaces.clone(),
            actors: self
                .actors
                .iter()
                .map(|a| Actor {
                    surfaces: a
                        .surfaces
                        .iter()
                        .map(|r| r.translated(a.linear_velocity * time_s))
                        .collect(),
                    linear_velocity: a.linear_velocity,
                })
                .collect(),
        }
    }

    pub fn surface_count(&self) -> usize {
        self.static_surfaces.len() + self.actors.iter().map(|a| a.surfaces.len()).sum::<usize>()
    }
}

/// One trajectory knot: vehicle pose in the inertial frame plus body-frame
/// instantaneous velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub time_s: f64,
    pub pose: RigidTransform,
    /// Linear velocity in the vehicle frame, m/s.
    pub linear_velocity: Vec3,
    /// Angular velocity in the vehicle frame, rad/s.
    pub angular_velocity: Vec3,
}

/// One-standard-deviation Gaussian noise; zero sigmas reproduce the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub range_sigma_m: f64,
    pub doppler_sigma_mps: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn noiseless(rng_seed: u64) -> Self {
        Self {
            range_sigma_m: 0.0,
            doppler_sigma_mps: 0.0,
            rng_seed,
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            range_sigma_m: 0.02,
            doppler_sigma_mps: 0.03,
            rng_seed: 0,
        }
    }
}

/// Nearest ray-surface intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: Vec3,
    pub range: f64,
    pub surface: usize,
    /// Inertial-frame velocity of the struck surface; zero for statics.
    pub actor_velocity: Vec3,
}

/// Casts one ray against every surface; returns the nearest hit within
/// `max_range`. Ties break toward the lowest surface id (statics first).
pub fn raycast(scene: &Scene, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<RayHit> {
    debug_assert!((dir.norm() - 1.0).abs() < 1e-9);
    let mut best: Option<(f64, usize, Vec3)> = None;
    let mut surface_id = 0;
    let mut consider = |t: Option<f64>, id: usize, velocity: Vec3| {
        if let Some(t) = t {
            if best.map_or(true, |(bt, _, _)| t < bt) {
                best = Some((t, id, velocity));
            }
        }
    };
    for rect in &scene.static_surfaces {
        consider(rect.intersect(origin, dir, max_range), surface_id, Vec3::zeros());
        surface_id += 1;
    }
    for actor in &scene.actors {
        for rect in &actor.surfaces {
            consider(
                rect.intersect(origin, dir, max_range),
                surface_id,
                actor.linear_velocity,
            );
            surface_id += 1;
        }
    }
    best.map(|(t, id, velocity)| RayHit {
        point: origin + dir * t,
        range: t,
        surface: id,
        actor_velocity: velocity,
    })
}

/// Noise-free Doppler velocity for a hit point given in the LiDAR frame.
///
/// Computed along the LiDAR-frame route: the radial projection of the
/// point's velocity relative to the (possibly rotating, offset) sensor.
/// Static surfaces pass a zero `actor_velocity_inertial`.
pub fn doppler_truth(
    hit_point_l: &Vec3,
    actor_velocity_inertial: &Vec3,
    sample: &TrajectorySample,
    calib: &Calibration,
) -> f64 {
    let range = hit_point_l.norm();
    debug_assert!(range > 0.0, "zero-range hit has no ray direction");
    let d_l = hit_point_l / range;
    // Sensor origin velocity and spin, expressed in the LiDAR frame.
    let omega_v = sample.angular_velocity;
    let v_lidar_v = sample.linear_velocity + omega_v.cross(&calib.translation);
    let r_lv = calib.rotation.transpose();
    let v_lidar_l = r_lv * v_lidar_v;
    let omega_l = r_lv * omega_v;
    // Actor velocity rotated into the LiDAR frame.
    let r_wl = sample.pose.rotation * calib.rotation;
    let actor_l = r_wl.transpose() * actor_velocity_inertial;
    let relative = actor_l - v_lidar_l - omega_l.cross(hit_point_l);
    d_l.dot(&relative)
}

/// Simulates one scan: one ray per grid cell through the LiDAR pose at this
/// sample, Gaussian range and Doppler noise from per-ray RNG streams.
/// Deterministic given `noise.rng_seed`.
pub fn simulate_scan(
    scene: &Scene,
    sample: &TrajectorySample,
    pattern: &ScanPattern,
    noise: &NoiseSpec,
    calib: &Calibration,
) -> DopplerPointCloud {
    let scene_now = scene.at_time(sample.time_s);
    let lidar_pose = sample.pose.compose(&RigidTransform::new(
        calib.rotation,
        calib.translation,
    ));
    let origin = lidar_pose.translation;

    let fov_az = pattern.fov_azimuth_deg.to_radians();
    let fov_el = pattern.fov_elevation_deg.to_radians();
    let mut points = Vec::new();
    for el_i in 0..pattern.n_elevation {
        for az_i in 0..pattern.n_azimuth {
            let az = grid_angle(az_i, pattern.n_azimuth, fov_az);
            let el = grid_angle(el_i, pattern.n_elevation, fov_el);
            let dir_l = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let dir_w = lidar_pose.rotate_vector(&dir_l);
            let Some(hit) = raycast(&scene_now, &origin, &dir_w, pattern.max_range_m) else {
                continue;
            };
            let hit_l = dir_l * hit.range;
            let doppler = doppler_truth(&hit_l, &hit.actor_velocity, sample, calib);

            let ray_index = (el_i * pattern.n_azimuth + az_i) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
            rng.set_stream(ray_index.wrapping_add(1));
            let range_noise: f64 = rng.sample::<f64, _>(StandardNormal) * noise.range_sigma_m;
            let doppler_noise: f64 =
                rng.sample::<f64, _>(StandardNormal) * noise.doppler_sigma_mps;

            points.push(DopplerPoint {
                position: dir_l * (hit.range + range_noise),
                doppler: doppler + doppler_noise,
                normal: None,
            });
        }
    }

    let mut cloud = DopplerPointCloud::new(points, pattern.period_s);
    cloud.frame_id = "lidar".to_string();
    cloud.timestamp_s = sample.time_s;
    cloud
}

fn grid_angle(i: usize, n: usize, fov: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -fov / 2.0 + fov * i as f64 / (n - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Straight,
    Arc,
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrajectoryKind::Straight => "straight",
            TrajectoryKind::Arc => "arc",
        })
    }
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "straight" => Ok(TrajectoryKind::Straight),
            "arc" => Ok(TrajectoryKind::Arc),
            other => Err(format!("unknown trajectory '{other}' (expected straight, arc)")),
        }
    }
}

/// Analytically exact poses and body-frame velocities along a straight line
/// or a constant-rate circular arc, sampled at `rate_hz`.
pub fn make_trajectory(
    kind: TrajectoryKind,
    speed_mps: f64,
    duration_s: f64,
    rate_hz: f64,
    arc_radius_m: f64,
) -> Result<Vec<TrajectorySample>, SimError> {
    if rate_hz <= 0.0 {
        return Err(SimError::NonPositiveRate(rate_hz));
    }
    if kind == TrajectoryKind::Arc && arc_radius_m <= 0.0 {
        return Err(SimError::NonPositiveRadius(arc_radius_m));
    }
    let count = (duration_s * rate_hz).round() as usize + 1;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let t = i as f64 / rate_hz;
        let sample = match kind {
            TrajectoryKind::Straight => TrajectorySample {
                time_s: t,
                pose: RigidTransform::new(
                    crate::se3::Mat3::identity(),
                    Vec3::new(speed_mps * t, 0.0, 0.0),
                ),
                linear_velocity: Vec3::new(speed_mps, 0.0, 0.0),
                angular_velocity: Vec3::zeros(),
            },
            TrajectoryKind::Arc => {
                let yaw_rate = speed_mps / arc_radius_m;
                let phi = yaw_rate * t;
                TrajectorySample {
                    time_s: t,
                    pose: RigidTransform::new(
                        so3_exp(&Vec3::new(0.0, 0.0, phi)),
                        Vec3::new(
                            arc_radius_m * phi.sin(),
                            arc_radius_m * (1.0 - phi.cos()),
                            0.0,
                        ),
                    ),
                    linear_velocity: Vec3::new(speed_mps, 0.0, 0.0),
                    angular_velocity: Vec3::new(0.0, 0.0, yaw_rate),
                }
            }
        };
        samples.push(sample);
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    StraightWalls,
    CurvedWalls,
    FeatureRich,
    WithActor,
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SceneKind::StraightWalls => "straight-walls",
            SceneKind::CurvedWalls => "curved-walls",
            SceneKind::FeatureRich => "feature-rich",
            SceneKind::WithActor => "with-actor",
        })
    }
}

impl std::str::FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "straight-walls" => Ok(SceneKind::StraightWalls),
            "curved-walls" => Ok(SceneKind::CurvedWalls),
            "feature-rich" => Ok(SceneKind::FeatureRich),
            "with-actor" => Ok(SceneKind::WithActor),
            other => Err(format!(
                "unknown scene '{other}' (expected straight-walls, curved-walls, feature-rich, with-actor)"
            )),
        }
    }
}

/// Scene geometry knobs; the defaults describe a desk-scale corridor.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Corridor extent along +x, starting at `corridor_start_m`.
    pub corridor_length_m: f64,
    pub corridor_start_m: f64,
    pub corridor_width_m: f64,
    /// Wall height above the wall base line.
    pub wall_height_m: f64,
    /// Floor plane height (sensor is at z = 0).
    pub floor_z_m: f64,
    /// Vertical gap between the floor and the wall base. Keeping surfaces
    /// farther apart than the correspondence radius prevents cross-surface
    /// matches at coverage boundaries.
    pub wall_base_gap_m: f64,
    /// Add a ground plane under the corridor.
    pub ground: bool,
    /// Spacing of perpendicular panels (feature-rich and actor scenes);
    /// zero disables the panels.
    pub panel_spacing_m: f64,
    pub panel_width_m: f64,
    pub panel_height_m: f64,
    /// Lateral offset of the alternating panel centers from the middle.
    pub panel_offset_m: f64,
    /// Cap the corridor end with a full cross-section wall (feature-rich).
    pub end_cap: bool,
    pub arc_radius_m: f64,
    pub arc_start_rad: f64,
    pub arc_span_rad: f64,
    /// Chord tessellation bound for curved walls.
    pub max_sagitta_m: f64,
    pub actor_velocity: Vec3,
    pub actor_start_x_m: f64,
    pub actor_width_m: f64,
    pub actor_height_m: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            corridor_length_m: 130.0,
            corridor_start_m: -10.0,
            corridor_width_m: 8.0,
            wall_height_m: 6.0,
            floor_z_m: -2.0,
            wall_base_gap_m: 2.5,
            ground: false,
            panel_spacing_m: 8.0,
            panel_width_m: 2.4,
            panel_height_m: 3.0,
            panel_offset_m: 1.0,
            end_cap: false,
            arc_radius_m: 50.0,
            arc_start_rad: -0.2,
            arc_span_rad: 1.2,
            max_sagitta_m: 0.01,
            actor_velocity: Vec3::new(5.0, 0.0, 0.0),
            actor_start_x_m: 18.5,
            actor_width_m: 3.0,
            actor_height_m: 4.8,
        }
    }
}

/// Builds one of the canonical evaluation scenes.
pub fn make_scene(kind: SceneKind, params: &SceneParams) -> Scene {
    let mut scene = Scene::default();
    match kind {
        SceneKind::StraightWalls => {
            straight_corridor(&mut scene, params);
        }
        SceneKind::CurvedWalls => {
            curved_corridor(&mut scene, params);
        }
        SceneKind::FeatureRich => {
            feature_rich(&mut scene, params);
        }
        SceneKind::WithActor => {
            feature_rich(&mut scene, params);
            // Two tail panels, one per lane, moving as one rigid actor.
            // The bottom edge clears the floor by more than one frame of
            // ego motion so floor points keep winning their own twins.
            let half_w = params.actor_width_m / 2.0;
            let z0 = params.floor_z_m + 1.2;
            let surfaces = [-1.5f64, 1.5]
                .iter()
                .map(|y_center| {
                    Rect::new(
                        Vec3::new(params.actor_start_x_m, y_center - half_w, z0),
                        Vec3::new(0.0, params.actor_width_m, 0.0),
                        Vec3::new(0.0, 0.0, params.actor_height_m),
                    )
                })
                .collect();
            scene.actors.push(Actor {
                surfaces,
                linear_velocity: params.actor_velocity,
            });
        }
    }
    scene
}

fn feature_rich(scene: &mut Scene, params: &SceneParams) {
    straight_corridor(scene, params);
    add_panels(scene, params, params.panel_width_m, params.panel_height_m);
    if params.end_cap {
        let x = params.corridor_start_m + params.corridor_length_m;
        let half = (params.corridor_width_m / 2.0 - 2.5).max(0.8);
        scene.static_surfaces.push(Rect::new(
            Vec3::new(x, -half, params.floor_z_m + params.wall_base_gap_m),
            Vec3::new(0.0, 2.0 * half, 0.0),
            Vec3::new(0.0, 0.0, params.wall_height_m),
        ));
    }
}

fn straight_corridor(scene: &mut Scene, params: &SceneParams) {
    let half = params.corridor_width_m / 2.0;
    let x0 = params.corridor_start_m;
    let len = params.corridor_length_m;
    let wall_z = params.floor_z_m + params.wall_base_gap_m;
    for side in [-1.0, 1.0] {
        scene.static_surfaces.push(Rect::new(
            Vec3::new(x0, side * half, wall_z),
            Vec3::new(len, 0.0, 0.0),
            Vec3::new(0.0, 0.0, params.wall_height_m),
        ));
    }
    if params.ground {
        scene.static_surfaces.push(Rect::new(
            Vec3::new(x0, -half - 0.5, params.floor_z_m),
            Vec3::new(len, 0.0, 0.0),
            Vec3::new(0.0, params.corridor_width_m + 1.0, 0.0),
        ));
    }
}

/// Free-standing panels facing down the corridor, alternating between the
/// left and right half. They float clear of the walls and floor so every
/// nearest-neighbor match stays on one surface.
fn add_panels(scene: &mut Scene, params: &SceneParams, width: f64, height: f64) {
    if params.panel_spacing_m <= 0.0 {
        return;
    }
    let mut x = params.corridor_start_m + params.panel_spacing_m;
    let end = params.corridor_start_m + params.corridor_length_m;
    let z0 = params.floor_z_m + params.wall_base_gap_m;
    let mut side = 1.0;
    while x < end {
        let y_center = side * params.panel_offset_m;
        scene.static_surfaces.push(Rect::new(
            Vec3::new(x, y_center - width / 2.0, z0),
            Vec3::new(0.0, width, 0.0),
            Vec3::new(0.0, 0.0, height),
        ));
        side = -side;
        x += params.panel_spacing_m;
    }
}

fn curved_corridor(scene: &mut Scene, params: &SceneParams) {
    let center = Vec3::new(0.0, params.arc_radius_m, 0.0);
    let half = params.corridor_width_m / 2.0;
    let radial = |phi: f64| Vec3::new(phi.sin(), -phi.cos(), 0.0);

    let wall_z = params.floor_z_m + params.wall_base_gap_m;
    for radius in [params.arc_radius_m - half, params.arc_radius_m + half] {
        // Chord count from the sagitta bound s = r (1 - cos(dphi / 2)).
        let dphi_max = 2.0 * (1.0 - params.max_sagitta_m / radius).acos();
        let n = (params.arc_span_rad / dphi_max).ceil().max(1.0) as usize;
        for i in 0..n {
            let a = params.arc_start_rad + params.arc_span_rad * i as f64 / n as f64;
            let b = params.arc_start_rad + params.arc_span_rad * (i + 1) as f64 / n as f64;
            let pa = center + radial(a) * radius + Vec3::new(0.0, 0.0, wall_z);
            let pb = center + radial(b) * radius + Vec3::new(0.0, 0.0, wall_z);
            scene.static_surfaces.push(Rect::new(
                pa,
                pb - pa,
                Vec3::new(0.0, 0.0, params.wall_height_m),
            ));
        }
    }

    if params.ground {
        let inner = params.arc_radius_m - half - 0.5;
        let dphi_max = 2.0 * (1.0 - params.max_sagitta_m / inner).acos();
        let n = (params.arc_span_rad / dphi_max).ceil().max(1.0) as usize;
        for i in 0..n {
            let a = params.arc_start_rad + params.arc_span_rad * i as f64 / n as f64;
            let b = params.arc_start_rad + params.arc_span_rad * (i + 1) as f64 / n as f64;
            let mid = 0.5 * (a + b);
            let pa = center + radial(a) * inner + Vec3::new(0.0, 0.0, params.floor_z_m);
            let pb = center + radial(b) * inner + Vec3::new(0.0, 0.0, params.floor_z_m);
            scene.static_surfaces.push(Rect::new(
                pa,
                pb - pa,
                radial(mid) * (params.corridor_width_m + 1.0),
            ));
        }
    }
}
