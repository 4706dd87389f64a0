//! Command-line pipeline: simulate scans, register pairs, run odometry,
//! evaluate trajectories, and sweep the ablation modes.
//!
//! Exit codes: 0 success, 2 configuration error, 3 registration degeneracy,
//! 4 file I/O error.

use clap::{Args, Parser, Subcommand};
use doppler_icp::cloud::estimate_normals;
use doppler_icp::config::{ConfigError, RunConfig};
use doppler_icp::eval::{evaluate, EvalError, EvalReport};
use doppler_icp::io::{
    read_cloud, read_trajectory, write_cloud, write_csv, write_trajectory, IoError,
};
use doppler_icp::sim::{make_scene, make_trajectory, simulate_scan, NoiseSpec, SimError};
use doppler_icp::solver::{odometry, register, Mode, OdometryResult, SeedMode, SolverError};
use doppler_icp::{DopplerPointCloud, RigidTransform, StateVector};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "doppler-icp",
    about = "Doppler-aware point cloud registration pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Doppler objective blend factor (overrides the config).
    #[arg(long)]
    lambda_v: Option<f64>,
    /// Maximum correspondence distance in meters.
    #[arg(long)]
    max_dist: Option<f64>,
    /// Dynamic-point rejection threshold in m/s.
    #[arg(long)]
    max_vel_err: Option<f64>,
    /// Registration mode: p2p, p2p+dr, p2p+dor, dicp, doppler-only.
    #[arg(long)]
    mode: Option<Mode>,
    /// Seeding: none or constant-velocity.
    #[arg(long)]
    seed_mode: Option<SeedMode>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated scan sequence plus its ground-truth trajectory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Align one source cloud onto one target cloud and print the transform.
    Register {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Register consecutive scans from a directory into a trajectory.
    Odometry {
        #[arg(long)]
        config: PathBuf,
        /// Directory of scan PLYs (overrides io.scan_dir).
        #[arg(long)]
        scans: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare an estimated trajectory against ground truth.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Per-pair diagnostics CSV from `odometry` (enables mean iterations).
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all four registration modes over one sequence and tabulate.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scans: Option<PathBuf>,
        /// Ground-truth trajectory (overrides io.gt_trajectory).
        #[arg(long)]
        gt: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

enum CliError {
    Config(String),
    Degeneracy(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Degeneracy(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Degeneracy(m) | CliError::Io(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NoCorrespondences { .. }
            | SolverError::AllZeroWeights { .. }
            | SolverError::DegenerateSystem { .. }
            | SolverError::Se3(_) => CliError::Degeneracy(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<doppler_icp::cloud::CloudError> for CliError {
    fn from(e: doppler_icp::cloud::CloudError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, overrides } => simulate_cmd(&config, &overrides),
        Command::Register {
            source,
            target,
            config,
            overrides,
        } => register_cmd(&source, &target, config.as_deref(), &overrides),
        Command::Odometry {
            config,
            scans,
            overrides,
        } => odometry_cmd(&config, scans.as_deref(), &overrides),
        Command::Evaluate {
            est,
            gt,
            pairs,
            out,
        } => evaluate_cmd(&est, &gt, pairs.as_deref(), out.as_deref()),
        Command::Ablate {
            config,
            scans,
            gt,
            overrides,
        } => ablate_cmd(&config, scans.as_deref(), gt.as_deref(), &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = overrides.lambda_v {
        config.solver.lambda_v = v;
    }
    if let Some(v) = overrides.max_dist {
        config.solver.max_dist_m = v;
    }
    if let Some(v) = overrides.max_vel_err {
        config.solver.max_vel_err_mps = v;
    }
    if let Some(v) = overrides.mode {
        config.solver.mode = v;
    }
    if let Some(v) = overrides.seed_mode {
        config.seeding = v;
    }
    if let Some(dir) = &overrides.out {
        config.out_dir = Some(dir.clone());
    }
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Config("no output directory (io.out_dir or --out)".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn echo_config(config: &RunConfig, dir: &Path) -> Result<(), CliError> {
    std::fs::write(dir.join("config.effective"), config.echo())?;
    Ok(())
}

fn simulate_cmd(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let config = load_config(Some(config_path), overrides)?;
    let dir = out_dir(&config)?;
    let scan_dir = dir.join("scans");
    std::fs::create_dir_all(&scan_dir)?;

    let scene = make_scene(config.sim.scene, &config.sim.scene_params);
    let samples = make_trajectory(
        config.sim.trajectory,
        config.sim.speed_mps,
        config.sim.duration_s,
        config.sim.rate_hz,
        config.sim.scene_params.arc_radius_m,
    )?;
    let calib = config.calibration();

    let mut gt_rows = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let noise = NoiseSpec {
            rng_seed: config.noise.rng_seed.wrapping_add(i as u64),
            ..config.noise
        };
        let cloud = simulate_scan(&scene, sample, &config.sim.pattern, &noise, &calib);
        write_cloud(&cloud, &scan_dir.join(format!("scan_{i:04}.ply")))?;
        gt_rows.push((sample.time_s, sample.pose));
    }
    write_trajectory(&gt_rows, &dir.join("gt_trajectory.txt"))?;
    echo_config(&config, &dir)?;
    println!(
        "simulated {} scans ({} scene, {} trajectory) into {}",
        samples.len(),
        config.sim.scene,
        config.sim.trajectory,
        dir.display()
    );
    Ok(())
}

fn prepare_target(
    cloud: DopplerPointCloud,
    config: &RunConfig,
) -> Result<DopplerPointCloud, CliError> {
    if config.solver.mode.uses_geometric() && !cloud.has_normals() {
        Ok(estimate_normals(&cloud, config.normal_k)?)
    } else {
        Ok(cloud)
    }
}

fn register_cmd(
    source_path: &Path,
    target_path: &Path,
    config_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let config = load_config(config_path, overrides)?;
    let source = read_cloud(source_path)?;
    let target = prepare_target(read_cloud(target_path)?, &config)?;
    let calib = config.calibration();
    let result = register(
        &source,
        &target,
        &config.solver,
        &calib,
        &StateVector::zero(),
    )?;

    let r = &result.transform.rotation;
    let t = &result.transform.translation;
    println!("mode: {}", config.solver.mode);
    println!(
        "converged: {} after {} iterations",
        result.converged, result.iterations
    );
    for row in 0..3 {
        println!(
            "  [{:12.8} {:12.8} {:12.8} | {:12.8}]",
            r[(row, 0)],
            r[(row, 1)],
            r[(row, 2)],
            t[row]
        );
    }
    println!(
        "translation (m): {:.6} {:.6} {:.6}",
        t.x, t.y, t.z
    );
    println!(
        "rotation (axis-angle, rad): {:.8} {:.8} {:.8}",
        result.state.rotation.x, result.state.rotation.y, result.state.rotation.z
    );
    if let Some(last) = result.per_iteration.last() {
        println!(
            "inliers: {}, rejected dynamic: {}, geom RMSE: {:.6}, doppler RMSE: {:.6}",
            last.inlier_count, last.rejected_dynamic_count, last.geom_rmse, last.doppler_rmse
        );
    }
    Ok(())
}

fn read_scan_dir(dir: &Path) -> Result<Vec<DopplerPointCloud>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "ply").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "no .ply scans found in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| Ok(read_cloud(p)?)).collect()
}

fn scan_timestamps(scans: &[DopplerPointCloud]) -> Vec<f64> {
    let strictly_increasing = scans
        .windows(2)
        .all(|w| w[1].timestamp_s > w[0].timestamp_s);
    if strictly_increasing {
        scans.iter().map(|s| s.timestamp_s).collect()
    } else {
        (0..scans.len()).map(|i| i as f64).collect()
    }
}

fn run_odometry(
    config: &RunConfig,
    scans: &[DopplerPointCloud],
) -> Result<OdometryResult, CliError> {
    let mut prepared = scans.to_vec();
    for scan in prepared.iter_mut().skip(1) {
        if config.solver.mode.uses_geometric() && !scan.has_normals() {
            *scan = estimate_normals(scan, config.normal_k)?;
        }
    }
    Ok(odometry(
        &prepared,
        &config.solver,
        &config.calibration(),
        config.seeding,
    )?)
}

fn pair_rows(result: &OdometryResult) -> Vec<String> {
    result
        .pairs
        .iter()
        .map(|p| {
            let rot_deg = doppler_icp::se3::so3_log(&p.relative.rotation)
                .map(|v| v.norm().to_degrees())
                .unwrap_or(f64::NAN);
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                p.source_index,
                p.iterations,
                p.converged,
                p.failed,
                p.inlier_count,
                p.rejected_dynamic_count,
                p.geom_rmse,
                p.doppler_rmse,
                p.relative.translation.x,
                p.relative.translation.y,
                p.relative.translation.z,
                rot_deg
            )
        })
        .collect()
}

const PAIRS_HEADER: &str = "pair,iterations,converged,failed,inliers,rejected_dynamic,\
                            geom_rmse,doppler_rmse,rel_tx,rel_ty,rel_tz,rel_rot_deg";

fn odometry_cmd(
    config_path: &Path,
    scans_dir: Option<&Path>,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let mut config = load_config(Some(config_path), overrides)?;
    if let Some(dir) = scans_dir {
        config.scan_dir = Some(dir.to_path_buf());
    }
    let scan_dir = config
        .scan_dir
        .clone()
        .ok_or_else(|| CliError::Config("no scan directory (io.scan_dir or --scans)".into()))?;
    let dir = out_dir(&config)?;

    let scans = read_scan_dir(&scan_dir)?;
    let result = run_odometry(&config, &scans)?;
    let timestamps = scan_timestamps(&scans);
    let rows: Vec<(f64, RigidTransform)> = timestamps
        .iter()
        .zip(&result.poses)
        .map(|(t, p)| (*t, *p))
        .collect();
    write_trajectory(&rows, &dir.join("est_trajectory.txt"))?;
    write_csv(&dir.join("pairs.csv"), PAIRS_HEADER, &pair_rows(&result))?;
    echo_config(&config, &dir)?;

    let failed = result.pairs.iter().filter(|p| p.failed).count();
    println!(
        "registered {} pairs ({} failed), mean iterations {:.2}, results in {}",
        result.pairs.len(),
        failed,
        result.mean_iterations(),
        dir.display()
    );
    Ok(())
}

const REPORT_HEADER: &str = "RPE Trans (m),RPE Rot (deg),Path Error (m),# Iters (mean)";

fn report_row(report: &EvalReport) -> String {
    let iters = report
        .mean_iterations
        .map(|v| v.to_string())
        .unwrap_or_default();
    format!(
        "{},{},{},{}",
        report.rpe_trans_rmse_m, report.rpe_rot_rmse_deg, report.path_error_m, iters
    )
}

fn summary_text(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("RPE Trans (m):   {:.6}\n", report.rpe_trans_rmse_m));
    s.push_str(&format!("RPE Rot (deg):   {:.6}\n", report.rpe_rot_rmse_deg));
    s.push_str(&format!("Path Error (m):  {:.6}\n", report.path_error_m));
    match report.mean_iterations {
        Some(v) => s.push_str(&format!("# Iters (mean):  {v:.2}\n")),
        None => s.push_str("# Iters (mean):  n/a\n"),
    }
    s
}

fn mean_iterations_from_pairs(path: &Path) -> Result<Option<f64>, CliError> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines();
    let header = lines.next().unwrap_or_default();
    let column = header
        .split(',')
        .position(|c| c == "iterations")
        .ok_or_else(|| CliError::Config("pairs CSV has no 'iterations' column".into()))?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let value: f64 = fields
            .get(column)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| CliError::Config(format!("bad pairs CSV row '{line}'")))?;
        sum += value;
        count += 1;
    }
    Ok(if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    })
}

fn evaluate_cmd(
    est_path: &Path,
    gt_path: &Path,
    pairs: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let est: Vec<RigidTransform> = read_trajectory(est_path)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let gt: Vec<RigidTransform> = read_trajectory(gt_path)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let mean_iters = match pairs {
        Some(p) => mean_iterations_from_pairs(p)?,
        None => None,
    };
    let report = evaluate(&est, &gt, mean_iters)?;

    print!("{}", summary_text(&report));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("report.csv"), REPORT_HEADER, &[report_row(&report)])?;
        let per_pair_rows: Vec<String> = report
            .per_pair
            .iter()
            .map(|p| format!("{},{},{}", p.index, p.trans_error_m, p.rot_error_deg))
            .collect();
        write_csv(
            &dir.join("per_pair.csv"),
            "pair,trans_error_m,rot_error_deg",
            &per_pair_rows,
        )?;
        // Gnuplot-ready top-down view of both trajectories.
        let xy_rows: Vec<String> = est
            .iter()
            .zip(&gt)
            .map(|(e, g)| {
                format!(
                    "{},{},{},{}",
                    e.translation.x, e.translation.y, g.translation.x, g.translation.y
                )
            })
            .collect();
        write_csv(&dir.join("trajectory_xy.csv"), "est_x,est_y,gt_x,gt_y", &xy_rows)?;
        std::fs::write(dir.join("summary.txt"), summary_text(&report))?;
    }
    Ok(())
}

fn ablate_cmd(
    config_path: &Path,
    scans_dir: Option<&Path>,
    gt_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let mut config = load_config(Some(config_path), overrides)?;
    if let Some(dir) = scans_dir {
        config.scan_dir = Some(dir.to_path_buf());
    }
    let scan_dir = config
        .scan_dir
        .clone()
        .ok_or_else(|| CliError::Config("no scan directory (io.scan_dir or --scans)".into()))?;
    let gt_file = gt_path
        .map(Path::to_path_buf)
        .or_else(|| config.gt_trajectory.clone())
        .ok_or_else(|| {
            CliError::Config("no ground truth trajectory (io.gt_trajectory or --gt)".into())
        })?;
    let dir = out_dir(&config)?;

    let scans = read_scan_dir(&scan_dir)?;
    let gt: Vec<RigidTransform> = read_trajectory(&gt_file)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let timestamps = scan_timestamps(&scans);

    let modes = [Mode::P2P, Mode::P2PDor, Mode::P2PDr, Mode::Dicp];
    let mut rows = Vec::with_capacity(modes.len());
    println!(
        "{:<10} {:>14} {:>14} {:>15} {:>16}",
        "Method", "RPE Trans (m)", "RPE Rot (deg)", "Path Error (m)", "# Iters (mean)"
    );
    for mode in modes {
        let mut mode_config = config.clone();
        mode_config.solver.mode = mode;
        let result = run_odometry(&mode_config, &scans)?;
        let report = evaluate(&result.poses, &gt, Some(result.mean_iterations()))?;
        println!(
            "{:<10} {:>14.4} {:>14.4} {:>15.4} {:>16.2}",
            mode.label(),
            report.rpe_trans_rmse_m,
            report.rpe_rot_rmse_deg,
            report.path_error_m,
            result.mean_iterations()
        );
        rows.push(format!("{},{}", mode.label(), report_row(&report)));
        let est_rows: Vec<(f64, RigidTransform)> = timestamps
            .iter()
            .zip(&result.poses)
            .map(|(t, p)| (*t, *p))
            .collect();
        write_trajectory(&est_rows, &dir.join(format!("est_{mode}.txt")))?;
    }
    write_csv(
        &dir.join("ablation.csv"),
        &format!("Method,{REPORT_HEADER}"),
        &rows,
    )?;
    echo_config(&config, &dir)?;
    println!("ablation table written to {}", dir.join("ablation.csv").display());
    Ok(())
}
