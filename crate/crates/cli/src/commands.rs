use crate::config::{load_run_config, load_simulation_spec, SimulationSpec};
use crate::error::CliError;
use pdr_core::adapter::{load_weights, ConstantAdapter, LearnedAdapter, NoiseAdapter};
use pdr_core::dataset::{self, Format, PoseRecord};
use pdr_core::eval::{self, Trajectory};
use pdr_core::geometry::{wxyz_from_rotation, Vec3};
use pdr_core::iekf::{self, FilterConfig, InitialCondition};
use pdr_core::sim::{generate_trajectory, synthesize_imu};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

pub const IMU_FILE: &str = "imu.csv";
pub const POSE_FILE: &str = "pose.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const DEFAULT_INTERVAL_S: f64 = 60.0;

/// Parses `"vx,vy,vz"`.
pub fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut v = Vec3::zeros();
    for (i, p) in parts.iter().enumerate() {
        v[i] = p
            .parse::<f64>()
            .map_err(|_| format!("{p:?} is not a number"))?;
        if !v[i].is_finite() {
            return Err(format!("{p:?} is not finite"));
        }
    }
    Ok(v)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Serialize)]
struct SimulationMetadata<'a> {
    seed: u64,
    samples: usize,
    duration_s: f64,
    sample_rate_hz: f64,
    /// World velocity at the first sample, the value `run --init-velocity` needs.
    initial_velocity: [f64; 3],
    files: [&'static str; 2],
    spec: &'a SimulationSpec,
}

pub fn simulate(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec = load_simulation_spec(spec_path)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let gt = generate_trajectory(&spec.trajectory)?;
    let imu = synthesize_imu(&gt, &spec.noise, spec.seed)?;
    create_dir(out_dir)?;

    let poses: Vec<PoseRecord> = gt
        .iter()
        .map(|g| PoseRecord {
            t_ns: g.t_ns,
            position: g.position,
            orientation: wxyz_from_rotation(&g.orientation),
        })
        .collect();
    dataset::write_poses(&out_dir.join(POSE_FILE), &poses)?;
    dataset::write_imu(&out_dir.join(IMU_FILE), &imu.samples)?;

    let v0 = gt[0].velocity;
    let meta = SimulationMetadata {
        seed: spec.seed,
        samples: gt.len(),
        duration_s: gt.last().map_or(0.0, |g| g.t_s()),
        sample_rate_hz: spec.trajectory.sample_rate_hz,
        initial_velocity: [v0.x, v0.y, v0.z],
        files: [POSE_FILE, IMU_FILE],
        spec: &spec,
    };
    let path = out_dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::usage(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    println!(
        "wrote {} samples ({:.1} s) to {}",
        gt.len(),
        meta.duration_s,
        out_dir.display()
    );
    Ok(())
}

pub struct RunArgs {
    pub imu: PathBuf,
    pub pose: Option<PathBuf>,
    pub init_velocity: Vec3,
    pub config: Option<PathBuf>,
    pub adapter: Option<String>,
    pub out: PathBuf,
    pub format: Format,
}

fn make_adapter(choice: &str, cfg: &FilterConfig) -> Result<Box<dyn NoiseAdapter>, CliError> {
    if choice == "constant" {
        return Ok(Box::new(ConstantAdapter::new(cfg.measurement.sigma0)));
    }
    let weights = load_weights(Path::new(choice))
        .map_err(|e| CliError::new(crate::error::WEIGHTS, format!("{choice}: {e}")))?;
    Ok(Box::new(LearnedAdapter::new(weights)?))
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let rc = load_run_config(args.config.as_deref())?;
    let cfg = rc.filter();
    let choice = args
        .adapter
        .clone()
        .or(rc.adapter)
        .unwrap_or_else(|| "constant".into());
    let mut adapter = make_adapter(&choice, &cfg)?;

    let pose_path = match (&args.pose, args.format) {
        (Some(p), _) => p.clone(),
        (None, Format::Ridi) => args.imu.clone(),
        (None, Format::Canonical) => {
            return Err(CliError::usage("--pose is required for canonical input"))
        }
    };
    let (imu, poses) = dataset::load_sequence(&args.imu, &pose_path, args.format)?;
    let seq = dataset::synchronize(&imu, &poses)?;
    let imu = seq.imu();
    let gt = seq.ground_truth();
    let init = InitialCondition {
        pose: gt[0],
        velocity: args.init_velocity,
    };

    let out = iekf::run_sequence(&imu, &init, &cfg, adapter.as_mut())?;
    let methods = vec![
        ("iekf".to_string(), Trajectory::from_outputs(&out)),
        (
            "inter".to_string(),
            eval::inter_trajectory(&out, &init.pose.position),
        ),
        ("ndi".to_string(), eval::ndi_baseline(&imu, &init, &cfg)?),
    ];
    let gt = Trajectory::from_ground_truth(&gt);

    create_dir(&args.out)?;
    for (name, traj) in &methods {
        eval::write_trajectory(&args.out.join(format!("{name}.csv")), traj)?;
    }
    eval::write_trajectory(&args.out.join("gt.csv"), &gt)?;
    let report = eval::compare(&methods, &gt, DEFAULT_INTERVAL_S)?;
    print!("{}", report.to_table());
    println!(
        "wrote iekf.csv, inter.csv, ndi.csv and gt.csv to {}",
        args.out.display()
    );
    Ok(())
}

/// `name=path`, or a bare path named after its file stem.
pub fn parse_method(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        Some(_) => Err(format!("expected name=path, got {s:?}")),
        None => {
            let path = PathBuf::from(s);
            let name = path
                .file_stem()
                .and_then(|n| n.to_str())
                .ok_or_else(|| format!("no file name in {s:?}"))?;
            Ok((name.to_string(), path))
        }
    }
}

pub fn evaluate(
    est: &[(String, PathBuf)],
    gt: &Path,
    interval_s: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !(interval_s > 0.0 && interval_s.is_finite()) {
        return Err(CliError::usage("--interval must be positive"));
    }
    let gt = eval::read_trajectory(gt)?;
    let methods = est
        .iter()
        .map(|(name, path)| Ok((name.clone(), eval::read_trajectory(path)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = eval::compare(&methods, &gt, interval_s)?;
    print!("{}", report.to_table());
    if let Some(path) = out {
        fs::write(path, report.to_csv()).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
