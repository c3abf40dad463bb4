//! `pdr`: simulate walks, run the filter and score trajectories.
//!
//! Exit codes: 0 ok, 2 usage or input, 3 weight file, 4 data mismatch,
//! 5 numeric failure.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use commands::RunArgs;
use pdr_core::dataset::Format;
use pdr_core::geometry::Vec3;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pdr",
    version,
    about = "Pedestrian dead reckoning from phone IMU signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic walk: pose.csv, imu.csv and metadata.json.
    Simulate {
        /// Simulation spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Filter a recorded or simulated sequence and write iekf, inter, ndi and gt trajectories.
    Run {
        #[arg(long)]
        imu: PathBuf,
        /// Pose file; defaults to the IMU file for RIDI input.
        #[arg(long)]
        pose: Option<PathBuf>,
        /// World velocity at the first aligned sample, "vx,vy,vz".
        #[arg(long, value_parser = commands::parse_vec3, allow_hyphen_values = true)]
        init_velocity: Vec3,
        /// Filter configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// "constant" or a weight-file path.
        #[arg(long)]
        adapter: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: Format,
    },
    /// Compare trajectories against ground truth (ATE and RTE).
    Eval {
        /// Estimated trajectory, "name=path" or a path; repeatable.
        #[arg(long, required = true, value_parser = commands::parse_method)]
        est: Vec<(String, PathBuf)>,
        #[arg(long)]
        gt: PathBuf,
        /// RTE interval, s.
        #[arg(long, default_value_t = commands::DEFAULT_INTERVAL_S)]
        interval: f64,
        /// Report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { spec, out, seed } => commands::simulate(&spec, &out, seed),
        Command::Run {
            imu,
            pose,
            init_velocity,
            config,
            adapter,
            out,
            format,
        } => commands::run(&RunArgs {
            imu,
            pose,
            init_velocity,
            config,
            adapter,
            out,
            format,
        }),
        Command::Eval {
            est,
            gt,
            interval,
            out,
        } => commands::evaluate(&est, &gt, interval, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
