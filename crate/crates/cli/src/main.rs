//! `forkfleet`: simulate forklift fleets and analyse their trajectories.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 configuration or
//! usage error, 3 malformed input data, 4 infeasible analysis.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Common, Context};
use error::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(
    name = "forkfleet",
    version,
    about = "Forklift fleet simulation and trajectory analysis"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Road network: `.roadnet`, or `.xodr` converted on load.
    #[arg(long, global = true)]
    map: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Simulation or replay time step, s.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Scenario file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the fleet simulation; writes trajectory.csv, soc.csv, summary.csv.
    Simulate {
        #[arg(long)]
        vehicles: Option<usize>,
        /// Simulated time, s.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Resample a recorded trajectory and recompute SOC; writes replay.csv, soc.csv.
    Replay {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Convert an OpenDRIVE file to the native road network format.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// Waypoint spacing, m.
        #[arg(long)]
        spacing: Option<f64>,
        /// Output file name inside the output directory.
        #[arg(long, default_value = "map.roadnet")]
        output: String,
    },
    /// Detect congested clusters; writes clusters.csv, episodes.txt.
    AnalyzeDensity {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        distance_threshold: Option<f64>,
        #[arg(long)]
        velocity_threshold: Option<f64>,
        /// Seconds between snapshots.
        #[arg(long)]
        interval: Option<f64>,
    },
    /// Choose charging station nodes; writes placement.csv, heatmap.txt.
    PlaceChargers {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        min_separation: Option<f64>,
        #[arg(long)]
        d_scale: Option<f64>,
        #[arg(long)]
        cell_size: Option<f64>,
    },
    /// Fit battery coefficients to measured cycles; writes calibrated.conf, residuals.csv.
    Calibrate {
        /// CSV of `trajectory path, measured joules` rows.
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated coefficients to fit.
        #[arg(long, value_delimiter = ',', default_value = "c_rr")]
        free: Vec<String>,
    },
    /// Occupancy grid of a trajectory; writes heatmap.txt, heatmap_cells.csv.
    Heatmap {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        cell_size: Option<f64>,
    },
}

fn overrides(pairs: &[(&'static str, Option<String>)]) -> Vec<(&'static str, String)> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.clone().map(|v| (*k, v)))
        .collect()
}

fn text<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let c = cli.common;
    let common = Common {
        map: c.map,
        out_dir: c.out_dir,
        seed: c.seed,
        dt: c.dt,
        config: c.config,
    };
    match &cli.command {
        Command::Simulate { vehicles, duration } => {
            let o = overrides(&[
                ("vehicle_count", text(vehicles)),
                ("duration", text(duration)),
            ]);
            commands::simulate_cmd(Context::load(&common, &o)?)
        }
        Command::Replay { trajectory } => {
            commands::replay_cmd(Context::load(&common, &[])?, trajectory)
        }
        Command::Convert {
            input,
            spacing,
            output,
        } => {
            let o = overrides(&[("convert.spacing", text(spacing))]);
            commands::convert_cmd(Context::load(&common, &o)?, input, output)
        }
        Command::AnalyzeDensity {
            trajectory,
            distance_threshold,
            velocity_threshold,
            interval,
        } => {
            let o = overrides(&[
                ("density.distance_threshold", text(distance_threshold)),
                ("density.velocity_threshold", text(velocity_threshold)),
                ("density.snapshot_interval", text(interval)),
            ]);
            commands::density_cmd(Context::load(&common, &o)?, trajectory)
        }
        Command::PlaceChargers {
            trajectory,
            k,
            min_separation,
            d_scale,
            cell_size,
        } => {
            let o = overrides(&[
                ("placement.k", text(k)),
                ("placement.min_separation", text(min_separation)),
                ("placement.d_scale", text(d_scale)),
                ("placement.cell_size", text(cell_size)),
            ]);
            commands::place_cmd(Context::load(&common, &o)?, trajectory)
        }
        Command::Calibrate { manifest, free } => {
            commands::calibrate_cmd(Context::load(&common, &[])?, manifest, free)
        }
        Command::Heatmap {
            trajectory,
            cell_size,
        } => {
            let o = overrides(&[("placement.cell_size", text(cell_size))]);
            commands::heatmap_cmd(Context::load(&common, &o)?, trajectory)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_USAGE as u8
            } else {
                EXIT_OK as u8
            });
        }
    };
    match run(cli) {
        Ok(_) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
