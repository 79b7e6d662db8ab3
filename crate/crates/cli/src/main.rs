// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;
mod scenario;

/// LiDAR–camera extrinsic calibration from chessboard reflectance.
#[derive(Debug, Parser)]
#[command(name = "ilcc", version, about)]
struct Cli {
    /// Worker threads for per-frame and per-repeat work.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a scan into object segments.
    Segment {
        cloud: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Per-point CSV with a `segment` column.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Locate the chessboard and map its points onto the board plane.
    FindBoard {
        cloud: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Board points with their board-plane coordinates.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the interior chessboard corners of a scan.
    #[command(name = "corners-3d")]
    Corners3d {
        cloud: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Classified board points with fitted model coordinates.
        #[arg(long)]
        debug_dump: Option<PathBuf>,
    },
    /// Solve for the LiDAR-to-camera pose over all frames of a manifest.
    Calibrate {
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-projection report of given extrinsics for every frame.
    Evaluate {
        #[arg(long)]
        extrinsics: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic scans, image corners and ground truth.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Corner-error statistics over a range of noise levels or distances.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// `noise=1,2,3` or `distance=1,1.5,2`.
        #[arg(long)]
        vary: commands::Vary,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.into())
        .build_global()
    {
        eprintln!("error: cannot start worker threads: {e}");
        return ExitCode::from(1);
    }

    let result = match cli.command {
        Command::Segment { cloud, config, out } => commands::segment(&cloud, config.config.as_deref(), out.as_deref()),
        Command::FindBoard { cloud, config, out } => commands::find_board(&cloud, config.config.as_deref(), out.as_deref()),
        Command::Corners3d { cloud, config, out, debug_dump } => {
            commands::corners_3d(&cloud, config.config.as_deref(), &out, debug_dump.as_deref())
        }
        Command::Calibrate { frames, config, out } => commands::calibrate(&frames, config.config.as_deref(), &out),
        Command::Evaluate { extrinsics, frames, config, out } => {
            commands::evaluate(&extrinsics, &frames, config.config.as_deref(), out.as_deref())
        }
        Command::Simulate { scenario, out_dir } => commands::simulate(&scenario, &out_dir),
        Command::Sweep { scenario, vary, repeats, seed, out } => commands::sweep(&scenario, &vary, repeats, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(1)
        }
    }
}
