//! `pctof`: simulate, calibrate, measure, validate and compare.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, Overrides, RunConfig};
use pctof_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "pctof",
    version,
    about = "Pulsed correlation time-of-flight lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; the built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every noise stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Depth of interest in meters.
    #[arg(long, global = true)]
    doi: Option<f64>,
    /// Read noise as a fraction of the brightest pulsed tap.
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Scene preset: plane, ramps or stairs-<h>mm.
    #[arg(long, global = true)]
    scene: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render tap frames and ground truth for the configured scene.
    Simulate,
    /// Calibrate against a simulated plane at the reference depth.
    Calibrate,
    /// Coarse sinusoid estimate, then pulsed reconstruction around the DOI.
    Measure {
        /// Calibration container; defaults to <out>/calibration.bin.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Rail sweep of a plane around the DOI against ground truth.
    Validate {
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Monte-Carlo comparison of sinusoid and pulsed operation.
    Compare {
        /// Reuse a calibration instead of building one.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
}

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CALIBRATION: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::CalibrationFailure { .. } | CoreError::ReferenceOutOfRange { .. } => {
                    EXIT_CALIBRATION
                }
                CoreError::Io(_) | CoreError::Format { .. } => EXIT_IO,
                _ => EXIT_OTHER,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        doi: cli.doi,
        noise: cli.noise,
        scene: cli.scene,
    };
    let cfg = RunConfig::load(cli.config.as_deref())?.apply(&overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Calibrate => commands::calibrate(&cfg),
        Command::Measure { calibration } => commands::measure(&cfg, calibration.as_deref()),
        Command::Validate { calibration } => commands::validate(&cfg, calibration.as_deref()),
        Command::Compare { calibration } => commands::compare(&cfg, calibration.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
