//! `cathtrack` command-line interface.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cathtrack::studies::StudyKind;
use cathtrack::Error;

#[derive(Debug, Parser)]
#[command(name = "cathtrack", version, about = "Biplane shape and roll tracking of marker-equipped catheters")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each can also be set through the
/// environment variable shown in `--help`.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, env = "CATHTRACK_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true, env = "CATHTRACK_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "CATHTRACK_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "CATHTRACK_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one biplane frame: planar markers, truth and optional images.
    Simulate {
        /// Also render front.pgm and side.pgm.
        #[arg(long)]
        render: bool,
        /// Planar uncertainty radius in mm (overrides the configuration).
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Segment and label markers in a PGM frame.
    Segment {
        #[arg(long)]
        image: PathBuf,
    },
    /// Match and triangulate front/side marker CSVs.
    Reconstruct {
        #[arg(long)]
        front: PathBuf,
        #[arg(long)]
        side: PathBuf,
    },
    /// Estimate shape and roll from a reconstructed marker CSV.
    Estimate {
        #[arg(long)]
        markers: PathBuf,
        /// Modal order; repeat for several.
        #[arg(long = "order")]
        orders: Vec<usize>,
    },
    /// Run a Monte-Carlo design study.
    Study {
        #[arg(long)]
        kind: Option<StudyKind>,
        /// Configurations per design point.
        #[arg(long)]
        configurations: Option<usize>,
        /// Modal order; repeat for several.
        #[arg(long = "order")]
        orders: Vec<usize>,
    },
    /// Segment, reconstruct and estimate from a front/side PGM pair.
    Pipeline {
        #[arg(long)]
        front: PathBuf,
        #[arg(long)]
        side: PathBuf,
        /// Modal order; repeat for several.
        #[arg(long = "order")]
        orders: Vec<usize>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Segment { .. } => "segment",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Estimate { .. } => "estimate",
            Command::Study { .. } => "study",
            Command::Pipeline { .. } => "pipeline",
            Command::Config => "config",
        }
    }
}

/// Machine-readable failure report printed on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub exit_code: u8,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

impl ErrorReport {
    pub fn from_error(e: &Error) -> Self {
        let stage = match e {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        };
        let (error, exit_code, field) = match e.root() {
            Error::Config { field, .. } => ("config", EXIT_CONFIG, Some(field.clone())),
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse(_) => ("io", EXIT_IO, None),
            _ => ("numerical", EXIT_NUMERICAL, None),
        };
        Self {
            error,
            message: e.to_string(),
            stage,
            field,
            exit_code,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport::from_error(&e);
            eprintln!("{}", serde_json::to_string(&report).expect("plain struct"));
            ExitCode::from(report.exit_code)
        }
    }
}
