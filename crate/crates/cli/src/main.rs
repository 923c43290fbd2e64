//! `fretsense`: emulate the instrument, calibrate and validate it, run the
//! live service and replay sessions.

mod calibrate;
mod emulate;
mod serve;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fretsense_core::emulator::EmulatorConfig;

#[derive(Debug, Parser)]
#[command(name = "fretsense", version, about = "Force-sensing fretboard toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a binary frame stream from a press scenario.
    Emulate(emulate::EmulateArgs),
    /// Sweep modules against the emulated rig and fit calibration curves.
    Calibrate(calibrate::CalibrateArgs),
    /// Score a calibration set with randomized loads and write fleet reports.
    Validate(validate::ValidateArgs),
    /// Rebuild histograms and the fleet summary from validation results.
    Report(validate::ReportArgs),
    /// Run the live acquisition service.
    Serve(serve::ServeArgs),
    /// Re-publish a recording or a binary capture.
    Replay(serve::ReplayArgs),
}

/// Emulator selection shared by the subcommands that drive one.
#[derive(Debug, Clone, Args)]
pub struct EmulatorArgs {
    /// Emulator configuration file (key = value).
    #[arg(long, conflicts_with = "noiseless")]
    pub config: Option<PathBuf>,
    /// Start from the noise-free, drift-free configuration.
    #[arg(long)]
    pub noiseless: bool,
    /// Seed for every random draw; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl EmulatorArgs {
    pub fn load(&self) -> Result<EmulatorConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => EmulatorConfig::load(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
            None if self.noiseless => EmulatorConfig::noiseless(),
            None => EmulatorConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// A failed run and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or unreadable input files (exit 1).
    Input(anyhow::Error),
    /// Anything that went wrong while running (exit 2).
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn input(e: impl std::fmt::Display) -> Self {
        Failure::Input(anyhow::anyhow!("{e}"))
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(anyhow::anyhow!("{e}"))
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Cmd::Emulate(a) => emulate::run(a),
        Cmd::Calibrate(a) => calibrate::run(a),
        Cmd::Validate(a) => validate::run(a),
        Cmd::Report(a) => validate::report(a),
        Cmd::Serve(a) => serve::serve(a),
        Cmd::Replay(a) => serve::replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
