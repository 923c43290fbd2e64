use std::path::{Path, PathBuf};

use clap::Args;
use fretsense_core::calibration::{
    fleet_report, parse_validation_results, validate_module, validation_results_to_text,
    CalibrationSet, EmulatorRig, FleetReport, BASELINE_FRAMES, DEFAULT_TRIALS,
};
use fretsense_core::emulator::Emulator;
use log::{info, warn};

use crate::{CmdResult, EmulatorArgs, Failure};

pub const RESULTS_FILE: &str = "validation.txt";
pub const SUMMARY_FILE: &str = "fleet_summary.txt";
pub const RMSE_CSV: &str = "rmse_histogram.csv";
pub const WORST_CSV: &str = "worst_histogram.csv";

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    emulator: EmulatorArgs,
    /// Calibration set to score.
    #[arg(long)]
    calset: PathBuf,
    /// Random loads per module.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// Directory for results, summary and histograms.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Validation results written by `validate`.
    #[arg(long)]
    results: PathBuf,
    /// Directory for summary and histograms.
    #[arg(long)]
    out_dir: PathBuf,
}

fn write(dir: &Path, name: &str, text: &str) -> CmdResult {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn write_report(dir: &Path, report: &FleetReport) -> CmdResult {
    write(dir, SUMMARY_FILE, &report.summary_text())?;
    write(dir, RMSE_CSV, &report.rmse_histogram.to_csv())?;
    write(dir, WORST_CSV, &report.worst_histogram.to_csv())?;
    print!("{}", report.summary_text());
    Ok(())
}

fn check_dir(dir: &Path) -> CmdResult {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::input(format!("{} is not a directory", dir.display())))
    }
}

pub fn run(args: ValidateArgs) -> CmdResult {
    check_dir(&args.out_dir)?;
    if args.trials == 0 {
        return Err(Failure::input("--trials must be at least 1"));
    }
    let cfg = args.emulator.load()?;
    let set = CalibrationSet::load(&args.calset)
        .map_err(|e| Failure::input(format!("{}: {e}", args.calset.display())))?;
    if set.is_empty() {
        return Err(Failure::input(format!("{} holds no curves", args.calset.display())));
    }
    let seed = cfg.seed;
    let emu = Emulator::new(cfg).map_err(Failure::input)?;
    let mut rig = match set.baseline {
        Some(b) => EmulatorRig::with_baseline(emu, b, 0),
        None => {
            warn!("calibration set has no baseline; capturing one now");
            EmulatorRig::new(emu, BASELINE_FRAMES).map_err(Failure::runtime)?
        }
    };

    let mut results = Vec::with_capacity(set.len());
    for curve in set.curves.values() {
        let r = validate_module(curve.module, curve, &mut rig, args.trials, seed)
            .map_err(Failure::runtime)?;
        results.push(r);
    }
    let report = fleet_report(&results);
    if !report.is_complete() {
        warn!("{} modules have no curve and were not validated", report.missing.len());
    }
    if report.low_confidence {
        warn!("only {} trials per module; statistics are low-confidence", args.trials);
    }
    write(&args.out_dir, RESULTS_FILE, &validation_results_to_text(&results))?;
    write_report(&args.out_dir, &report)?;
    info!("validated {} modules", results.len());
    Ok(())
}

pub fn report(args: ReportArgs) -> CmdResult {
    check_dir(&args.out_dir)?;
    let text = std::fs::read_to_string(&args.results)
        .map_err(|e| Failure::input(format!("{}: {e}", args.results.display())))?;
    let results = parse_validation_results(&text)
        .map_err(|e| Failure::input(format!("{}: {e}", args.results.display())))?;
    if results.is_empty() {
        return Err(Failure::input(format!("{} has no results", args.results.display())));
    }
    write_report(&args.out_dir, &fleet_report(&results))
}
