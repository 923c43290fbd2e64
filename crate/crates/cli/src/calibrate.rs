use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use fretsense_core::calibration::{
    calibrate_modules, write_sample_lines, EmulatorRig, ModuleFailure, BASELINE_FRAMES,
    R_SQUARED_GATE,
};
use fretsense_core::emulator::Emulator;
use fretsense_core::model::ModuleId;
use log::{info, warn};

use crate::{CmdResult, EmulatorArgs, Failure};

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("which").required(true).args(["all", "module"]))]
pub struct CalibrateArgs {
    #[command(flatten)]
    emulator: EmulatorArgs,
    /// Calibrate all 72 modules.
    #[arg(long)]
    all: bool,
    /// Calibrate one module.
    #[arg(long, num_args = 2, value_names = ["FRET", "STRING"])]
    module: Option<Vec<i64>>,
    /// Calibration set to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write every sweep sample (`fret string applied_N counts`).
    #[arg(long)]
    raw_out: Option<PathBuf>,
    /// Minimum R² for a curve to be written.
    #[arg(long, default_value_t = R_SQUARED_GATE)]
    gate: f64,
    /// Write curves that miss the R² gate anyway.
    #[arg(long)]
    force: bool,
}

pub fn run(args: CalibrateArgs) -> CmdResult {
    let cfg = args.emulator.load()?;
    let modules: Vec<ModuleId> = match &args.module {
        Some(fs) => vec![ModuleId::new(fs[0], fs[1]).map_err(Failure::input)?],
        None => ModuleId::all().collect(),
    };
    let emu = Emulator::new(cfg).map_err(Failure::input)?;
    let started = Instant::now();
    let mut rig = EmulatorRig::new(emu, BASELINE_FRAMES).map_err(Failure::runtime)?;
    let baseline = *rig.baseline();
    let mut fleet = calibrate_modules(&modules, &mut rig, Some(baseline), args.gate);

    if args.force {
        for (_, f) in &fleet.failures {
            if let ModuleFailure::Gate { curve, .. } = f {
                warn!("writing {} below the gate (R² {:.4})", curve.module, curve.r_squared);
                fleet.set.insert(*curve);
            }
        }
        fleet
            .failures
            .retain(|(_, f)| !matches!(f, ModuleFailure::Gate { .. }));
    }

    std::fs::write(&args.out, fleet.set.to_text())
        .map_err(|e| Failure::runtime(format!("{}: {e}", args.out.display())))?;
    if let Some(raw) = &args.raw_out {
        std::fs::write(raw, write_sample_lines(&fleet.samples))
            .map_err(|e| Failure::runtime(format!("{}: {e}", raw.display())))?;
    }
    info!(
        "calibrated {} of {} modules in {:.1} s",
        fleet.set.len(),
        modules.len(),
        started.elapsed().as_secs_f64()
    );

    let min_r2 = fleet
        .set
        .curves
        .values()
        .map(|c| c.r_squared)
        .fold(f64::INFINITY, f64::min);
    println!("calibrated = {}", fleet.set.len());
    println!("failed = {}", fleet.failures.len());
    if min_r2.is_finite() {
        println!("min_r_squared = {min_r2:.6}");
    }
    for (m, f) in &fleet.failures {
        println!("failure {} {} {f}", m.fret(), m.string());
    }
    if fleet.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "{} module(s) failed calibration",
            fleet.failures.len()
        )))
    }
}
