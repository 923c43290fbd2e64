use thiserror::Error;

use crate::model::ModuleId;

use super::compensation::BaselineReference;
use super::files::CalibrationSet;
use super::fit::{fit_linear, FitError};
use super::sweep::{run_sweep, SampleSource, SweepError};
use super::{CalibrationCurve, CalibrationSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModuleFailure {
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("R² {:.4} below gate {gate}", curve.r_squared)]
    Gate { curve: CalibrationCurve, gate: f64 },
}

/// Outcome of sweeping and fitting a list of modules.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetCalibration {
    /// Curves that cleared the gate.
    pub set: CalibrationSet,
    /// Every sample collected, in sweep order.
    pub samples: Vec<CalibrationSample>,
    pub failures: Vec<(ModuleId, ModuleFailure)>,
}

/// Sweeps and fits each module in turn. A failing module is recorded and
/// the rest carry on.
pub fn calibrate_modules(
    modules: &[ModuleId],
    source: &mut dyn SampleSource,
    baseline: Option<BaselineReference>,
    gate: f64,
) -> FleetCalibration {
    let mut out = FleetCalibration {
        set: CalibrationSet::new(baseline),
        samples: Vec::new(),
        failures: Vec::new(),
    };
    for &m in modules {
        let samples = match run_sweep(m, source) {
            Ok(s) => s,
            Err(e) => {
                out.failures.push((m, e.into()));
                continue;
            }
        };
        let fit = fit_linear(&samples);
        out.samples.extend(samples);
        match fit {
            Ok(curve) if curve.passes_gate(gate) => out.set.insert(curve),
            Ok(curve) => out.failures.push((m, ModuleFailure::Gate { curve, gate })),
            Err(e) => out.failures.push((m, e.into())),
        }
    }
    out
}
