//! Per-module calibration: sweeps against a ground-truth rig, linear
//! counts-to-newtons fits, reference-channel temperature compensation,
//! randomized validation and fleet-level reporting.

mod compensation;
mod files;
mod fit;
mod fleet;
mod report;
mod sweep;

pub use compensation::{
    capture_baseline, passthrough, temp_compensate, BaselineError, BaselineReference,
    CompensatedCounts, CompensationError, BASELINE_FRAMES, BASELINE_SIGMA_GUARD,
};
pub use files::{
    parse_sample_lines, parse_validation_results, validation_results_to_text, write_sample_lines,
    CalibrationSet, FormatError, CALSET_HEADER, VALIDATION_HEADER,
};
pub use fleet::{calibrate_modules, FleetCalibration, ModuleFailure};
pub use fit::{fit_linear, FitError, MIN_FIT_SAMPLES};
pub use report::{
    fleet_report, FleetReport, Histogram, LOW_CONFIDENCE_TRIALS, RMSE_TARGET_N,
    WORST_TARGET_PCT_FSO,
};
pub use sweep::{
    capture_idle_baseline, run_sweep, sweep_schedule, validate_module, EmulatorRig, Measurement,
    RecordedSource, SampleSource, SourceError, SweepError, ValidationError, DEFAULT_TRIALS,
    SWEEP_STEP_N, SWEEP_TRIALS,
};

use crate::model::{clamp_force, ModuleId, FULL_SCALE};

/// One ground-truth force paired with the module's compensated reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub module: ModuleId,
    pub applied_force: f64,
    pub counts: f64,
}

/// Affine counts-to-newtons map for one module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationCurve {
    pub module: ModuleId,
    /// Newtons per count.
    pub slope: f64,
    /// Newtons at zero counts.
    pub intercept: f64,
    pub r_squared: f64,
    pub n_samples: usize,
}

impl CalibrationCurve {
    pub fn is_valid(&self) -> bool {
        self.slope.is_finite() && self.slope != 0.0 && self.intercept.is_finite()
    }

    pub fn passes_gate(&self, min_r_squared: f64) -> bool {
        self.is_valid() && self.r_squared >= min_r_squared
    }

    /// Counts at which the curve reads 0 N.
    pub fn zero_crossing(&self) -> f64 {
        -self.intercept / self.slope
    }
}

/// Default acceptance gate on the coefficient of determination.
pub const R_SQUARED_GATE: f64 = 0.99;

pub fn counts_to_force(counts: f64, curve: &CalibrationCurve) -> f64 {
    clamp_force(curve.slope * counts + curve.intercept)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationResult {
    pub module: ModuleId,
    pub rmse: f64,
    /// Largest absolute error as a percentage of the 25 N full scale.
    pub worst_error_pct_fso: f64,
    pub n_trials: usize,
}

impl ValidationResult {
    /// Metrics over signed errors (estimated minus true). `None` when empty.
    pub fn from_errors(module: ModuleId, errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
        let worst = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        Some(ValidationResult {
            module,
            rmse: mse.sqrt(),
            worst_error_pct_fso: worst / FULL_SCALE * 100.0,
            n_trials: errors.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(slope: f64, intercept: f64) -> CalibrationCurve {
        CalibrationCurve {
            module: ModuleId::new(1, 1).unwrap(),
            slope,
            intercept,
            r_squared: 1.0,
            n_samples: 102,
        }
    }

    #[test]
    fn counts_to_force_examples() {
        let c = curve(0.01, -8.0);
        assert_eq!(c.zero_crossing(), 800.0);
        assert_eq!(counts_to_force(800.0, &c), 0.0);
        assert_eq!(counts_to_force(500.0, &c), 0.0);
        // 0.01 * 1800 - 8 = 10
        assert!((counts_to_force(1800.0, &c) - 10.0).abs() < 1e-12);
        assert!((counts_to_force(1234.0, &c) - 4.34).abs() < 1e-12);
        assert_eq!(counts_to_force(4095.0, &c), 25.0);
    }

    #[test]
    fn metrics_examples() {
        let m = ModuleId::new(2, 2).unwrap();
        let r = ValidationResult::from_errors(m, &[0.3, -0.3]).unwrap();
        assert!((r.rmse - 0.3).abs() < 1e-15);
        assert!((r.worst_error_pct_fso - 1.2).abs() < 1e-12);
        let z = ValidationResult::from_errors(m, &[0.0; 5]).unwrap();
        assert_eq!((z.rmse, z.worst_error_pct_fso), (0.0, 0.0));
        assert!(ValidationResult::from_errors(m, &[]).is_none());
    }

    #[test]
    fn gate_checks_validity_and_r_squared() {
        let mut c = curve(0.01, -8.0);
        assert!(c.passes_gate(R_SQUARED_GATE));
        c.r_squared = 0.98;
        assert!(!c.passes_gate(R_SQUARED_GATE));
        assert!(!curve(0.0, 1.0).passes_gate(0.0));
        assert!(!curve(f64::NAN, 1.0).passes_gate(0.0));
    }
}
