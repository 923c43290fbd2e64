use thiserror::Error;

use super::{CalibrationCurve, CalibrationSample};

pub const MIN_FIT_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("{0} samples, need at least {MIN_FIT_SAMPLES}")]
    InsufficientData(usize),
    #[error("counts have zero variance")]
    ConstantCounts,
    #[error("forces have zero variance")]
    ConstantForce,
    #[error("samples mix several modules")]
    MixedModules,
    #[error("non-finite sample value")]
    NonFinite,
}

/// Ordinary least squares of force on counts.
///
/// Sums are taken about the means so that large count offsets do not cost
/// precision.
pub fn fit_linear(samples: &[CalibrationSample]) -> Result<CalibrationCurve, FitError> {
    let n = samples.len();
    if n < MIN_FIT_SAMPLES {
        return Err(FitError::InsufficientData(n));
    }
    let module = samples[0].module;
    if samples.iter().any(|s| s.module != module) {
        return Err(FitError::MixedModules);
    }
    if samples
        .iter()
        .any(|s| !s.counts.is_finite() || !s.applied_force.is_finite())
    {
        return Err(FitError::NonFinite);
    }

    let nf = n as f64;
    let mean_c = samples.iter().map(|s| s.counts).sum::<f64>() / nf;
    let mean_f = samples.iter().map(|s| s.applied_force).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for s in samples {
        let dc = s.counts - mean_c;
        let df = s.applied_force - mean_f;
        sxx += dc * dc;
        sxy += dc * df;
        syy += df * df;
    }
    if sxx == 0.0 {
        return Err(FitError::ConstantCounts);
    }
    if syy == 0.0 {
        return Err(FitError::ConstantForce);
    }
    let slope = sxy / sxx;
    let intercept = mean_f - slope * mean_c;
    let ss_res: f64 = samples
        .iter()
        .map(|s| {
            let r = s.applied_force - (slope * s.counts + intercept);
            r * r
        })
        .sum();
    let r_squared = (1.0 - ss_res / syy).clamp(0.0, 1.0);

    Ok(CalibrationCurve {
        module,
        slope,
        intercept,
        r_squared,
        n_samples: n,
    })
}
