//! Reference-channel temperature compensation.
//!
//! Each fret carries a seventh sensor facing a fixed surface. Temperature
//! shifts every sensor of a fret by the same amount, so subtracting the
//! reference channel's departure from its calibration-time value removes
//! the shift from the six string sensors.

use thiserror::Error;

use crate::model::{zero_grid, Grid, RawFrame, ADC_MAX, N_ACTIVE_FRETS, N_STRINGS};

/// Idle frames averaged into a baseline by default.
pub const BASELINE_FRAMES: usize = 20;
/// Largest tolerated reference standard deviation while capturing, counts.
pub const BASELINE_SIGMA_GUARD: f64 = 5.0;

/// Per-fret reference counts captured with the instrument idle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineReference {
    pub per_fret: [u16; N_ACTIVE_FRETS],
}

impl BaselineReference {
    pub fn uniform(counts: u16) -> Self {
        BaselineReference {
            per_fret: [counts; N_ACTIVE_FRETS],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompensationError {
    #[error("no baseline reference captured; use pass-through explicitly to skip compensation")]
    MissingBaseline,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("no frames to capture a baseline from")]
    NoFrames,
    #[error("fret {fret} reference unstable: sigma {sigma:.2} counts exceeds {BASELINE_SIGMA_GUARD}")]
    Unstable { fret: usize, sigma: f64 },
}

/// String-sensor counts after compensation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompensatedCounts {
    pub counts: Grid<u16>,
    /// Cells whose corrected value had to be clamped into the ADC range.
    pub clamped: Grid<bool>,
}

impl CompensatedCounts {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().flatten().any(|&c| c)
    }
}

/// `c'[f][s] = c[f][s] - (ref[f] - baseline[f])`, clamped to `[0, 4095]`.
pub fn temp_compensate(
    frame: &RawFrame,
    baseline: Option<&BaselineReference>,
) -> Result<CompensatedCounts, CompensationError> {
    let baseline = baseline.ok_or(CompensationError::MissingBaseline)?;
    let mut counts = zero_grid::<u16>();
    let mut clamped = zero_grid::<bool>();
    for r in 0..N_ACTIVE_FRETS {
        let shift = frame.reference(r) as i32 - baseline.per_fret[r] as i32;
        for s in 0..N_STRINGS {
            let v = frame.counts[r][s] as i32 - shift;
            let c = v.clamp(0, ADC_MAX as i32);
            counts[r][s] = c as u16;
            clamped[r][s] = c != v;
        }
    }
    Ok(CompensatedCounts { counts, clamped })
}

/// String-sensor counts with no compensation applied.
pub fn passthrough(frame: &RawFrame) -> CompensatedCounts {
    let mut counts = zero_grid::<u16>();
    for (out, row) in counts.iter_mut().zip(frame.counts.iter()) {
        out.copy_from_slice(&row[..N_STRINGS]);
    }
    CompensatedCounts {
        counts,
        clamped: zero_grid(),
    }
}

/// Mean reference count per fret over idle frames, rounded to the nearest
/// count.
pub fn capture_baseline(frames: &[RawFrame]) -> Result<BaselineReference, BaselineError> {
    if frames.is_empty() {
        return Err(BaselineError::NoFrames);
    }
    let n = frames.len() as f64;
    let mut per_fret = [0u16; N_ACTIVE_FRETS];
    for (r, slot) in per_fret.iter_mut().enumerate() {
        let mean = frames.iter().map(|f| f.reference(r) as f64).sum::<f64>() / n;
        let var = frames
            .iter()
            .map(|f| (f.reference(r) as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let sigma = var.sqrt();
        if sigma > BASELINE_SIGMA_GUARD {
            return Err(BaselineError::Unstable { fret: r + 1, sigma });
        }
        *slot = mean.round() as u16;
    }
    Ok(BaselineReference { per_fret })
}
