//! Driving the calibration rig: load/unload sweeps and randomized
//! validation trials.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::emulator::{Emulator, Scenario};
use crate::model::{clamp_force, zero_grid, ModuleId, RawFrame, FORCE_MAX, FRAME_PERIOD_MS};

use super::compensation::{capture_baseline, temp_compensate, BaselineError, BaselineReference};
use super::{counts_to_force, CalibrationCurve, CalibrationSample, ValidationResult};

pub const SWEEP_STEP_N: f64 = 1.0;
pub const SWEEP_TRIALS: usize = 2;
pub const DEFAULT_TRIALS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error("source timed out")]
    Timeout,
    #[error("no more recorded samples for module {0}")]
    Exhausted(ModuleId),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    /// Samples collected before the failure; unusable for fitting.
    #[error("sweep of {module} aborted after {} samples: {source}", partial.len())]
    Aborted {
        module: ModuleId,
        partial: Vec<CalibrationSample>,
        #[source]
        source: SourceError,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("validation needs at least one trial")]
    NoTrials,
    #[error("validation of {module} rejected after {completed} trials: {source}")]
    Source {
        module: ModuleId,
        completed: usize,
        #[source]
        source: SourceError,
    },
}

/// What the rig reports for one applied load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Load-cell reading, N.
    pub applied_force: f64,
    /// Temperature-compensated counts of the loaded module.
    pub counts: f64,
    pub clamped: bool,
}

/// Anything that can load one module and report ground truth plus counts.
pub trait SampleSource {
    fn measure(&mut self, module: ModuleId, target_force: f64) -> Result<Measurement, SourceError>;
}

/// Loading schedule: 0 to 25 N and back in 1 N steps, twice.
pub fn sweep_schedule() -> Vec<f64> {
    let steps = (FORCE_MAX / SWEEP_STEP_N).round() as usize;
    let up = (0..=steps).map(|i| i as f64 * SWEEP_STEP_N);
    let down = (0..steps).rev().map(|i| i as f64 * SWEEP_STEP_N);
    let one: Vec<f64> = up.chain(down).collect();
    one.iter().copied().cycle().take(one.len() * SWEEP_TRIALS).collect()
}

pub fn run_sweep(
    module: ModuleId,
    source: &mut dyn SampleSource,
) -> Result<Vec<CalibrationSample>, SweepError> {
    let schedule = sweep_schedule();
    let mut samples = Vec::with_capacity(schedule.len());
    for target in schedule {
        match source.measure(module, target) {
            Ok(m) => samples.push(CalibrationSample {
                module,
                applied_force: m.applied_force,
                counts: m.counts,
            }),
            Err(source) => {
                return Err(SweepError::Aborted {
                    module,
                    partial: samples,
                    source,
                })
            }
        }
    }
    Ok(samples)
}

/// Applies `n_trials` uniformly random loads and scores the curve's
/// estimates against the rig's ground truth. The trial forces depend only
/// on `seed` and the module.
pub fn validate_module(
    module: ModuleId,
    curve: &CalibrationCurve,
    source: &mut dyn SampleSource,
    n_trials: usize,
    seed: u64,
) -> Result<ValidationResult, ValidationError> {
    if n_trials == 0 {
        return Err(ValidationError::NoTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + module.index() as u64);
    let mut errors = Vec::with_capacity(n_trials);
    for completed in 0..n_trials {
        let target = rng.random_range(0.0..=FORCE_MAX);
        let m = source
            .measure(module, target)
            .map_err(|source| ValidationError::Source {
                module,
                completed,
                source,
            })?;
        errors.push(counts_to_force(m.counts, curve) - m.applied_force);
    }
    Ok(ValidationResult::from_errors(module, &errors).expect("non-empty"))
}

/// Scans `n` idle frames and averages the reference channels.
pub fn capture_idle_baseline(
    emulator: &mut Emulator,
    n: usize,
    start_ms: u32,
) -> Result<(BaselineReference, u32), BaselineError> {
    let idle = Scenario::empty();
    let frames: Vec<RawFrame> = (0..n)
        .map(|i| emulator.scan_frame(&idle, start_ms + i as u32 * FRAME_PERIOD_MS).frame)
        .collect();
    let next = start_ms + n as u32 * FRAME_PERIOD_MS;
    capture_baseline(&frames).map(|b| (b, next))
}

/// The emulated test rig: a stage pressing one module at a time with a
/// noisy load cell in series. Every measurement costs one scan frame.
pub struct EmulatorRig {
    emulator: Emulator,
    baseline: BaselineReference,
    load_cell: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    t_ms: u32,
}

impl EmulatorRig {
    /// Captures a baseline from idle frames, then is ready to measure.
    pub fn new(mut emulator: Emulator, baseline_frames: usize) -> Result<Self, BaselineError> {
        let (baseline, t_ms) = capture_idle_baseline(&mut emulator, baseline_frames, 0)?;
        Ok(Self::with_baseline(emulator, baseline, t_ms))
    }

    pub fn with_baseline(emulator: Emulator, baseline: BaselineReference, t_ms: u32) -> Self {
        let sigma = emulator.config().load_cell_sigma;
        let load_cell = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
        let mut rng = ChaCha8Rng::seed_from_u64(emulator.config().seed);
        rng.set_stream(2);
        EmulatorRig {
            emulator,
            baseline,
            load_cell,
            rng,
            t_ms,
        }
    }

    pub fn baseline(&self) -> &BaselineReference {
        &self.baseline
    }

    pub fn emulator(&self) -> &Emulator {
        &self.emulator
    }

    pub fn emulator_mut(&mut self) -> &mut Emulator {
        &mut self.emulator
    }
}

impl SampleSource for EmulatorRig {
    fn measure(&mut self, module: ModuleId, target_force: f64) -> Result<Measurement, SourceError> {
        let mut forces = zero_grid::<f64>();
        forces[module.row()][module.col()] = clamp_force(target_force);
        let scan = self.emulator.scan_with_forces(&forces, self.t_ms);
        self.t_ms = self.t_ms.wrapping_add(FRAME_PERIOD_MS);
        let comp = temp_compensate(&scan.frame, Some(&self.baseline))
            .map_err(|e| SourceError::Other(e.to_string()))?;
        let noise = self.load_cell.map_or(0.0, |d| d.sample(&mut self.rng));
        Ok(Measurement {
            applied_force: clamp_force(forces[module.row()][module.col()] + noise),
            counts: comp.counts[module.row()][module.col()] as f64,
            clamped: comp.clamped[module.row()][module.col()],
        })
    }
}

/// Replays previously recorded samples, in file order per module.
#[derive(Debug, Default)]
pub struct RecordedSource {
    queues: BTreeMap<ModuleId, VecDeque<CalibrationSample>>,
}

impl RecordedSource {
    pub fn new(samples: impl IntoIterator<Item = CalibrationSample>) -> Self {
        let mut queues: BTreeMap<ModuleId, VecDeque<CalibrationSample>> = BTreeMap::new();
        for s in samples {
            queues.entry(s.module).or_default().push_back(s);
        }
        RecordedSource { queues }
    }

    pub fn modules(&self) -> Vec<ModuleId> {
        self.queues.keys().copied().collect()
    }
}

impl SampleSource for RecordedSource {
    fn measure(&mut self, module: ModuleId, _target: f64) -> Result<Measurement, SourceError> {
        let s = self
            .queues
            .get_mut(&module)
            .and_then(VecDeque::pop_front)
            .ok_or(SourceError::Exhausted(module))?;
        Ok(Measurement {
            applied_force: s.applied_force,
            counts: s.counts,
            clamped: false,
        })
    }
}
