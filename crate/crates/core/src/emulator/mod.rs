//! Software stand-in for the physical fretboard.
//!
//! Each module is a flexure over a reflective photointerrupter. Force
//! deflects the flexure linearly, the reflected light (and so the ADC
//! count) grows with the deflection, and a per-fret temperature offset is
//! added equally to every sensor of the fret including its reference
//! sensor. A scan cycle activates the frets in order and samples the six
//! string buses plus the reference channel.

mod config;
mod scenario;

use std::io;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use config::{
    ConfigError, DriftMode, EmulatorConfig, DEFAULT_LOAD_CELL_SIGMA, DEFAULT_REFERENCE_STIFFNESS,
};
pub use scenario::{scenario_force, PressEvent, Scenario, ScenarioError};

use crate::model::{
    zero_grid, FretboardGeometry, Grid, ModuleId, RawFrame, ADC_MAX, CHANNELS_PER_FRET,
    FORCE_MAX, FRAME_PERIOD_MS, N_ACTIVE_FRETS, N_STRINGS, REFERENCE_CHANNEL,
};

/// Fraction of a neighbouring sensor's signal that reaches a shared bus
/// when light isolation is missing and several frets are lit at once.
pub const LEAKAGE_FRACTION: f64 = 0.25;

/// Upper end of the flexure travel the sensor model is specified over.
pub const OPERATING_TRAVEL_MM: f64 = 0.3;

/// Plausible flexure travel at full scale, in mm.
const FULL_SCALE_DEFLECTION_RANGE: (f64, f64) = (0.15, 0.30);

#[derive(Debug, Error)]
pub enum EmulatorError {
    #[error("force {0} N is negative or not finite")]
    InvalidForce(f64),
    #[error("stiffness {0} N/mm must be positive")]
    InvalidStiffness(f64),
    #[error("module {module}: deflection {deflection_mm:.3} mm at 25 N is implausible")]
    ImplausibleFlexure {
        module: ModuleId,
        deflection_mm: f64,
    },
    #[error("sensor parameter {name}: {reason}")]
    InvalidSensor { name: &'static str, reason: String },
    #[error("scan configuration: {0}")]
    InvalidScan(String),
    #[error("drift configuration: {0}")]
    InvalidDrift(String),
}

/// Linear elastic flexure: deflection in mm for a force in N.
pub fn deflection(force: f64, stiffness: f64) -> Result<f64, EmulatorError> {
    if !force.is_finite() || force < 0.0 {
        return Err(EmulatorError::InvalidForce(force));
    }
    if !(stiffness.is_finite() && stiffness > 0.0) {
        return Err(EmulatorError::InvalidStiffness(stiffness));
    }
    Ok(force / stiffness)
}

/// Per-module flexure stiffness in N/mm.
///
/// Stiffness scales with the local board width relative to fret 1, so
/// wider frets deflect less under the same load.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexureParams {
    stiffness: Grid<f64>,
}

impl FlexureParams {
    pub fn from_geometry(
        geometry: &FretboardGeometry,
        reference_stiffness: f64,
    ) -> Result<Self, EmulatorError> {
        let w1 = geometry.fret_width(1);
        let mut stiffness = zero_grid::<f64>();
        for (r, row) in stiffness.iter_mut().enumerate() {
            let k = reference_stiffness * geometry.fret_width(r as u32 + 1) / w1;
            row.fill(k);
        }
        let params = FlexureParams { stiffness };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        for m in ModuleId::all() {
            let k = self.stiffness(m);
            if !(k.is_finite() && k > 0.0) {
                return Err(EmulatorError::InvalidStiffness(k));
            }
            let d = FORCE_MAX / k;
            let (lo, hi) = FULL_SCALE_DEFLECTION_RANGE;
            if !(lo..=hi).contains(&d) {
                return Err(EmulatorError::ImplausibleFlexure {
                    module: m,
                    deflection_mm: d,
                });
            }
        }
        Ok(())
    }

    pub fn stiffness(&self, module: ModuleId) -> f64 {
        self.stiffness[module.row()][module.col()]
    }
}

/// Photointerrupter transfer model, with the amplifier chain folded in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorParams {
    /// Counts at zero deflection.
    pub baseline_counts: f64,
    /// Counts per mm of approach.
    pub gain: f64,
    /// Quadratic coefficient in 1/mm.
    pub nonlinearity: f64,
    /// Additive Gaussian noise, counts.
    pub noise_sigma: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            baseline_counts: 800.0,
            gain: 12000.0,
            nonlinearity: 0.0,
            noise_sigma: 2.0,
        }
    }
}

impl SensorParams {
    pub fn validate(&self) -> Result<(), EmulatorError> {
        let bad = |name, reason: String| Err(EmulatorError::InvalidSensor { name, reason });
        if !(0.0..=ADC_MAX as f64).contains(&self.baseline_counts) {
            return bad("baseline_counts", format!("{} outside [0, 4095]", self.baseline_counts));
        }
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return bad("gain", format!("{} must be finite and non-negative", self.gain));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma", format!("{} must be non-negative", self.noise_sigma));
        }
        // d/dδ [δ(1 + aδ)] = 1 + 2aδ must stay positive over the travel.
        let slope_at_end = 1.0 + 2.0 * self.nonlinearity * OPERATING_TRAVEL_MM;
        if !self.nonlinearity.is_finite() || slope_at_end <= 0.0 {
            return bad(
                "nonlinearity",
                format!("{} makes the response non-monotone", self.nonlinearity),
            );
        }
        Ok(())
    }

    /// Noise-free signal above baseline for a deflection, in counts.
    pub fn signal(&self, deflection_mm: f64) -> f64 {
        self.gain * deflection_mm * (1.0 + self.nonlinearity * deflection_mm)
    }
}

/// ADC reading for one sensor. `noise` is a pre-drawn sample in counts.
pub fn sensor_counts(deflection_mm: f64, params: &SensorParams, drift: f64, noise: f64) -> u16 {
    quantize(params.baseline_counts + params.signal(deflection_mm) + drift + noise)
}

fn quantize(x: f64) -> u16 {
    if x.is_nan() {
        return 0;
    }
    x.round().clamp(0.0, ADC_MAX as f64) as u16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanConfig {
    pub isolation_enabled: bool,
    pub frets_active_simultaneously: u8,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            isolation_enabled: true,
            frets_active_simultaneously: 1,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), EmulatorError> {
        if !(1..=N_ACTIVE_FRETS as u8).contains(&self.frets_active_simultaneously) {
            return Err(EmulatorError::InvalidScan(format!(
                "frets_active_simultaneously {} outside 1..=12",
                self.frets_active_simultaneously
            )));
        }
        Ok(())
    }

    /// Whether light from one fret can reach another fret's bus.
    pub fn leaks(&self) -> bool {
        !self.isolation_enabled && self.frets_active_simultaneously > 1
    }
}

/// Output of one scan cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scan {
    pub frame: RawFrame,
    /// Set when cross-fret leakage was added to the sense channels.
    pub contaminated: bool,
}

/// Per-fret temperature offsets in counts.
#[derive(Debug, Clone)]
struct TemperatureDrift {
    mode: DriftMode,
    offsets: [f64; N_ACTIVE_FRETS],
    rng: ChaCha8Rng,
}

impl TemperatureDrift {
    fn new(mode: DriftMode, seed: u64) -> Result<Self, EmulatorError> {
        let offsets = match mode {
            DriftMode::Off | DriftMode::RandomWalk { .. } => [0.0; N_ACTIVE_FRETS],
            DriftMode::Fixed(o) => o,
        };
        if let DriftMode::RandomWalk { step_sigma, bound } = mode {
            if !(step_sigma.is_finite() && step_sigma >= 0.0 && bound.is_finite() && bound >= 0.0) {
                return Err(EmulatorError::InvalidDrift(format!(
                    "step {step_sigma} and bound {bound} must be non-negative"
                )));
            }
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(EmulatorError::InvalidDrift("non-finite offset".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(TemperatureDrift { mode, offsets, rng })
    }

    /// Offset applied to the ADC, in whole counts.
    fn applied(&self, fret_row: usize) -> f64 {
        self.offsets[fret_row].round()
    }

    fn advance(&mut self) {
        if let DriftMode::RandomWalk { step_sigma, bound } = self.mode {
            if step_sigma > 0.0 {
                let step = Normal::new(0.0, step_sigma).expect("validated sigma");
                for o in self.offsets.iter_mut() {
                    *o = (*o + step.sample(&mut self.rng)).clamp(-bound, bound);
                }
            }
        }
    }
}

pub trait FrameSink {
    fn accept(&mut self, frame: &RawFrame) -> io::Result<()>;
}

impl FrameSink for Vec<RawFrame> {
    fn accept(&mut self, frame: &RawFrame) -> io::Result<()> {
        self.push(frame.clone());
        Ok(())
    }
}

/// Adapts a closure into a [`FrameSink`].
pub struct FnSink<F>(pub F);

impl<F: FnMut(&RawFrame) -> io::Result<()>> FrameSink for FnSink<F> {
    fn accept(&mut self, frame: &RawFrame) -> io::Result<()> {
        (self.0)(frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// Frames are produced as fast as the sink takes them.
    Simulated,
    /// Frames are released on the wall clock, `speed` times faster than
    /// real time.
    RealTime { speed: f64 },
}

#[derive(Debug, Error)]
#[error("stream aborted after {sent} frames: {source}")]
pub struct StreamError {
    pub sent: u64,
    #[source]
    pub source: io::Error,
}

/// Number of frames emitted for a stream of `duration_ms`.
pub fn stream_frame_count(duration_ms: u32) -> u64 {
    (duration_ms / FRAME_PERIOD_MS) as u64 + 1
}

/// The emulated instrument. Owns the drift walk, the noise generator and
/// the sequence counter; identical configuration and seed reproduce the
/// same frames bit for bit.
#[derive(Debug, Clone)]
pub struct Emulator {
    config: EmulatorConfig,
    flexure: FlexureParams,
    sensors: Grid<SensorParams>,
    drift: TemperatureDrift,
    noise_rng: ChaCha8Rng,
    seq: u16,
}

impl Emulator {
    pub fn new(config: EmulatorConfig) -> Result<Self, EmulatorError> {
        config.sensor.validate()?;
        config.scan.validate()?;
        let flexure = FlexureParams::from_geometry(&config.geometry, config.reference_stiffness)?;
        let mut sensors = [[config.sensor; N_STRINGS]; N_ACTIVE_FRETS];
        for &(m, gain) in &config.gain_overrides {
            let s = &mut sensors[m.row()][m.col()];
            s.gain = gain;
            s.validate()?;
        }
        let drift = TemperatureDrift::new(config.drift, config.seed)?;
        Ok(Emulator {
            noise_rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            flexure,
            sensors,
            drift,
            seq: 0,
        })
    }

    pub fn config(&self) -> &EmulatorConfig {
        &self.config
    }

    pub fn flexure(&self) -> &FlexureParams {
        &self.flexure
    }

    pub fn sensor(&self, module: ModuleId) -> &SensorParams {
        &self.sensors[module.row()][module.col()]
    }

    pub fn next_seq(&self) -> u16 {
        self.seq
    }

    /// Current per-fret drift, in the whole counts applied to the ADC.
    pub fn drift_offsets(&self) -> [f64; N_ACTIVE_FRETS] {
        std::array::from_fn(|r| self.drift.applied(r))
    }

    /// Overrides the per-fret drift; a random walk continues from here.
    pub fn set_drift_offsets(&mut self, offsets: [f64; N_ACTIVE_FRETS]) {
        self.drift.offsets = offsets;
    }

    /// Noise-free count a module would read under `force`, ignoring drift.
    pub fn ideal_counts(&self, module: ModuleId, force: f64) -> f64 {
        let d = force.max(0.0) / self.flexure.stiffness(module);
        let s = self.sensor(module);
        s.baseline_counts + s.signal(d)
    }

    /// Scans one frame for the scenario at time `t_ms`.
    pub fn scan_frame(&mut self, scenario: &Scenario, t_ms: u32) -> Scan {
        let forces = scenario.force_at(t_ms as f64);
        self.scan_with_forces(&forces, t_ms)
    }

    /// Scans one frame with the given applied forces (N).
    ///
    /// Frets are activated in order 1..=12; within a fret the six string
    /// buses and then the reference channel are sampled. Noise is drawn in
    /// that fixed order.
    pub fn scan_with_forces(&mut self, forces: &Grid<f64>, t_ms: u32) -> Scan {
        let leaks = self.config.scan.leaks();
        let group = self.config.scan.frets_active_simultaneously as usize;

        let mut signal = zero_grid::<f64>();
        for m in ModuleId::all() {
            let f = forces[m.row()][m.col()];
            let f = if f.is_finite() { f.max(0.0) } else { 0.0 };
            let d = f / self.flexure.stiffness(m);
            signal[m.row()][m.col()] = self.sensor(m).signal(d);
        }

        let noise = if self.config.sensor.noise_sigma > 0.0 {
            Some(Normal::new(0.0, self.config.sensor.noise_sigma).expect("validated sigma"))
        } else {
            None
        };

        let mut frame = RawFrame::zeroed(self.seq, t_ms);
        for r in 0..N_ACTIVE_FRETS {
            let drift = self.drift.applied(r);
            for c in 0..CHANNELS_PER_FRET {
                let n = noise.map_or(0.0, |d| d.sample(&mut self.noise_rng));
                let (sig, baseline) = if c == REFERENCE_CHANNEL {
                    (0.0, self.config.sensor.baseline_counts)
                } else {
                    let mut s = signal[r][c];
                    if leaks {
                        let g0 = (r / group) * group;
                        let g1 = (g0 + group).min(N_ACTIVE_FRETS);
                        let others: f64 =
                            (g0..g1).filter(|&o| o != r).map(|o| signal[o][c]).sum();
                        s += LEAKAGE_FRACTION * others;
                    }
                    (s, self.sensors[r][c].baseline_counts)
                };
                frame.counts[r][c] = quantize(baseline + sig + drift + n);
            }
        }

        self.drift.advance();
        self.seq = self.seq.wrapping_add(1);
        Scan {
            frame,
            contaminated: leaks,
        }
    }

    /// Emits frames at t = 0, 50, ... up to `duration_ms` into `sink`.
    /// Returns the number of frames delivered.
    pub fn run_stream(
        &mut self,
        scenario: &Scenario,
        duration_ms: u32,
        sink: &mut dyn FrameSink,
        pacing: Pacing,
    ) -> Result<u64, StreamError> {
        let total = stream_frame_count(duration_ms);
        let started = Instant::now();
        for i in 0..total {
            let t = (i as u32) * FRAME_PERIOD_MS;
            if let Pacing::RealTime { speed } = pacing {
                let due = Duration::from_secs_f64(t as f64 / 1000.0 / speed.max(1e-9));
                if let Some(wait) = due.checked_sub(started.elapsed()) {
                    thread::sleep(wait);
                }
            }
            let scan = self.scan_frame(scenario, t);
            sink.accept(&scan.frame)
                .map_err(|source| StreamError { sent: i, source })?;
        }
        Ok(total)
    }
}
