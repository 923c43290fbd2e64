//! Emulator configuration and its key-value text format.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! noise_sigma = 2.0
//! drift = walk            # off | walk | fixed
//! drift_offsets = 10 -20 0 0 0 0 0 0 0 0 0 150
//! gain_override = 3 2 0   # fret string gain, repeatable
//! ```
//!
//! Unknown keys are rejected so that typos do not silently fall back to
//! defaults.

use std::path::Path;

use thiserror::Error;

use crate::model::{FretboardGeometry, ModuleId, N_ACTIVE_FRETS};

use super::{ScanConfig, SensorParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftMode {
    Off,
    /// Bounded per-fret random walk, advanced once per frame.
    RandomWalk { step_sigma: f64, bound: f64 },
    /// Constant per-fret offsets in counts.
    Fixed([f64; N_ACTIVE_FRETS]),
}

impl Default for DriftMode {
    fn default() -> Self {
        DriftMode::RandomWalk {
            step_sigma: 0.05,
            bound: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorConfig {
    pub seed: u64,
    pub geometry: FretboardGeometry,
    /// Flexure stiffness at fret 1 in N/mm.
    pub reference_stiffness: f64,
    pub sensor: SensorParams,
    pub gain_overrides: Vec<(ModuleId, f64)>,
    pub drift: DriftMode,
    pub scan: ScanConfig,
    /// Standard deviation of the calibration rig's load cell in newtons.
    pub load_cell_sigma: f64,
}

pub const DEFAULT_REFERENCE_STIFFNESS: f64 = 125.0;
pub const DEFAULT_LOAD_CELL_SIGMA: f64 = 0.025;

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorConfig {
            seed: 0,
            geometry: FretboardGeometry::default(),
            reference_stiffness: DEFAULT_REFERENCE_STIFFNESS,
            sensor: SensorParams::default(),
            gain_overrides: Vec::new(),
            drift: DriftMode::default(),
            scan: ScanConfig::default(),
            load_cell_sigma: DEFAULT_LOAD_CELL_SIGMA,
        }
    }
}

impl EmulatorConfig {
    /// Every stochastic source disabled: no ADC noise, no load-cell noise,
    /// no drift.
    pub fn noiseless() -> Self {
        let mut c = EmulatorConfig::default();
        c.sensor.noise_sigma = 0.0;
        c.load_cell_sigma = 0.0;
        c.drift = DriftMode::Off;
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        EmulatorConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = EmulatorConfig::default();
        let mut drift_kind: Option<String> = None;
        let mut step_sigma = 0.05;
        let mut bound = 200.0;
        let mut offsets = [0.0; N_ACTIVE_FRETS];

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Parse { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', found '{content}'")))?;
            let key = key.trim();
            let value = value.trim();
            let num = |v: &str| -> Result<f64, ConfigError> {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(format!("{key}: '{v}' is not a finite number")))
            };
            match key {
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err(format!("seed: '{value}' is not an unsigned integer")))?
                }
                "scale_length" => cfg.geometry.scale_length = num(value)?,
                "nut_width" => cfg.geometry.nut_width = num(value)?,
                "twelfth_width" => cfg.geometry.twelfth_width = num(value)?,
                "reference_stiffness" => cfg.reference_stiffness = num(value)?,
                "baseline_counts" => cfg.sensor.baseline_counts = num(value)?,
                "gain" => cfg.sensor.gain = num(value)?,
                "nonlinearity" => cfg.sensor.nonlinearity = num(value)?,
                "noise_sigma" => cfg.sensor.noise_sigma = num(value)?,
                "load_cell_sigma" => cfg.load_cell_sigma = num(value)?,
                "drift" => drift_kind = Some(value.to_string()),
                "drift_step_sigma" => step_sigma = num(value)?,
                "drift_bound" => bound = num(value)?,
                "drift_offsets" => {
                    let vals: Vec<&str> = value.split_whitespace().collect();
                    if vals.len() != N_ACTIVE_FRETS {
                        return Err(err(format!(
                            "drift_offsets needs {N_ACTIVE_FRETS} values, found {}",
                            vals.len()
                        )));
                    }
                    for (o, v) in offsets.iter_mut().zip(vals) {
                        *o = num(v)?;
                    }
                }
                "isolation_enabled" => {
                    cfg.scan.isolation_enabled = match value {
                        "true" | "1" | "yes" => true,
                        "false" | "0" | "no" => false,
                        _ => return Err(err(format!("isolation_enabled: '{value}' is not a boolean"))),
                    }
                }
                "frets_active_simultaneously" => {
                    cfg.scan.frets_active_simultaneously = value
                        .parse()
                        .map_err(|_| err(format!("frets_active_simultaneously: '{value}' is not a count")))?
                }
                "gain_override" => {
                    let vals: Vec<&str> = value.split_whitespace().collect();
                    if vals.len() != 3 {
                        return Err(err("gain_override needs 'fret string gain'".into()));
                    }
                    let fret = vals[0].parse::<i64>().map_err(|_| err(format!("bad fret '{}'", vals[0])))?;
                    let string = vals[1].parse::<i64>().map_err(|_| err(format!("bad string '{}'", vals[1])))?;
                    let module = ModuleId::new(fret, string).map_err(|e| err(e.to_string()))?;
                    cfg.gain_overrides.push((module, num(vals[2])?));
                }
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }

        cfg.drift = match drift_kind.as_deref() {
            None | Some("walk") => DriftMode::RandomWalk { step_sigma, bound },
            Some("off") => DriftMode::Off,
            Some("fixed") => DriftMode::Fixed(offsets),
            Some(other) => {
                return Err(ConfigError::Parse {
                    line: 0,
                    message: format!("drift: unknown mode '{other}'"),
                })
            }
        };
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("seed", self.seed.to_string());
        kv("scale_length", self.geometry.scale_length.to_string());
        kv("nut_width", self.geometry.nut_width.to_string());
        kv("twelfth_width", self.geometry.twelfth_width.to_string());
        kv("reference_stiffness", self.reference_stiffness.to_string());
        kv("baseline_counts", self.sensor.baseline_counts.to_string());
        kv("gain", self.sensor.gain.to_string());
        kv("nonlinearity", self.sensor.nonlinearity.to_string());
        kv("noise_sigma", self.sensor.noise_sigma.to_string());
        kv("load_cell_sigma", self.load_cell_sigma.to_string());
        match self.drift {
            DriftMode::Off => kv("drift", "off".into()),
            DriftMode::RandomWalk { step_sigma, bound } => {
                kv("drift", "walk".into());
                kv("drift_step_sigma", step_sigma.to_string());
                kv("drift_bound", bound.to_string());
            }
            DriftMode::Fixed(o) => {
                kv("drift", "fixed".into());
                let vals: Vec<String> = o.iter().map(|v| v.to_string()).collect();
                kv("drift_offsets", vals.join(" "));
            }
        }
        kv("isolation_enabled", self.scan.isolation_enabled.to_string());
        kv(
            "frets_active_simultaneously",
            self.scan.frets_active_simultaneously.to_string(),
        );
        for (m, g) in &self.gain_overrides {
            kv("gain_override", format!("{} {} {}", m.fret(), m.string(), g));
        }
        out
    }
}
