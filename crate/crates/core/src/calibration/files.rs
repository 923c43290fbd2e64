//! Text formats for calibration sets, raw sweep/validation samples and
//! per-module validation results.
//!
//! Calibration set:
//!
//! ```text
//! fretsense-calset 1
//! baseline 800 800 800 800 800 800 800 800 800 800 800 800
//! 3 2 1.04166667e-2 -8.33333333e0 9.99998000e-1 102
//! ```
//!
//! The `baseline` line is optional; module lines are
//! `fret string slope intercept r2 n_samples` with 9 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::model::{ModuleId, N_ACTIVE_FRETS};

use super::{BaselineReference, CalibrationCurve, CalibrationSample, ValidationResult};

pub const CALSET_HEADER: &str = "fretsense-calset 1";
pub const VALIDATION_HEADER: &str = "fretsense-validation 1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_module(line: usize, fret: &str, string: &str) -> Result<ModuleId, FormatError> {
    let f = fret
        .parse::<i64>()
        .map_err(|_| parse_err(line, format!("bad fret '{fret}'")))?;
    let s = string
        .parse::<i64>()
        .map_err(|_| parse_err(line, format!("bad string '{string}'")))?;
    ModuleId::new(f, s).map_err(|e| parse_err(line, e.to_string()))
}

fn parse_f64(line: usize, name: &str, v: &str) -> Result<f64, FormatError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| parse_err(line, format!("{name} '{v}' is not a finite number")))
}

/// Fitted curves for some or all modules, plus the calibration-time
/// reference baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationSet {
    pub baseline: Option<BaselineReference>,
    pub curves: BTreeMap<ModuleId, CalibrationCurve>,
}

impl CalibrationSet {
    pub fn new(baseline: Option<BaselineReference>) -> Self {
        CalibrationSet {
            baseline,
            curves: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, curve: CalibrationCurve) {
        self.curves.insert(curve.module, curve);
    }

    pub fn get(&self, module: ModuleId) -> Option<&CalibrationCurve> {
        self.curves.get(&module)
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        ModuleId::all().all(|m| self.curves.contains_key(&m))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CALSET_HEADER}\n");
        if let Some(b) = &self.baseline {
            let vals: Vec<String> = b.per_fret.iter().map(u16::to_string).collect();
            writeln!(out, "baseline {}", vals.join(" ")).unwrap();
        }
        for c in self.curves.values() {
            writeln!(
                out,
                "{} {} {:.8e} {:.8e} {:.8e} {}",
                c.module.fret(),
                c.module.string(),
                c.slope,
                c.intercept,
                c.r_squared,
                c.n_samples
            )
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.find(|(_, l)| !l.is_empty()) {
            Some((_, CALSET_HEADER)) => {}
            Some((n, other)) => {
                return Err(parse_err(n, format!("expected header '{CALSET_HEADER}', found '{other}'")))
            }
            None => return Err(parse_err(1, "empty calibration set")),
        }
        let mut set = CalibrationSet::default();
        for (n, l) in lines {
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields[0] == "baseline" {
                if fields.len() != N_ACTIVE_FRETS + 1 {
                    return Err(parse_err(n, "baseline needs 12 values"));
                }
                let mut per_fret = [0u16; N_ACTIVE_FRETS];
                for (slot, v) in per_fret.iter_mut().zip(&fields[1..]) {
                    *slot = v
                        .parse::<u16>()
                        .ok()
                        .filter(|&c| c <= crate::model::ADC_MAX)
                        .ok_or_else(|| parse_err(n, format!("bad baseline count '{v}'")))?;
                }
                set.baseline = Some(BaselineReference { per_fret });
                continue;
            }
            if fields.len() != 6 {
                return Err(parse_err(n, format!("expected 6 fields, found {}", fields.len())));
            }
            let module = parse_module(n, fields[0], fields[1])?;
            let curve = CalibrationCurve {
                module,
                slope: parse_f64(n, "slope", fields[2])?,
                intercept: parse_f64(n, "intercept", fields[3])?,
                r_squared: parse_f64(n, "r2", fields[4])?,
                n_samples: fields[5]
                    .parse()
                    .map_err(|_| parse_err(n, format!("bad n_samples '{}'", fields[5])))?,
            };
            if !curve.is_valid() {
                return Err(parse_err(n, "slope must be finite and nonzero"));
            }
            if !(0.0..=1.0).contains(&curve.r_squared) {
                return Err(parse_err(n, "r2 outside [0, 1]"));
            }
            if set.curves.insert(module, curve).is_some() {
                return Err(parse_err(n, format!("duplicate module {module}")));
            }
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        CalibrationSet::parse(&std::fs::read_to_string(path)?)
    }
}

/// `fret string applied_N counts` per line.
pub fn write_sample_lines(samples: &[CalibrationSample]) -> String {
    let mut out = String::new();
    for s in samples {
        writeln!(
            out,
            "{} {} {:.4} {}",
            s.module.fret(),
            s.module.string(),
            s.applied_force,
            s.counts
        )
        .unwrap();
    }
    out
}

pub fn parse_sample_lines(text: &str) -> Result<Vec<CalibrationSample>, FormatError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let n = i + 1;
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(n, format!("expected 4 fields, found {}", fields.len())));
        }
        out.push(CalibrationSample {
            module: parse_module(n, fields[0], fields[1])?,
            applied_force: parse_f64(n, "applied force", fields[2])?,
            counts: parse_f64(n, "counts", fields[3])?,
        });
    }
    Ok(out)
}

/// Header then `fret string rmse_N worst_pct_fso n_trials` per module.
pub fn validation_results_to_text(results: &[ValidationResult]) -> String {
    let mut out = format!("{VALIDATION_HEADER}\n");
    for r in results {
        writeln!(
            out,
            "{} {} {:.8e} {:.8e} {}",
            r.module.fret(),
            r.module.string(),
            r.rmse,
            r.worst_error_pct_fso,
            r.n_trials
        )
        .unwrap();
    }
    out
}

pub fn parse_validation_results(text: &str) -> Result<Vec<ValidationResult>, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.find(|(_, l)| !l.is_empty()) {
        Some((_, VALIDATION_HEADER)) => {}
        Some((n, other)) => {
            return Err(parse_err(n, format!("expected header '{VALIDATION_HEADER}', found '{other}'")))
        }
        None => return Err(parse_err(1, "empty validation data")),
    }
    let mut out = Vec::new();
    for (n, l) in lines {
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(parse_err(n, format!("expected 5 fields, found {}", fields.len())));
        }
        let r = ValidationResult {
            module: parse_module(n, fields[0], fields[1])?,
            rmse: parse_f64(n, "rmse", fields[2])?,
            worst_error_pct_fso: parse_f64(n, "worst", fields[3])?,
            n_trials: fields[4]
                .parse()
                .map_err(|_| parse_err(n, format!("bad n_trials '{}'", fields[4])))?,
        };
        if r.rmse < 0.0 || r.worst_error_pct_fso < 0.0 {
            return Err(parse_err(n, "metrics must be non-negative"));
        }
        out.push(r);
    }
    Ok(out)
}
