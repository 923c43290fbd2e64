//! Session recording lines: `timestamp_ms` followed by the 72 module forces
//! in newtons with two decimals, linear module order, space separated.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{zero_grid, ForceFrame, Grid, ModuleId, N_MODULES};

pub const RECORDING_FIELDS: usize = N_MODULES + 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordingError {
    #[error("expected {RECORDING_FIELDS} fields, found {0}")]
    FieldCount(usize),
    #[error("bad timestamp '{0}'")]
    Timestamp(String),
    #[error("bad force '{value}' in field {field}")]
    Force { field: usize, value: String },
}

pub fn write_recording_line(frame: &ForceFrame) -> String {
    let mut line = String::with_capacity(8 + N_MODULES * 6);
    write!(line, "{}", frame.timestamp_ms).expect("write to String");
    for f in frame.forces().iter().flatten() {
        // forces are clamped non-negative; +0.0 folds a stray -0.0
        write!(line, " {:.2}", f + 0.0).expect("write to String");
    }
    line.push('\n');
    line
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedFrame {
    pub timestamp_ms: u32,
    pub forces: Grid<f64>,
}

pub fn parse_recording_line(line: &str) -> Result<RecordedFrame, RecordingError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != RECORDING_FIELDS {
        return Err(RecordingError::FieldCount(fields.len()));
    }
    let timestamp_ms = fields[0]
        .parse()
        .map_err(|_| RecordingError::Timestamp(fields[0].to_string()))?;
    let mut forces = zero_grid::<f64>();
    for (i, raw) in fields[1..].iter().enumerate() {
        let v: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| RecordingError::Force {
                field: i + 2,
                value: raw.to_string(),
            })?;
        let m = ModuleId::from_index(i).expect("72 fields");
        forces[m.row()][m.col()] = v;
    }
    Ok(RecordedFrame {
        timestamp_ms,
        forces,
    })
}
