//! Scripted press scenarios.
//!
//! A scenario file holds one press per line:
//!
//! ```text
//! # fret string start_ms attack_ms hold_ms release_ms peak_N
//! 3 2 100 200 500 200 10.0
//! ```
//!
//! Blank lines are ignored and `#` starts a comment anywhere on a line.
//! Frets are 1..=12, strings 1..=6, times are non-negative integer
//! milliseconds and the peak force lies in `[0, 25]` newtons.

use std::path::Path;

use thiserror::Error;

use crate::model::{clamp_force, zero_grid, Grid, ModuleId, FORCE_MAX};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid press event: {0}")]
    Event(String),
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
}

/// One trapezoidal press: linear attack to the peak, hold, linear release.
#[derive(Debug, Clone, PartialEq)]
pub struct PressEvent {
    pub module: ModuleId,
    pub start_ms: u32,
    pub attack_ms: u32,
    pub hold_ms: u32,
    pub release_ms: u32,
    pub peak_force: f64,
}

impl PressEvent {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !self.peak_force.is_finite() || !(0.0..=FORCE_MAX).contains(&self.peak_force) {
            return Err(ScenarioError::Event(format!(
                "peak force {} N outside [0, 25]",
                self.peak_force
            )));
        }
        Ok(())
    }

    pub fn end_ms(&self) -> u64 {
        self.start_ms as u64 + self.attack_ms as u64 + self.hold_ms as u64 + self.release_ms as u64
    }

    /// Force contributed by this press at time `t` (ms).
    pub fn force_at(&self, t: f64) -> f64 {
        let start = self.start_ms as f64;
        let attack_end = start + self.attack_ms as f64;
        let hold_end = attack_end + self.hold_ms as f64;
        let release_end = hold_end + self.release_ms as f64;
        if t < start {
            0.0
        } else if t < attack_end {
            self.peak_force * (t - start) / self.attack_ms as f64
        } else if t <= hold_end {
            self.peak_force
        } else if t < release_end {
            self.peak_force * (release_end - t) / self.release_ms as f64
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scenario {
    events: Vec<PressEvent>,
}

impl Scenario {
    pub fn new(events: Vec<PressEvent>) -> Result<Self, ScenarioError> {
        for e in &events {
            e.validate()?;
        }
        Ok(Scenario { events })
    }

    pub fn empty() -> Self {
        Scenario::default()
    }

    pub fn events(&self) -> &[PressEvent] {
        &self.events
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut events = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 7 {
                return Err(ScenarioError::Parse {
                    line,
                    message: format!("expected 7 fields, found {}", fields.len()),
                });
            }
            let err = |message: String| ScenarioError::Parse { line, message };
            let int = |idx: usize, name: &str| -> Result<i64, ScenarioError> {
                fields[idx]
                    .parse::<i64>()
                    .map_err(|_| err(format!("{name} '{}' is not an integer", fields[idx])))
            };
            let ms = |idx: usize, name: &str| -> Result<u32, ScenarioError> {
                fields[idx].parse::<u32>().map_err(|_| {
                    err(format!(
                        "{name} '{}' is not a non-negative integer",
                        fields[idx]
                    ))
                })
            };
            let module = ModuleId::new(int(0, "fret")?, int(1, "string")?)
                .map_err(|e| err(e.to_string()))?;
            let peak_force: f64 = fields[6]
                .parse()
                .map_err(|_| err(format!("peak '{}' is not a number", fields[6])))?;
            let event = PressEvent {
                module,
                start_ms: ms(2, "start")?,
                attack_ms: ms(3, "attack")?,
                hold_ms: ms(4, "hold")?,
                release_ms: ms(5, "release")?,
                peak_force,
            };
            event.validate().map_err(|e| err(e.to_string()))?;
            events.push(event);
        }
        Ok(Scenario { events })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Scenario::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# fret string start_ms attack_ms hold_ms release_ms peak_N\n");
        for e in &self.events {
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                e.module.fret(),
                e.module.string(),
                e.start_ms,
                e.attack_ms,
                e.hold_ms,
                e.release_ms,
                e.peak_force
            ));
        }
        out
    }

    /// Applied force on every module at time `t` (ms). Overlapping presses
    /// on one module combine by maximum.
    pub fn force_at(&self, t: f64) -> Grid<f64> {
        let mut grid = zero_grid::<f64>();
        for e in &self.events {
            let cell = &mut grid[e.module.row()][e.module.col()];
            *cell = cell.max(e.force_at(t));
        }
        for row in grid.iter_mut() {
            for f in row.iter_mut() {
                *f = clamp_force(*f);
            }
        }
        grid
    }
}

pub fn scenario_force(scenario: &Scenario, t_ms: f64) -> Grid<f64> {
    scenario.force_at(t_ms)
}
