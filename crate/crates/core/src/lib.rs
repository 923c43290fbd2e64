//! Software twin of a 72-point force-sensing guitar fretboard.
//!
//! * [`model`] holds addressing, geometry and frame types.
//! * [`emulator`] simulates flexures, photointerrupters, drift and the
//!   fret-by-fret scan.
//! * [`wire`] frames raw scans for a byte stream and writes session
//!   recordings.
//! * [`calibration`] fits per-module curves, compensates temperature drift
//!   and scores accuracy.

pub mod calibration;
pub mod emulator;
pub mod model;
pub mod wire;

pub use model::{ForceFrame, Grid, ModuleId, RawFrame};
