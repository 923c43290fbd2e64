//! Shared domain types: fretboard addressing, geometry, frames and system
//! constants.

use std::fmt;

use thiserror::Error;

/// Frets carrying a sensing module under every string.
pub const N_ACTIVE_FRETS: usize = 12;
/// Non-functional frets below the active region (electronics bay).
pub const N_DUMMY_FRETS: usize = 7;
pub const N_FRETS_TOTAL: usize = N_ACTIVE_FRETS + N_DUMMY_FRETS;
pub const N_STRINGS: usize = 6;
pub const N_MODULES: usize = N_ACTIVE_FRETS * N_STRINGS;
/// Six string sensors plus one reference sensor per fret.
pub const CHANNELS_PER_FRET: usize = N_STRINGS + 1;
/// Column of the reference sensor within a fret row.
pub const REFERENCE_CHANNEL: usize = N_STRINGS;

pub const FORCE_MIN: f64 = 0.0;
pub const FORCE_MAX: f64 = 25.0;
/// Full-scale output span in newtons.
pub const FULL_SCALE: f64 = FORCE_MAX - FORCE_MIN;

pub const FRAME_RATE_HZ: u32 = 20;
pub const FRAME_PERIOD_MS: u32 = 1000 / FRAME_RATE_HZ;

pub const ADC_BITS: u32 = 12;
pub const ADC_MAX: u16 = (1 << ADC_BITS) - 1;

pub const REPORTED_RESOLUTION: f64 = 0.1;

/// 12 frets by 6 strings, indexed `[fret - 1][string - 1]`.
pub type Grid<T> = [[T; N_STRINGS]; N_ACTIVE_FRETS];

/// Raw scan layout: 12 frets by 6 string sensors plus the reference sensor.
pub type CountGrid = [[u16; CHANNELS_PER_FRET]; N_ACTIVE_FRETS];

/// The instrument's fixed operating envelope, gathered in one value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConstants {
    pub n_active_frets: usize,
    pub n_dummy_frets: usize,
    pub n_strings: usize,
    pub force_min: f64,
    pub force_max: f64,
    pub frame_rate_hz: u32,
    pub adc_bits: u32,
    pub reported_resolution: f64,
}

impl SystemConstants {
    pub const DEFAULT: SystemConstants = SystemConstants {
        n_active_frets: N_ACTIVE_FRETS,
        n_dummy_frets: N_DUMMY_FRETS,
        n_strings: N_STRINGS,
        force_min: FORCE_MIN,
        force_max: FORCE_MAX,
        frame_rate_hz: FRAME_RATE_HZ,
        adc_bits: ADC_BITS,
        reported_resolution: REPORTED_RESOLUTION,
    };

    pub fn n_modules(&self) -> usize {
        self.n_active_frets * self.n_strings
    }

    pub fn adc_max(&self) -> u16 {
        ((1u32 << self.adc_bits) - 1) as u16
    }
}

impl Default for SystemConstants {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("fret {0} is outside the active range 1..=12")]
    Fret(i64),
    #[error("string {0} is outside the range 1..=6")]
    String(i64),
    #[error("linear index {0} is outside 0..72")]
    Index(usize),
}

/// Address of one sensing module: a (fret, string) intersection.
///
/// Both ordinals are 1-based. Ordering follows the linear index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModuleId {
    fret: u8,
    string: u8,
}

impl ModuleId {
    pub fn new(fret: i64, string: i64) -> Result<Self, AddressError> {
        if !(1..=N_ACTIVE_FRETS as i64).contains(&fret) {
            return Err(AddressError::Fret(fret));
        }
        if !(1..=N_STRINGS as i64).contains(&string) {
            return Err(AddressError::String(string));
        }
        Ok(ModuleId {
            fret: fret as u8,
            string: string as u8,
        })
    }

    pub fn from_index(idx: usize) -> Result<Self, AddressError> {
        if idx >= N_MODULES {
            return Err(AddressError::Index(idx));
        }
        Ok(ModuleId {
            fret: (idx / N_STRINGS) as u8 + 1,
            string: (idx % N_STRINGS) as u8 + 1,
        })
    }

    pub fn fret(self) -> u8 {
        self.fret
    }

    pub fn string(self) -> u8 {
        self.string
    }

    /// Linear index `(fret - 1) * 6 + (string - 1)`.
    pub fn index(self) -> usize {
        (self.fret as usize - 1) * N_STRINGS + (self.string as usize - 1)
    }

    /// Zero-based row into a [`Grid`].
    pub fn row(self) -> usize {
        self.fret as usize - 1
    }

    /// Zero-based column into a [`Grid`].
    pub fn col(self) -> usize {
        self.string as usize - 1
    }

    /// All 72 modules in linear-index order.
    pub fn all() -> impl Iterator<Item = ModuleId> {
        (0..N_MODULES).map(|i| ModuleId::from_index(i).expect("index in range"))
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.fret, self.string)
    }
}

pub fn module_index(fret: i64, string: i64) -> Result<usize, AddressError> {
    ModuleId::new(fret, string).map(ModuleId::index)
}

/// Distance of fret `fret` from the nut under equal temperament.
/// Fret 0 is the nut itself.
pub fn fret_position(scale_length: f64, fret: u32) -> f64 {
    scale_length * (1.0 - 2f64.powf(-(fret as f64) / 12.0))
}

/// Board layout used for stiffness variation and UI rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FretboardGeometry {
    pub scale_length: f64,
    pub nut_width: f64,
    pub twelfth_width: f64,
}

impl Default for FretboardGeometry {
    fn default() -> Self {
        FretboardGeometry {
            scale_length: 650.0,
            nut_width: 52.0,
            twelfth_width: 62.0,
        }
    }
}

impl FretboardGeometry {
    /// Distance from the nut for frets `1..=19`.
    pub fn fret_distance_from_nut(&self, fret: u32) -> f64 {
        fret_position(self.scale_length, fret)
    }

    /// Board width at a fret; linear taper between nut and 12th fret,
    /// extended past the 12th.
    pub fn fret_width(&self, fret: u32) -> f64 {
        let octave = self.scale_length / 2.0;
        let d = self.fret_distance_from_nut(fret);
        self.nut_width + (self.twelfth_width - self.nut_width) * d / octave
    }

    pub fn fret_distances(&self) -> Vec<f64> {
        (1..=N_FRETS_TOTAL as u32)
            .map(|k| self.fret_distance_from_nut(k))
            .collect()
    }

    pub fn is_dummy(fret: u32) -> bool {
        fret as usize > N_ACTIVE_FRETS && fret as usize <= N_FRETS_TOTAL
    }
}

/// One scan cycle as produced by the device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub seq: u16,
    pub timestamp_ms: u32,
    pub counts: CountGrid,
}

impl RawFrame {
    pub fn zeroed(seq: u16, timestamp_ms: u32) -> Self {
        RawFrame {
            seq,
            timestamp_ms,
            counts: [[0; CHANNELS_PER_FRET]; N_ACTIVE_FRETS],
        }
    }

    pub fn sense(&self, module: ModuleId) -> u16 {
        self.counts[module.row()][module.col()]
    }

    pub fn reference(&self, fret_row: usize) -> u16 {
        self.counts[fret_row][REFERENCE_CHANNEL]
    }

    /// First cell above the ADC range, as (row, column, value).
    pub fn out_of_range(&self) -> Option<(usize, usize, u16)> {
        self.counts.iter().enumerate().find_map(|(r, row)| {
            row.iter()
                .enumerate()
                .find(|(_, &c)| c > ADC_MAX)
                .map(|(c, &v)| (r, c, v))
        })
    }
}

/// Calibrated forces for one scan cycle plus over-threshold flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceFrame {
    pub seq: u16,
    pub timestamp_ms: u32,
    forces: Grid<f64>,
    over_threshold: Grid<bool>,
}

impl ForceFrame {
    /// Builds a frame, clamping forces into the sensing range and flagging
    /// every module whose force strictly exceeds its threshold.
    pub fn new(
        seq: u16,
        timestamp_ms: u32,
        forces: Grid<f64>,
        threshold: impl Fn(ModuleId) -> f64,
    ) -> Self {
        let mut clamped = [[0.0; N_STRINGS]; N_ACTIVE_FRETS];
        let mut over = [[false; N_STRINGS]; N_ACTIVE_FRETS];
        for m in ModuleId::all() {
            let f = clamp_force(forces[m.row()][m.col()]);
            clamped[m.row()][m.col()] = f;
            over[m.row()][m.col()] = f > threshold(m);
        }
        ForceFrame {
            seq,
            timestamp_ms,
            forces: clamped,
            over_threshold: over,
        }
    }

    pub fn forces(&self) -> &Grid<f64> {
        &self.forces
    }

    pub fn over_threshold(&self) -> &Grid<bool> {
        &self.over_threshold
    }

    pub fn force(&self, module: ModuleId) -> f64 {
        self.forces[module.row()][module.col()]
    }

    pub fn is_over(&self, module: ModuleId) -> bool {
        self.over_threshold[module.row()][module.col()]
    }

    /// Forces in linear module order.
    pub fn forces_flat(&self) -> Vec<f64> {
        self.forces.iter().flatten().copied().collect()
    }

    pub fn flags_flat(&self) -> Vec<bool> {
        self.over_threshold.iter().flatten().copied().collect()
    }
}

/// Clamps into `[0, 25]`, mapping NaN and negative zero to `0.0`.
pub fn clamp_force(f: f64) -> f64 {
    if f.is_nan() {
        return 0.0;
    }
    f.clamp(FORCE_MIN, FORCE_MAX) + 0.0
}

pub fn zero_grid<T: Copy + Default>() -> Grid<T> {
    [[T::default(); N_STRINGS]; N_ACTIVE_FRETS]
}
