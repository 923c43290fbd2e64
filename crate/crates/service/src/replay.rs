//! Loading recorded sessions and binary captures for replay.

use std::io;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use fretsense_core::model::RawFrame;
use fretsense_core::wire::{
    parse_recording_line, DecodeEvent, FrameDecoder, RecordedFrame, MAGIC, RECORDING_FIELDS,
};
use log::warn;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("unrecognized replay format: {0}")]
    Unrecognized(String),
    #[error("speed must be a positive finite number, got {0}")]
    Speed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayFormat {
    /// Concatenated wire frames.
    Binary,
    /// Recording text, one frame per line.
    Recording,
    /// Nothing to replay.
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayItem {
    Raw(RawFrame),
    Recorded(RecordedFrame),
}

impl ReplayItem {
    pub fn timestamp_ms(&self) -> u32 {
        match self {
            ReplayItem::Raw(f) => f.timestamp_ms,
            ReplayItem::Recorded(f) => f.timestamp_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayFile {
    pub format: ReplayFormat,
    pub items: Vec<ReplayItem>,
    /// Lines or frames that failed to parse or verify.
    pub skipped: usize,
}

/// Decides the format from content alone. A file must start with the frame
/// magic to be binary, or with a recording line to be text; anything else is
/// refused rather than guessed.
pub fn detect_format(bytes: &[u8]) -> Result<ReplayFormat, ReplayError> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(ReplayFormat::Empty);
    }
    if bytes.starts_with(&MAGIC) {
        return Ok(ReplayFormat::Binary);
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| ReplayError::Unrecognized("binary data without frame magic".into()))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    match parse_recording_line(first) {
        Ok(_) => Ok(ReplayFormat::Recording),
        Err(e) => Err(ReplayError::Unrecognized(format!(
            "first line is not a {RECORDING_FIELDS}-field recording line ({e})"
        ))),
    }
}

pub fn parse_replay(bytes: &[u8]) -> Result<ReplayFile, ReplayError> {
    let format = detect_format(bytes)?;
    let mut items = Vec::new();
    let mut skipped = 0;
    match format {
        ReplayFormat::Empty => {}
        ReplayFormat::Binary => {
            let mut dec = FrameDecoder::new();
            for ev in dec.feed(bytes) {
                match ev {
                    DecodeEvent::Frame(f) => items.push(ReplayItem::Raw(f)),
                    DecodeEvent::Corrupt(_) => skipped += 1,
                }
            }
            if dec.buffered() > 0 {
                skipped += 1;
            }
        }
        ReplayFormat::Recording => {
            // detect_format has already checked this is UTF-8
            let text = std::str::from_utf8(bytes).unwrap_or_default();
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match parse_recording_line(line) {
                    Ok(f) => items.push(ReplayItem::Recorded(f)),
                    Err(e) => {
                        warn!("line {}: {e}", n + 1);
                        skipped += 1;
                    }
                }
            }
        }
    }
    Ok(ReplayFile {
        format,
        items,
        skipped,
    })
}

pub fn load_replay(path: &Path) -> Result<ReplayFile, ReplayError> {
    let bytes = std::fs::read(path).map_err(|source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_replay(&bytes)
}

/// Sleeps so that items come out on their original timeline divided by
/// `speed`, measured from the first item.
#[derive(Debug)]
pub struct Pacer {
    speed: f64,
    start: Option<(Instant, u32)>,
}

impl Pacer {
    pub fn new(speed: f64) -> Result<Self, ReplayError> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(ReplayError::Speed(speed));
        }
        Ok(Pacer { speed, start: None })
    }

    /// Wall-clock offset of `timestamp_ms` from the first timestamp seen.
    pub fn offset(&self, first_ms: u32, timestamp_ms: u32) -> Duration {
        let dt = timestamp_ms.saturating_sub(first_ms) as f64 / 1000.0;
        Duration::from_secs_f64(dt / self.speed)
    }

    pub fn wait(&mut self, timestamp_ms: u32) {
        let (t0, first) = *self.start.get_or_insert((Instant::now(), timestamp_ms));
        let due = t0 + self.offset(first, timestamp_ms);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    }
}
