//! Binary framing of raw scans and the plain-text session recording format.
//!
//! Frame layout, all multi-byte fields little-endian:
//!
//! ```text
//! offset  size  field
//!      0     2  magic 0xFB 0x72
//!      2     1  version (1)
//!      3     2  seq (u16, wrapping)
//!      5     4  timestamp_ms (u32)
//!      9   168  84 x u16 counts: fret 1..12, each string 1..6 then reference
//!    177     2  CRC-16/CCITT-FALSE over bytes 0..177
//! ```

mod crc;
mod recording;

use std::io::{self, Write};

use thiserror::Error;

pub use crc::crc16_ccitt_false;
pub use recording::{
    parse_recording_line, write_recording_line, RecordedFrame, RecordingError, RECORDING_FIELDS,
};

use crate::emulator::FrameSink;
use crate::model::{RawFrame, CHANNELS_PER_FRET, N_ACTIVE_FRETS};

pub const MAGIC: [u8; 2] = [0xFB, 0x72];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 9;
pub const PAYLOAD_VALUES: usize = N_ACTIVE_FRETS * CHANNELS_PER_FRET;
pub const PAYLOAD_LEN: usize = PAYLOAD_VALUES * 2;
pub const CRC_OFFSET: usize = HEADER_LEN + PAYLOAD_LEN;
pub const FRAME_LEN: usize = CRC_OFFSET + 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("count {value} at fret row {row}, column {col} exceeds 4095")]
    CountOutOfRange { row: usize, col: usize, value: u16 },
    #[error("need {needed} more bytes")]
    NeedMore { needed: usize },
    #[error("bad magic {0:02X?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("crc mismatch: frame carries {found:#06x}, computed {computed:#06x}")]
    Crc { found: u16, computed: u16 },
}

pub fn encode_frame(frame: &RawFrame) -> Result<[u8; FRAME_LEN], WireError> {
    if let Some((row, col, value)) = frame.out_of_range() {
        return Err(WireError::CountOutOfRange { row, col, value });
    }
    let mut out = [0u8; FRAME_LEN];
    out[0..2].copy_from_slice(&MAGIC);
    out[2] = VERSION;
    out[3..5].copy_from_slice(&frame.seq.to_le_bytes());
    out[5..9].copy_from_slice(&frame.timestamp_ms.to_le_bytes());
    for (i, &c) in frame.counts.iter().flatten().enumerate() {
        let at = HEADER_LEN + 2 * i;
        out[at..at + 2].copy_from_slice(&c.to_le_bytes());
    }
    let crc = crc16_ccitt_false(&out[..CRC_OFFSET]);
    out[CRC_OFFSET..].copy_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decodes exactly one frame from the start of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<RawFrame, WireError> {
    if bytes.len() < 2 {
        return Err(WireError::NeedMore {
            needed: FRAME_LEN - bytes.len(),
        });
    }
    if bytes[0..2] != MAGIC {
        return Err(WireError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes.len() < FRAME_LEN {
        return Err(WireError::NeedMore {
            needed: FRAME_LEN - bytes.len(),
        });
    }
    let bytes = &bytes[..FRAME_LEN];
    let found = u16::from_le_bytes([bytes[CRC_OFFSET], bytes[CRC_OFFSET + 1]]);
    let computed = crc16_ccitt_false(&bytes[..CRC_OFFSET]);
    if found != computed {
        return Err(WireError::Crc { found, computed });
    }
    if bytes[2] != VERSION {
        return Err(WireError::BadVersion(bytes[2]));
    }
    let mut frame = RawFrame::zeroed(
        u16::from_le_bytes([bytes[3], bytes[4]]),
        u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]),
    );
    for (i, cell) in frame.counts.iter_mut().flatten().enumerate() {
        let at = HEADER_LEN + 2 * i;
        *cell = u16::from_le_bytes([bytes[at], bytes[at + 1]]);
    }
    if let Some((row, col, value)) = frame.out_of_range() {
        return Err(WireError::CountOutOfRange { row, col, value });
    }
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeEvent {
    Frame(RawFrame),
    /// A frame-shaped region failed its integrity check and was dropped.
    Corrupt(WireError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecoderStats {
    pub frames: u64,
    /// Frames dropped on CRC, version or range failure.
    pub corrupt: u64,
    /// Bytes discarded while hunting for the next magic.
    pub skipped_bytes: u64,
}

/// Incremental decoder for a byte stream of concatenated frames.
///
/// After a bad CRC the decoder moves forward one byte and hunts for the
/// next magic, so a spurious magic inside garbage never swallows the valid
/// frame behind it. Failures starting inside the span of an already
/// reported corrupt frame are folded into that one report.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    pos: usize,
    /// Absolute stream offset of `buf[0]`.
    base: u64,
    quiet_until: u64,
    stats: DecoderStats,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    /// Bytes held waiting for the rest of a frame.
    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos >= self.buf.len() / 2 {
            self.buf.drain(..self.pos);
            self.base += self.pos as u64;
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete event, or `None` when more bytes are needed.
    pub fn next_event(&mut self) -> Option<DecodeEvent> {
        loop {
            let window = &self.buf[self.pos..];
            let Some(at) = window.windows(2).position(|w| w == MAGIC) else {
                // keep a trailing first magic byte, it may complete later
                let keep = usize::from(window.last() == Some(&MAGIC[0]));
                let skip = window.len() - keep;
                self.stats.skipped_bytes += skip as u64;
                self.pos += skip;
                return None;
            };
            self.stats.skipped_bytes += at as u64;
            self.pos += at;
            if self.buf.len() - self.pos < FRAME_LEN {
                return None;
            }
            let start = self.base + self.pos as u64;
            match decode_frame(&self.buf[self.pos..self.pos + FRAME_LEN]) {
                Ok(frame) => {
                    self.pos += FRAME_LEN;
                    self.stats.frames += 1;
                    return Some(DecodeEvent::Frame(frame));
                }
                Err(e) => {
                    self.pos += 1;
                    self.stats.skipped_bytes += 1;
                    if start >= self.quiet_until {
                        self.quiet_until = start + FRAME_LEN as u64;
                        self.stats.corrupt += 1;
                        return Some(DecodeEvent::Corrupt(e));
                    }
                }
            }
        }
    }

    /// Pushes `bytes` and drains every event they complete.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<DecodeEvent> {
        self.push(bytes);
        std::iter::from_fn(|| self.next_event()).collect()
    }
}

/// Encodes frames onto any byte sink.
pub struct WireWriter<W: Write> {
    inner: W,
    frames: u64,
}

impl<W: Write> WireWriter<W> {
    pub fn new(inner: W) -> Self {
        WireWriter { inner, frames: 0 }
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> FrameSink for WireWriter<W> {
    fn accept(&mut self, frame: &RawFrame) -> io::Result<()> {
        let bytes =
            encode_frame(frame).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        self.inner.write_all(&bytes)?;
        self.inner.flush()?;
        self.frames += 1;
        Ok(())
    }
}
