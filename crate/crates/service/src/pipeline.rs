//! Byte stream to published frames: decode, sequence check, temperature
//! compensation, calibration and thresholding.

use fretsense_core::calibration::{
    capture_baseline, counts_to_force, passthrough, temp_compensate, BaselineReference,
    CalibrationSet, CompensatedCounts, BASELINE_FRAMES,
};
use fretsense_core::model::{zero_grid, ForceFrame, Grid, ModuleId, RawFrame};
use fretsense_core::wire::{DecodeEvent, FrameDecoder, RecordedFrame};
use log::{info, warn};

use crate::threshold::ThresholdConfig;

/// Counts published when no calibration is loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDiagnostic {
    pub seq: u16,
    pub timestamp_ms: u32,
    pub counts: Grid<u16>,
    /// True when the counts have been drift compensated.
    pub compensated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Published {
    Force(ForceFrame),
    Raw(RawDiagnostic),
}

impl Published {
    pub fn seq(&self) -> u16 {
        match self {
            Published::Force(f) => f.seq,
            Published::Raw(r) => r.seq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapEvent {
    pub expected: u16,
    pub received: u16,
}

impl GapEvent {
    /// Frames missing between the two, modulo 2^16.
    pub fn missing(&self) -> u16 {
        self.received.wrapping_sub(self.expected)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineStats {
    /// Decoded frames plus frames rejected by the integrity check.
    pub frames_received: u64,
    pub frames_published: u64,
    pub frames_dropped: u64,
    pub gaps: u64,
    /// Frames in which at least one compensated cell had to be clamped.
    pub clamp_warnings: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensationMode {
    /// Subtract reference-channel drift; a baseline is captured from the
    /// first idle frames when none was supplied.
    Enabled,
    PassThrough,
}

const GAP_LOG_LIMIT: usize = 1024;

/// The transform stage. Owns calibration, baseline, thresholds and the
/// sequence tracker.
#[derive(Debug)]
pub struct Transform {
    calibration: Option<CalibrationSet>,
    baseline: Option<BaselineReference>,
    compensation: CompensationMode,
    thresholds: ThresholdConfig,
    pending_baseline: Vec<RawFrame>,
    last_seq: Option<u16>,
    gaps: Vec<GapEvent>,
    stats: PipelineStats,
}

impl Transform {
    pub fn new(
        calibration: Option<CalibrationSet>,
        compensation: CompensationMode,
        thresholds: ThresholdConfig,
    ) -> Self {
        let baseline = calibration.as_ref().and_then(|c| c.baseline);
        Transform {
            calibration,
            baseline,
            compensation,
            thresholds,
            pending_baseline: Vec::new(),
            last_seq: None,
            gaps: Vec::new(),
            stats: PipelineStats::default(),
        }
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats
    }

    pub fn gaps(&self) -> &[GapEvent] {
        &self.gaps
    }

    pub fn thresholds(&self) -> &ThresholdConfig {
        &self.thresholds
    }

    pub fn thresholds_mut(&mut self) -> &mut ThresholdConfig {
        &mut self.thresholds
    }

    pub fn baseline(&self) -> Option<&BaselineReference> {
        self.baseline.as_ref()
    }

    pub fn set_baseline(&mut self, baseline: BaselineReference) {
        self.baseline = Some(baseline);
        self.pending_baseline.clear();
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibration.is_some()
    }

    /// Replaces the calibration; a baseline carried by the set replaces the
    /// current one.
    pub fn load_calibration(&mut self, set: CalibrationSet) {
        if !set.is_complete() {
            warn!("calibration set covers {} of 72 modules; the rest read 0 N", set.len());
        }
        if let Some(b) = set.baseline {
            self.set_baseline(b);
        }
        self.calibration = Some(set);
    }

    /// A new device stream starts; sequence tracking restarts.
    pub fn reset_stream(&mut self) {
        self.last_seq = None;
    }

    /// Counts a frame that never decoded.
    pub fn note_dropped(&mut self) {
        self.stats.frames_received += 1;
        self.stats.frames_dropped += 1;
    }

    pub fn process(&mut self, frame: &RawFrame) -> Published {
        self.stats.frames_received += 1;
        self.check_seq(frame.seq);

        let counts = self.compensate(frame);
        if counts.as_ref().is_some_and(CompensatedCounts::any_clamped) {
            self.stats.clamp_warnings += 1;
        }

        let out = match (&self.calibration, counts) {
            (Some(set), Some(counts)) => {
                let mut forces = zero_grid::<f64>();
                for m in ModuleId::all() {
                    if let Some(curve) = set.get(m) {
                        forces[m.row()][m.col()] =
                            counts_to_force(counts.counts[m.row()][m.col()] as f64, curve);
                    }
                }
                let t = &self.thresholds;
                Published::Force(ForceFrame::new(frame.seq, frame.timestamp_ms, forces, |m| {
                    t.threshold(m)
                }))
            }
            (_, counts) => {
                let compensated = counts.is_some() && self.compensation == CompensationMode::Enabled;
                Published::Raw(RawDiagnostic {
                    seq: frame.seq,
                    timestamp_ms: frame.timestamp_ms,
                    counts: counts.unwrap_or_else(|| passthrough(frame)).counts,
                    compensated,
                })
            }
        };
        self.stats.frames_published += 1;
        out
    }

    /// Re-publishes a recorded frame. Its forces are already calibrated;
    /// only the thresholds are evaluated again.
    pub fn process_recorded(&mut self, frame: &RecordedFrame, seq: u16) -> Published {
        self.stats.frames_received += 1;
        self.stats.frames_published += 1;
        let t = &self.thresholds;
        Published::Force(ForceFrame::new(seq, frame.timestamp_ms, frame.forces, |m| {
            t.threshold(m)
        }))
    }

    /// `None` while a baseline is still being captured.
    fn compensate(&mut self, frame: &RawFrame) -> Option<CompensatedCounts> {
        if self.compensation == CompensationMode::PassThrough {
            return Some(passthrough(frame));
        }
        if self.baseline.is_none() {
            self.pending_baseline.push(frame.clone());
            if self.pending_baseline.len() >= BASELINE_FRAMES {
                match capture_baseline(&self.pending_baseline) {
                    Ok(b) => {
                        info!("captured baseline {:?}", b.per_fret);
                        self.baseline = Some(b);
                    }
                    Err(e) => warn!("baseline capture failed, retrying: {e}"),
                }
                self.pending_baseline.clear();
            }
            return None;
        }
        temp_compensate(frame, self.baseline.as_ref()).ok()
    }

    fn check_seq(&mut self, seq: u16) {
        if let Some(last) = self.last_seq {
            let expected = last.wrapping_add(1);
            if seq != expected {
                self.stats.gaps += 1;
                if self.gaps.len() < GAP_LOG_LIMIT {
                    self.gaps.push(GapEvent {
                        expected,
                        received: seq,
                    });
                }
                warn!("sequence gap: expected {expected}, got {seq}");
            }
        }
        self.last_seq = Some(seq);
    }
}

/// Decoder and transform run back to back on one thread.
#[derive(Debug)]
pub struct Pipeline {
    decoder: FrameDecoder,
    transform: Transform,
}

impl Pipeline {
    pub fn new(transform: Transform) -> Self {
        Pipeline {
            decoder: FrameDecoder::new(),
            transform,
        }
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn transform_mut(&mut self) -> &mut Transform {
        &mut self.transform
    }

    pub fn stats(&self) -> PipelineStats {
        self.transform.stats()
    }

    /// Feeds bytes and returns every frame they complete, in order.
    pub fn step(&mut self, bytes: &[u8]) -> Vec<Published> {
        let mut out = Vec::new();
        for event in self.decoder.feed(bytes) {
            match event {
                DecodeEvent::Frame(f) => out.push(self.transform.process(&f)),
                DecodeEvent::Corrupt(e) => {
                    warn!("dropping frame: {e}");
                    self.transform.note_dropped();
                }
            }
        }
        out
    }
}
