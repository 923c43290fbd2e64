//! Client protocol: one JSON object per line in each direction.

use fretsense_core::model::{ForceFrame, Grid, ModuleId};
use serde::{Deserialize, Serialize};

use crate::pipeline::{PipelineStats, Published};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    Calibrated,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Hello {
        protocol: u32,
        frets: usize,
        strings: usize,
        frame_rate_hz: u32,
        threshold: f64,
        calibrated: bool,
        recording: bool,
    },
    Frame {
        mode: FrameMode,
        seq: u16,
        timestamp_ms: u32,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        forces: Option<Grid<f64>>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        over_threshold: Option<Grid<bool>>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        counts: Option<Grid<u16>>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        compensated: Option<bool>,
    },
    Ack {
        command: String,
        ok: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        threshold: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        module: Option<[i64; 2]>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        recording: Option<bool>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        path: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        error: Option<String>,
    },
    Status {
        frames_received: u64,
        frames_published: u64,
        frames_dropped: u64,
        gaps: u64,
        recording: bool,
        frames_written: u64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        path: Option<String>,
        truncated: bool,
    },
    /// Recording ended without a `stop_recording`, e.g. on a write failure.
    RecordingStopped {
        path: String,
        frames_written: u64,
        truncated: bool,
        reason: String,
    },
}

/// Wire forces carry 0.1 mN, far below one ADC count.
fn round_force(f: f64) -> f64 {
    (f * 1e4).round() / 1e4
}

impl Outbound {
    pub fn from_published(p: &Published) -> Outbound {
        match p {
            Published::Force(f) => Outbound::from_force_frame(f),
            Published::Raw(r) => Outbound::Frame {
                mode: FrameMode::Raw,
                seq: r.seq,
                timestamp_ms: r.timestamp_ms,
                forces: None,
                over_threshold: None,
                counts: Some(r.counts),
                compensated: Some(r.compensated),
            },
        }
    }

    pub fn from_force_frame(f: &ForceFrame) -> Outbound {
        Outbound::Frame {
            mode: FrameMode::Calibrated,
            seq: f.seq,
            timestamp_ms: f.timestamp_ms,
            forces: Some(f.forces().map(|row| row.map(round_force))),
            over_threshold: Some(*f.over_threshold()),
            counts: None,
            compensated: None,
        }
    }

    pub fn ack(command: &str) -> Outbound {
        Outbound::Ack {
            command: command.to_string(),
            ok: true,
            threshold: None,
            module: None,
            recording: None,
            path: None,
            error: None,
        }
    }

    pub fn nack(command: &str, error: impl Into<String>) -> Outbound {
        Outbound::Ack {
            command: command.to_string(),
            ok: false,
            threshold: None,
            module: None,
            recording: None,
            path: None,
            error: Some(error.into()),
        }
    }

    pub fn status(stats: PipelineStats, session: &crate::recorder::SessionState) -> Outbound {
        Outbound::Status {
            frames_received: stats.frames_received,
            frames_published: stats.frames_published,
            frames_dropped: stats.frames_dropped,
            gaps: stats.gaps,
            recording: session.recording,
            frames_written: session.frames_written,
            path: session.path.as_ref().map(|p| p.display().to_string()),
            truncated: session.truncated,
        }
    }

    /// One protocol line, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("outbound messages always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Outbound, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    SetThreshold {
        newtons: f64,
        /// `[fret, string]`; absent means the global threshold.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        module: Option<[i64; 2]>,
    },
    StartRecording,
    StopRecording,
    LoadCalibration {
        path: String,
    },
    Status,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetThreshold { .. } => "set_threshold",
            Command::StartRecording => "start_recording",
            Command::StopRecording => "stop_recording",
            Command::LoadCalibration { .. } => "load_calibration",
            Command::Status => "status",
        }
    }

    pub fn parse(line: &str) -> Result<Command, serde_json::Error> {
        serde_json::from_str(line.trim())
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("commands always serialize");
        s.push('\n');
        s
    }
}

/// Resolves a `[fret, string]` pair from a command.
pub fn module_from_pair(pair: [i64; 2]) -> Result<ModuleId, String> {
    ModuleId::new(pair[0], pair[1]).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_message_shape() {
        let mut forces = [[0.0; 6]; 12];
        forces[1][2] = 8.01;
        let f = ForceFrame::new(3, 150, forces, |_| 8.0);
        let line = Outbound::from_force_frame(&f).to_line();
        assert!(line.ends_with('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["type"], "frame");
        assert_eq!(v["mode"], "calibrated");
        assert_eq!(v["seq"], 3);
        assert_eq!(v["timestamp_ms"], 150);
        assert_eq!(v["forces"].as_array().unwrap().len(), 12);
        assert_eq!(v["forces"][1][2], 8.01);
        assert_eq!(v["over_threshold"][1][2], true);
        assert_eq!(v["over_threshold"][1][3], false);
        assert!(v.get("counts").is_none());
        assert_eq!(Outbound::parse(&line).unwrap(), Outbound::from_force_frame(&f));
    }

    #[test]
    fn commands_parse() {
        assert_eq!(
            Command::parse(r#"{"cmd":"set_threshold","newtons":6.5}"#).unwrap(),
            Command::SetThreshold { newtons: 6.5, module: None }
        );
        assert_eq!(
            Command::parse(r#"{"cmd":"set_threshold","newtons":6.5,"module":[2,3]}"#).unwrap(),
            Command::SetThreshold { newtons: 6.5, module: Some([2, 3]) }
        );
        assert_eq!(Command::parse(r#"{"cmd":"start_recording"}"#).unwrap(), Command::StartRecording);
        assert_eq!(Command::parse(" {\"cmd\":\"stop_recording\"}\r").unwrap(), Command::StopRecording);
        assert_eq!(
            Command::parse(r#"{"cmd":"load_calibration","path":"a.cal"}"#).unwrap(),
            Command::LoadCalibration { path: "a.cal".into() }
        );
        assert!(Command::parse(r#"{"cmd":"reboot"}"#).is_err());
        assert!(Command::parse("set_threshold 5").is_err());
    }

    #[test]
    fn ack_omits_empty_fields() {
        let line = Outbound::ack("stop_recording").to_line();
        assert_eq!(line, "{\"type\":\"ack\",\"command\":\"stop_recording\",\"ok\":true}\n");
    }
}
