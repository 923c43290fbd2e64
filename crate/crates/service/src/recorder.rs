//! Session recording: one text line per published force frame.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use fretsense_core::model::ForceFrame;
use fretsense_core::wire::write_recording_line;
use log::{error, info};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("a recording is already active: {0}")]
    AlreadyRecording(PathBuf),
    #[error("no recording is active")]
    NotRecording,
    #[error("cannot create {path}: {source}")]
    Create { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionState {
    pub recording: bool,
    pub path: Option<PathBuf>,
    pub frames_written: u64,
    /// Frames lost to integrity failures while this session was open.
    pub dropped_frames: u64,
    /// The session ended on a write failure.
    pub truncated: bool,
}

/// Why a session closed on its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interrupted {
    pub state: SessionState,
    pub reason: String,
}

type Opener = Box<dyn FnMut(&Path) -> io::Result<Box<dyn Write + Send>> + Send>;

pub struct Recorder {
    dir: PathBuf,
    open: Opener,
    out: Option<Box<dyn Write + Send>>,
    state: SessionState,
}

impl std::fmt::Debug for Recorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recorder")
            .field("dir", &self.dir)
            .field("state", &self.state)
            .finish()
    }
}

fn create_new(path: &Path) -> io::Result<Box<dyn Write + Send>> {
    let f: File = OpenOptions::new().write(true).create_new(true).open(path)?;
    Ok(Box::new(f))
}

/// `session_<UTC basic ISO 8601>.txt`, e.g. `session_20240131T120501.250Z.txt`.
pub fn session_file_name(now: chrono::DateTime<Utc>) -> String {
    format!("session_{}.txt", now.format("%Y%m%dT%H%M%S%.3fZ"))
}

impl Recorder {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Recorder::with_opener(dir, Box::new(create_new))
    }

    /// Uses `open` instead of creating files; for tests and fault injection.
    pub fn with_opener(dir: impl Into<PathBuf>, open: Opener) -> Self {
        Recorder {
            dir: dir.into(),
            open,
            out: None,
            state: SessionState::default(),
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn is_recording(&self) -> bool {
        self.out.is_some()
    }

    pub fn start(&mut self) -> Result<PathBuf, RecorderError> {
        if let (true, Some(p)) = (self.is_recording(), &self.state.path) {
            return Err(RecorderError::AlreadyRecording(p.clone()));
        }
        let base = session_file_name(Utc::now());
        let stem = base.trim_end_matches(".txt").to_string();
        let mut path = self.dir.join(&base);
        let mut n = 1;
        while path.exists() {
            path = self.dir.join(format!("{stem}-{n}.txt"));
            n += 1;
        }
        let out = (self.open)(&path).map_err(|source| RecorderError::Create {
            path: path.clone(),
            source,
        })?;
        info!("recording to {}", path.display());
        self.out = Some(out);
        self.state = SessionState {
            recording: true,
            path: Some(path.clone()),
            ..SessionState::default()
        };
        Ok(path)
    }

    pub fn stop(&mut self) -> Result<SessionState, RecorderError> {
        let mut out = self.out.take().ok_or(RecorderError::NotRecording)?;
        if let Err(e) = out.flush() {
            error!("flushing recording failed: {e}");
            self.state.truncated = true;
        }
        self.state.recording = false;
        info!("recording stopped after {} frames", self.state.frames_written);
        Ok(self.state.clone())
    }

    pub fn note_dropped(&mut self, n: u64) {
        if self.is_recording() {
            self.state.dropped_frames += n;
        }
    }

    /// Appends one line. Each line goes out in a single write followed by
    /// a flush, so an interrupted session never ends mid-line unless the
    /// disk itself fails. A write failure ends the session.
    pub fn record(&mut self, frame: &ForceFrame) -> Result<(), Interrupted> {
        let Some(out) = self.out.as_mut() else {
            return Ok(());
        };
        let line = write_recording_line(frame);
        match out.write_all(line.as_bytes()).and_then(|_| out.flush()) {
            Ok(()) => {
                self.state.frames_written += 1;
                Ok(())
            }
            Err(e) => {
                error!("recording write failed, stopping: {e}");
                self.out = None;
                self.state.recording = false;
                self.state.truncated = true;
                Err(Interrupted {
                    state: self.state.clone(),
                    reason: e.to_string(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::sync::{Arc, Mutex};

    fn frame(ts: u32) -> ForceFrame {
        ForceFrame::new(0, ts, [[1.0; 6]; 12], |_| 8.0)
    }

    #[test]
    fn file_name_format() {
        let t = Utc.with_ymd_and_hms(2024, 1, 31, 12, 5, 1).unwrap();
        assert_eq!(session_file_name(t), "session_20240131T120501.000Z.txt");
    }

    #[test]
    fn two_hundred_frames_two_hundred_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Recorder::new(dir.path());
        let path = r.start().unwrap();
        for i in 0..200 {
            r.record(&frame(i * 50)).unwrap();
        }
        let state = r.stop().unwrap();
        assert_eq!(state.frames_written, 200);
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 200);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn stop_then_start_gives_distinct_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Recorder::new(dir.path());
        let a = r.start().unwrap();
        r.stop().unwrap();
        let b = r.start().unwrap();
        r.stop().unwrap();
        assert_ne!(a, b);
        assert!(a.exists() && b.exists());
    }

    #[test]
    fn double_start_and_idle_stop_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Recorder::new(dir.path());
        assert!(matches!(r.stop(), Err(RecorderError::NotRecording)));
        r.start().unwrap();
        assert!(matches!(r.start(), Err(RecorderError::AlreadyRecording(_))));
    }

    struct FailAfter {
        left: usize,
        sink: Arc<Mutex<Vec<u8>>>,
    }

    impl Write for FailAfter {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            if self.left == 0 {
                return Err(io::Error::other("disk full"));
            }
            self.left -= 1;
            self.sink.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn write_failure_truncates_session() {
        let sink = Arc::new(Mutex::new(Vec::new()));
        let s = sink.clone();
        let mut r = Recorder::with_opener(
            "unused",
            Box::new(move |_| {
                Ok(Box::new(FailAfter {
                    left: 3,
                    sink: s.clone(),
                }))
            }),
        );
        r.start().unwrap();
        for i in 0..3 {
            r.record(&frame(i)).unwrap();
        }
        let err = r.record(&frame(3)).unwrap_err();
        assert!(err.state.truncated);
        assert_eq!(err.state.frames_written, 3);
        assert!(!r.is_recording());
        // Further frames are ignored rather than failing the stream.
        r.record(&frame(4)).unwrap();
        assert_eq!(String::from_utf8(sink.lock().unwrap().clone()).unwrap().lines().count(), 3);
    }
}
