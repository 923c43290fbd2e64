//! Live acquisition: decodes the device byte stream, compensates and
//! calibrates each frame, flags over-threshold presses, fans frames out to
//! clients as line-delimited JSON and records sessions to text files.

pub mod messages;
pub mod pipeline;
pub mod publish;
pub mod recorder;
pub mod replay;
pub mod server;
pub mod threshold;

pub use messages::{Command, FrameMode, Outbound};
pub use pipeline::{CompensationMode, GapEvent, Pipeline, PipelineStats, Published, Transform};
pub use publish::{Subscribers, SUBSCRIBER_QUEUE_DEPTH};
pub use recorder::{Recorder, SessionState};
pub use replay::{load_replay, ReplayFile, ReplayFormat, ReplayItem};
pub use server::{start, ServiceConfig, ServiceError, ServiceHandle, ServiceSummary, Source, Stopper};
pub use threshold::{ThresholdConfig, DEFAULT_THRESHOLD_N};
