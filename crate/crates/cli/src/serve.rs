use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::Args;
use fretsense_core::calibration::CalibrationSet;
use fretsense_service::replay::Pacer;
use fretsense_service::{
    load_replay, start, CompensationMode, Outbound, ReplayFormat, ReplayItem, ServiceConfig,
    ServiceHandle, ServiceSummary, Source, ThresholdConfig, Transform, DEFAULT_THRESHOLD_N,
};
use log::{info, warn};

use crate::{CmdResult, Failure};

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Calibration set; without one frames are published as raw counts.
    #[arg(long, env = "FRETSENSE_CALSET")]
    calset: Option<PathBuf>,
    /// Over-force threshold in newtons.
    #[arg(long, env = "FRETSENSE_THRESHOLD", default_value_t = DEFAULT_THRESHOLD_N)]
    threshold: f64,
    /// Skip reference-channel drift compensation.
    #[arg(long)]
    no_compensation: bool,
}

impl PipelineArgs {
    fn calibration(&self) -> Result<Option<CalibrationSet>, Failure> {
        self.calset
            .as_ref()
            .map(|p| CalibrationSet::load(p).map_err(|e| Failure::input(format!("{}: {e}", p.display()))))
            .transpose()
    }

    fn thresholds(&self) -> Result<ThresholdConfig, Failure> {
        ThresholdConfig::new(self.threshold).map_err(Failure::input)
    }

    fn compensation(&self) -> CompensationMode {
        if self.no_compensation {
            CompensationMode::PassThrough
        } else {
            CompensationMode::Enabled
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Address to listen on.
    #[arg(long, env = "FRETSENSE_HOST", default_value = "127.0.0.1")]
    host: IpAddr,
    /// Port for the device byte stream; 0 picks a free one.
    #[arg(long, env = "FRETSENSE_DEVICE_PORT", default_value_t = 7070)]
    device_port: u16,
    /// Port for line-delimited JSON clients; 0 picks a free one.
    #[arg(long, env = "FRETSENSE_CLIENT_PORT", default_value_t = 7071)]
    client_port: u16,
    /// Where session recordings are written.
    #[arg(long, env = "FRETSENSE_RECORDING_DIR", default_value = ".")]
    recording_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Recording (.txt) or binary capture to replay.
    file: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Playback speed relative to the recorded timeline.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Publish to clients on this port instead of printing to stdout.
    #[arg(long)]
    client_port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// With --client-port, hold playback until this many clients connect.
    #[arg(long, default_value_t = 1, requires = "client_port")]
    wait_clients: usize,
    /// Where recordings started by clients during playback are written.
    #[arg(long, default_value = ".")]
    recording_dir: PathBuf,
}

fn check_dir(dir: &Path) -> CmdResult {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::input(format!("{} is not a directory", dir.display())))
    }
}

fn announce(handle: &ServiceHandle) {
    let mut out = std::io::stdout().lock();
    if let Some(a) = handle.device_addr() {
        let _ = writeln!(out, "device = {a}");
    }
    let _ = writeln!(out, "client = {}", handle.client_addr());
    let _ = out.flush();
}

fn run_until_done(handle: ServiceHandle) -> Result<ServiceSummary, Failure> {
    let stopper = handle.stopper();
    ctrlc::set_handler(move || stopper.stop()).map_err(Failure::runtime)?;
    Ok(handle.wait())
}

fn print_summary(s: &ServiceSummary) {
    println!("frames_received = {}", s.stats.frames_received);
    println!("frames_published = {}", s.stats.frames_published);
    println!("frames_dropped = {}", s.stats.frames_dropped);
    println!("gaps = {}", s.stats.gaps);
    println!("slow_clients_dropped = {}", s.slow_clients_dropped);
    if let Some(p) = &s.session.path {
        println!("last_recording = {}", p.display());
        println!("last_recording_frames = {}", s.session.frames_written);
        println!("last_recording_truncated = {}", s.session.truncated);
    }
}

fn start_service(config: ServiceConfig) -> Result<ServiceHandle, Failure> {
    start(config).map_err(|e| Failure::Runtime(e.into()))
}

pub fn serve(args: ServeArgs) -> CmdResult {
    check_dir(&args.recording_dir)?;
    let calibration = args.pipeline.calibration()?;
    if calibration.is_none() {
        warn!("no calibration set; publishing raw counts");
    }
    let handle = start_service(ServiceConfig {
        source: Source::Device(SocketAddr::new(args.host, args.device_port)),
        client_addr: SocketAddr::new(args.host, args.client_port),
        calibration,
        compensation: args.pipeline.compensation(),
        thresholds: args.pipeline.thresholds()?,
        recording_dir: args.recording_dir,
    })?;
    announce(&handle);
    let summary = run_until_done(handle)?;
    info!("service stopped");
    print_summary(&summary);
    Ok(())
}

pub fn replay(args: ReplayArgs) -> CmdResult {
    let pacer = Pacer::new(args.speed).map_err(Failure::input)?;
    let file = load_replay(&args.file).map_err(Failure::input)?;
    let calibration = args.pipeline.calibration()?;
    let thresholds = args.pipeline.thresholds()?;
    if file.format == ReplayFormat::Empty {
        warn!("{} is empty; nothing to replay", args.file.display());
    }
    if file.format == ReplayFormat::Binary && calibration.is_none() {
        warn!("binary capture without --calset; publishing raw counts");
    }
    let total = file.items.len();
    let skipped = file.skipped;

    if let Some(port) = args.client_port {
        check_dir(&args.recording_dir)?;
        let handle = start_service(ServiceConfig {
            source: Source::Replay {
                items: file.items,
                speed: args.speed,
                wait_for_clients: args.wait_clients,
            },
            client_addr: SocketAddr::new(args.host, port),
            calibration,
            compensation: args.pipeline.compensation(),
            thresholds,
            recording_dir: args.recording_dir,
        })?;
        announce(&handle);
        run_until_done(handle)?;
    } else {
        let mut transform = Transform::new(calibration, args.pipeline.compensation(), thresholds);
        let mut pacer = pacer;
        let mut out = std::io::stdout().lock();
        for (i, item) in file.items.iter().enumerate() {
            pacer.wait(item.timestamp_ms());
            let published = match item {
                ReplayItem::Raw(f) => transform.process(f),
                ReplayItem::Recorded(f) => transform.process_recorded(f, i as u16),
            };
            out.write_all(Outbound::from_published(&published).to_line().as_bytes())
                .and_then(|_| out.flush())
                .map_err(Failure::runtime)?;
        }
    }
    if skipped > 0 {
        warn!("replayed {total} frames, skipped {skipped} corrupt entries");
    } else {
        info!("replayed {total} frames");
    }
    Ok(())
}
