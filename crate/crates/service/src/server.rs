//! The running service: ingestion/decoding, transform and fan-out stages on
//! their own threads, joined by bounded queues, plus per-client socket
//! threads.

use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use fretsense_core::calibration::CalibrationSet;
use fretsense_core::model::{FRAME_RATE_HZ, N_ACTIVE_FRETS, N_STRINGS};
use fretsense_core::wire::{DecodeEvent, FrameDecoder};
use log::{debug, error, info, warn};
use thiserror::Error;

use crate::messages::{module_from_pair, Command, Outbound, PROTOCOL_VERSION};
use crate::pipeline::{CompensationMode, PipelineStats, Published, Transform};
use crate::publish::{ClientId, Payload, Subscribers, SUBSCRIBER_QUEUE_DEPTH};
use crate::recorder::{Recorder, SessionState};
use crate::replay::{Pacer, ReplayItem};
use crate::threshold::ThresholdConfig;

const STAGE_QUEUE_DEPTH: usize = 256;
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ServiceError {
    pub fn is_addr_in_use(&self) -> bool {
        matches!(self, ServiceError::Bind { source, .. } if source.kind() == ErrorKind::AddrInUse)
    }
}

#[derive(Debug, Clone)]
pub enum Source {
    /// Accept device connections speaking the binary wire protocol.
    Device(SocketAddr),
    /// Feed pre-loaded items on their recorded timeline, then stop.
    Replay {
        items: Vec<ReplayItem>,
        speed: f64,
        /// Hold the first item until this many clients are attached.
        wait_for_clients: usize,
    },
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub source: Source,
    pub client_addr: SocketAddr,
    pub calibration: Option<CalibrationSet>,
    pub compensation: CompensationMode,
    pub thresholds: ThresholdConfig,
    pub recording_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceSummary {
    pub stats: PipelineStats,
    pub session: SessionState,
    pub slow_clients_dropped: u64,
}

enum StageInput {
    StreamStart,
    Decoded(DecodeEvent),
    Recorded(ReplayItem),
    Connected(ClientId, SyncSender<Payload>),
    Command(ClientId, Command),
    Reply(ClientId, Outbound),
    SourceDone,
}

enum FanOut {
    Attach(ClientId, SyncSender<Payload>),
    Broadcast(Payload),
    To(ClientId, Payload),
}

#[derive(Debug, Default)]
struct Shared {
    shutdown: AtomicBool,
    clients: AtomicUsize,
    stats: Mutex<PipelineStats>,
    session: Mutex<SessionState>,
}

/// Handle to a running service.
#[derive(Debug)]
pub struct ServiceHandle {
    device_addr: Option<SocketAddr>,
    client_addr: SocketAddr,
    shared: Arc<Shared>,
    ingest: JoinHandle<()>,
    transform: JoinHandle<()>,
    fanout: JoinHandle<u64>,
    acceptor: JoinHandle<()>,
}

pub fn start(config: ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let bind = |addr: SocketAddr| {
        TcpListener::bind(addr).map_err(|source| ServiceError::Bind { addr, source })
    };
    let device_listener = match &config.source {
        Source::Device(addr) => Some(bind(*addr)?),
        Source::Replay { .. } => None,
    };
    let client_listener = bind(config.client_addr)?;
    let device_addr = device_listener.as_ref().map(|l| l.local_addr()).transpose()?;
    let client_addr = client_listener.local_addr()?;
    if let Some(l) = &device_listener {
        l.set_nonblocking(true)?;
    }
    client_listener.set_nonblocking(true)?;

    let shared = Arc::new(Shared::default());
    let (input_tx, input_rx) = sync_channel::<StageInput>(STAGE_QUEUE_DEPTH);
    let (fan_tx, fan_rx) = sync_channel::<FanOut>(STAGE_QUEUE_DEPTH);

    let transform = Transform::new(config.calibration, config.compensation, config.thresholds);
    let recorder = Recorder::new(config.recording_dir);

    let ingest = {
        let tx = input_tx.clone();
        let shared = shared.clone();
        match (config.source, device_listener) {
            (Source::Device(_), Some(listener)) => {
                thread::Builder::new()
                    .name("ingest".into())
                    .spawn(move || ingest_device(listener, tx, &shared))?
            }
            (Source::Replay { items, speed, wait_for_clients }, _) => {
                let pacer = Pacer::new(speed).map_err(io::Error::other)?;
                thread::Builder::new()
                    .name("replay".into())
                    .spawn(move || ingest_replay(items, pacer, wait_for_clients, tx, &shared))?
            }
            (Source::Device(_), None) => unreachable!("device listener bound above"),
        }
    };
    let transform = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("transform".into())
            .spawn(move || run_transform(transform, recorder, input_rx, fan_tx, &shared))?
    };
    let fanout = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("fanout".into())
            .spawn(move || run_fanout(fan_rx, &shared))?
    };
    let acceptor = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("clients".into())
            .spawn(move || accept_clients(client_listener, input_tx, &shared))?
    };

    if let Some(a) = device_addr {
        info!("device port {a}");
    }
    info!("client port {client_addr}");
    Ok(ServiceHandle {
        device_addr,
        client_addr,
        shared,
        ingest,
        transform,
        fanout,
        acceptor,
    })
}

impl ServiceHandle {
    pub fn device_addr(&self) -> Option<SocketAddr> {
        self.device_addr
    }

    pub fn client_addr(&self) -> SocketAddr {
        self.client_addr
    }

    pub fn stats(&self) -> PipelineStats {
        *self.shared.stats.lock().unwrap()
    }

    pub fn session(&self) -> SessionState {
        self.shared.session.lock().unwrap().clone()
    }

    pub fn clients(&self) -> usize {
        self.shared.clients.load(Ordering::SeqCst)
    }

    /// Something a signal handler can hold on to.
    pub fn stopper(&self) -> Stopper {
        Stopper(self.shared.clone())
    }

    pub fn request_shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
    }

    pub fn is_finished(&self) -> bool {
        self.transform.is_finished()
    }

    /// Waits until the service stops, either after [`request_shutdown`] or
    /// when a replay source runs out.
    ///
    /// [`request_shutdown`]: ServiceHandle::request_shutdown
    pub fn wait(self) -> ServiceSummary {
        let _ = self.transform.join();
        self.shared.shutdown.store(true, Ordering::SeqCst);
        let _ = self.ingest.join();
        let _ = self.acceptor.join();
        let slow_clients_dropped = self.fanout.join().unwrap_or_default();
        ServiceSummary {
            stats: *self.shared.stats.lock().unwrap(),
            session: self.shared.session.lock().unwrap().clone(),
            slow_clients_dropped,
        }
    }

    pub fn shutdown(self) -> ServiceSummary {
        self.request_shutdown();
        self.wait()
    }
}

/// Requests shutdown of the service it came from.
#[derive(Debug, Clone)]
pub struct Stopper(Arc<Shared>);

impl Stopper {
    pub fn stop(&self) {
        self.0.shutdown.store(true, Ordering::SeqCst);
    }
}

fn stopping(shared: &Shared) -> bool {
    shared.shutdown.load(Ordering::SeqCst)
}

fn ingest_device(listener: TcpListener, tx: SyncSender<StageInput>, shared: &Shared) {
    let mut buf = [0u8; 4096];
    while !stopping(shared) {
        let stream = match listener.accept() {
            Ok((s, peer)) => {
                info!("device connected from {peer}");
                s
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                thread::sleep(POLL);
                continue;
            }
            Err(e) => {
                error!("device accept failed: {e}");
                thread::sleep(POLL);
                continue;
            }
        };
        if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(POLL)).is_err() {
            continue;
        }
        if tx.send(StageInput::StreamStart).is_err() {
            return;
        }
        let mut decoder = FrameDecoder::new();
        let mut stream = stream;
        while !stopping(shared) {
            match stream.read(&mut buf) {
                Ok(0) => {
                    info!("device disconnected");
                    break;
                }
                Ok(n) => {
                    for ev in decoder.feed(&buf[..n]) {
                        if tx.send(StageInput::Decoded(ev)).is_err() {
                            return;
                        }
                    }
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => {
                    warn!("device read failed: {e}");
                    break;
                }
            }
        }
        let stats = decoder.stats();
        debug!(
            "stream closed: {} frames, {} corrupt, {} bytes skipped",
            stats.frames, stats.corrupt, stats.skipped_bytes
        );
    }
}

fn ingest_replay(
    items: Vec<ReplayItem>,
    mut pacer: Pacer,
    wait_for_clients: usize,
    tx: SyncSender<StageInput>,
    shared: &Shared,
) {
    while shared.clients.load(Ordering::SeqCst) < wait_for_clients {
        if stopping(shared) {
            return;
        }
        thread::sleep(Duration::from_millis(5));
    }
    if tx.send(StageInput::StreamStart).is_err() {
        return;
    }
    for item in items {
        if stopping(shared) {
            return;
        }
        pacer.wait(item.timestamp_ms());
        if tx.send(StageInput::Recorded(item)).is_err() {
            return;
        }
    }
    let _ = tx.send(StageInput::SourceDone);
}

struct TransformStage<'a> {
    transform: Transform,
    recorder: Recorder,
    fan: SyncSender<FanOut>,
    shared: &'a Shared,
    replay_seq: u16,
}

impl TransformStage<'_> {
    fn broadcast(&self, msg: &Outbound) -> bool {
        self.fan.send(FanOut::Broadcast(Arc::from(msg.to_line()))).is_ok()
    }

    fn reply(&self, id: ClientId, msg: &Outbound) {
        let _ = self.fan.send(FanOut::To(id, Arc::from(msg.to_line())));
    }

    fn publish(&mut self, p: Published) -> bool {
        if let Published::Force(f) = &p {
            if let Err(stopped) = self.recorder.record(f) {
                let path = stopped.state.path.as_ref().map(|p| p.display().to_string());
                self.broadcast(&Outbound::RecordingStopped {
                    path: path.unwrap_or_default(),
                    frames_written: stopped.state.frames_written,
                    truncated: true,
                    reason: stopped.reason,
                });
            }
        }
        self.broadcast(&Outbound::from_published(&p))
    }

    fn hello(&self) -> Outbound {
        Outbound::Hello {
            protocol: PROTOCOL_VERSION,
            frets: N_ACTIVE_FRETS,
            strings: N_STRINGS,
            frame_rate_hz: FRAME_RATE_HZ,
            threshold: self.transform.thresholds().global(),
            calibrated: self.transform.is_calibrated(),
            recording: self.recorder.is_recording(),
        }
    }

    fn command(&mut self, id: ClientId, cmd: Command) {
        let name = cmd.name();
        let msg = match cmd {
            Command::SetThreshold { newtons, module } => {
                let result = match module {
                    None => self.transform.thresholds_mut().set_global(newtons).map_err(|e| e.to_string()),
                    Some(pair) => module_from_pair(pair).and_then(|m| {
                        self.transform.thresholds_mut().set_module(m, newtons).map_err(|e| e.to_string())
                    }),
                };
                match result {
                    Ok(()) => {
                        info!("threshold {newtons} N for {}", module.map_or("all modules".into(), |p| format!("{p:?}")));
                        let mut ack = Outbound::ack(name);
                        if let Outbound::Ack { threshold, module: m, .. } = &mut ack {
                            *threshold = Some(newtons);
                            *m = module;
                        }
                        ack
                    }
                    Err(e) => Outbound::nack(name, e),
                }
            }
            Command::StartRecording => match self.recorder.start() {
                Ok(path) => recording_ack(name, true, &path),
                Err(e) => Outbound::nack(name, e.to_string()),
            },
            Command::StopRecording => match self.recorder.stop() {
                Ok(state) => recording_ack(name, false, state.path.as_deref().unwrap_or(Path::new(""))),
                Err(e) => Outbound::nack(name, e.to_string()),
            },
            Command::LoadCalibration { path } => match CalibrationSet::load(Path::new(&path)) {
                Ok(set) => {
                    info!("loaded calibration from {path}");
                    self.transform.load_calibration(set);
                    Outbound::ack(name)
                }
                Err(e) => Outbound::nack(name, format!("{path}: {e}")),
            },
            Command::Status => Outbound::status(self.transform.stats(), self.recorder.state()),
        };
        self.reply(id, &msg);
    }

    fn sync_shared(&self) {
        *self.shared.stats.lock().unwrap() = self.transform.stats();
        *self.shared.session.lock().unwrap() = self.recorder.state().clone();
    }

    /// Returns false when the stage should stop.
    fn handle(&mut self, input: StageInput) -> bool {
        let ok = match input {
            StageInput::StreamStart => {
                self.transform.reset_stream();
                true
            }
            StageInput::Decoded(DecodeEvent::Frame(f)) => {
                let p = self.transform.process(&f);
                self.publish(p)
            }
            StageInput::Decoded(DecodeEvent::Corrupt(e)) => {
                warn!("dropping frame: {e}");
                self.transform.note_dropped();
                self.recorder.note_dropped(1);
                true
            }
            StageInput::Recorded(ReplayItem::Raw(f)) => {
                let p = self.transform.process(&f);
                self.publish(p)
            }
            StageInput::Recorded(ReplayItem::Recorded(f)) => {
                let p = self.transform.process_recorded(&f, self.replay_seq);
                self.replay_seq = self.replay_seq.wrapping_add(1);
                self.publish(p)
            }
            StageInput::Connected(id, tx) => {
                let _ = tx.try_send(Arc::from(self.hello().to_line()));
                self.fan.send(FanOut::Attach(id, tx)).is_ok()
            }
            StageInput::Command(id, cmd) => {
                self.command(id, cmd);
                true
            }
            StageInput::Reply(id, msg) => {
                self.reply(id, &msg);
                true
            }
            StageInput::SourceDone => false,
        };
        self.sync_shared();
        ok
    }
}

fn recording_ack(name: &str, recording: bool, path: &Path) -> Outbound {
    let mut ack = Outbound::ack(name);
    if let Outbound::Ack { recording: r, path: p, .. } = &mut ack {
        *r = Some(recording);
        *p = Some(path.display().to_string());
    }
    ack
}

fn run_transform(
    transform: Transform,
    recorder: Recorder,
    rx: Receiver<StageInput>,
    fan: SyncSender<FanOut>,
    shared: &Shared,
) {
    let mut stage = TransformStage {
        transform,
        recorder,
        fan,
        shared,
        replay_seq: 0,
    };
    loop {
        if stopping(shared) {
            break;
        }
        match rx.recv_timeout(POLL) {
            Ok(input) => {
                if !stage.handle(input) {
                    break;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    if stage.recorder.is_recording() {
        if let Err(e) = stage.recorder.stop() {
            error!("closing recording: {e}");
        }
    }
    stage.sync_shared();
    shared.shutdown.store(true, Ordering::SeqCst);
}

fn run_fanout(rx: Receiver<FanOut>, shared: &Shared) -> u64 {
    let mut subs = Subscribers::with_depth(SUBSCRIBER_QUEUE_DEPTH);
    for msg in rx {
        match msg {
            FanOut::Attach(id, tx) => subs.attach(id, tx),
            FanOut::Broadcast(p) => {
                subs.publish(&p);
            }
            FanOut::To(id, p) => {
                subs.send_to(id, p);
            }
        }
        shared.clients.store(subs.len(), Ordering::SeqCst);
    }
    subs.dropped_slow()
}

fn accept_clients(listener: TcpListener, input: SyncSender<StageInput>, shared: &Arc<Shared>) {
    let next_id = AtomicU64::new(0);
    while !stopping(shared) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id.fetch_add(1, Ordering::SeqCst);
                info!("client {id} connected from {peer}");
                if let Err(e) = spawn_client(id, stream, input.clone(), shared.clone()) {
                    warn!("client {id}: {e}");
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                error!("client accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn spawn_client(
    id: ClientId,
    stream: TcpStream,
    input: SyncSender<StageInput>,
    shared: Arc<Shared>,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let (tx, rx) = sync_channel::<Payload>(SUBSCRIBER_QUEUE_DEPTH);
    let mut writer = stream.try_clone()?;
    thread::Builder::new()
        .name(format!("client-{id}-out"))
        .spawn(move || {
            for line in rx {
                if writer.write_all(line.as_bytes()).is_err() {
                    break;
                }
            }
            let _ = writer.shutdown(std::net::Shutdown::Write);
            debug!("client {id} writer done");
        })?;
    if input.send(StageInput::Connected(id, tx)).is_err() {
        return Ok(());
    }
    thread::Builder::new()
        .name(format!("client-{id}-in"))
        .spawn(move || read_commands(id, stream, input, &shared))?;
    Ok(())
}

fn read_commands(id: ClientId, stream: TcpStream, input: SyncSender<StageInput>, shared: &Shared) {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    while !stopping(shared) {
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {
                if !line.ends_with('\n') {
                    continue;
                }
                if !line.trim().is_empty() {
                    let msg = match Command::parse(&line) {
                        Ok(cmd) => StageInput::Command(id, cmd),
                        Err(e) => {
                            warn!("client {id} sent an unreadable command: {e}");
                            StageInput::Reply(id, Outbound::nack("unknown", e.to_string()))
                        }
                    };
                    if input.send(msg).is_err() {
                        break;
                    }
                }
                line.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    debug!("client {id} reader done");
}
