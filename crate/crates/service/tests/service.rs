use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};

use fretsense_core::calibration::{calibrate_modules, CalibrationSet, EmulatorRig, R_SQUARED_GATE};
use fretsense_core::emulator::{Emulator, EmulatorConfig, Pacing, PressEvent, Scenario};
use fretsense_core::model::{Grid, ModuleId, RawFrame};
use fretsense_core::wire::{encode_frame, WireWriter};
use fretsense_service::{
    load_replay, start, Command, CompensationMode, FrameMode, Outbound, ServiceConfig,
    ServiceHandle, Source, ThresholdConfig,
};

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn noiseless_calibration() -> CalibrationSet {
    let emu = Emulator::new(EmulatorConfig::noiseless()).unwrap();
    let mut rig = EmulatorRig::new(emu, 20).unwrap();
    let baseline = *rig.baseline();
    let modules: Vec<ModuleId> = ModuleId::all().collect();
    let out = calibrate_modules(&modules, &mut rig, Some(baseline), R_SQUARED_GATE);
    assert!(out.failures.is_empty());
    out.set
}

fn serve(calibration: Option<CalibrationSet>, dir: &Path) -> ServiceHandle {
    start(ServiceConfig {
        source: Source::Device(local()),
        client_addr: local(),
        calibration,
        compensation: CompensationMode::Enabled,
        thresholds: ThresholdConfig::default(),
        recording_dir: dir.to_path_buf(),
    })
    .unwrap()
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn connect(addr: SocketAddr) -> Client {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Client {
            writer: s.try_clone().unwrap(),
            reader: BufReader::new(s),
        }
    }

    fn next(&mut self) -> Option<Outbound> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(Outbound::parse(&line).unwrap_or_else(|e| panic!("{e}: {line}"))),
        }
    }

    fn send(&mut self, cmd: &Command) {
        self.writer.write_all(cmd.to_line().as_bytes()).unwrap();
    }

    /// Skips frames until a non-frame message arrives.
    fn reply(&mut self) -> Outbound {
        loop {
            match self.next().expect("connection closed") {
                Outbound::Frame { .. } => continue,
                other => return other,
            }
        }
    }

    fn frames(&mut self, n: usize) -> Vec<(u16, u32, Grid<f64>, Grid<bool>)> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            match self.next().expect("connection closed") {
                Outbound::Frame {
                    mode: FrameMode::Calibrated,
                    seq,
                    timestamp_ms,
                    forces: Some(f),
                    over_threshold: Some(o),
                    ..
                } => out.push((seq, timestamp_ms, f, o)),
                Outbound::Frame { .. } => panic!("unexpected raw frame"),
                _ => {}
            }
        }
        out
    }
}

fn wait_for_clients(h: &ServiceHandle, n: usize) {
    let t0 = Instant::now();
    while h.clients() < n {
        assert!(t0.elapsed() < Duration::from_secs(5), "clients never attached");
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn stream(h: &ServiceHandle, scenario: &Scenario, duration_ms: u32) -> u64 {
    let dev = TcpStream::connect(h.device_addr().unwrap()).unwrap();
    let mut emu = Emulator::new(EmulatorConfig::noiseless()).unwrap();
    let mut w = WireWriter::new(dev);
    emu.run_stream(scenario, duration_ms, &mut w, Pacing::Simulated).unwrap()
}

fn presses() -> Scenario {
    let ev = |f, s, start, peak| PressEvent {
        module: ModuleId::new(f, s).unwrap(),
        start_ms: start,
        attack_ms: 200,
        hold_ms: 300,
        release_ms: 250,
        peak_force: peak,
    };
    Scenario::new(vec![ev(2, 3, 100, 15.0), ev(7, 5, 600, 9.0), ev(11, 1, 1200, 4.5)]).unwrap()
}

#[test]
fn end_to_end_forces_match_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cal = noiseless_calibration();
    let h = serve(Some(cal.clone()), dir.path());
    let mut client = Client::connect(h.client_addr());
    assert!(matches!(client.next(), Some(Outbound::Hello { calibrated: true, .. })));
    wait_for_clients(&h, 1);

    let scenario = presses();
    let sent = stream(&h, &scenario, 2500);
    assert_eq!(sent, 51);
    let frames = client.frames(51);
    for (i, (seq, ts, forces, flags)) in frames.iter().enumerate() {
        assert_eq!(*seq as usize, i);
        assert_eq!(*ts as usize, i * 50);
        let truth = scenario.force_at(*ts as f64);
        for m in ModuleId::all() {
            let tol = cal.get(m).unwrap().slope + 0.005;
            let got = forces[m.row()][m.col()];
            let want = truth[m.row()][m.col()];
            assert!((got - want).abs() <= tol, "{m} at {ts} ms: {got} vs {want}");
            assert_eq!(flags[m.row()][m.col()], got > 8.0);
        }
    }
    let summary = h.shutdown();
    assert_eq!(summary.stats.frames_received, 51);
    assert_eq!(
        summary.stats.frames_received,
        summary.stats.frames_published + summary.stats.frames_dropped
    );
    assert_eq!(summary.stats.gaps, 0);
}

#[test]
fn corrupt_frames_are_dropped_and_gaps_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(Some(noiseless_calibration()), dir.path());
    let mut client = Client::connect(h.client_addr());
    client.next();
    wait_for_clients(&h, 1);

    let mut idle = Emulator::new(EmulatorConfig::noiseless()).unwrap();
    let mut bytes = Vec::new();
    for i in 0..10u32 {
        let mut b = encode_frame(&idle.scan_frame(&Scenario::empty(), i * 50).frame).unwrap();
        if i == 4 {
            b[100] ^= 0x04;
        }
        bytes.extend_from_slice(&b);
    }
    let mut dev = TcpStream::connect(h.device_addr().unwrap()).unwrap();
    dev.write_all(&bytes).unwrap();
    let seqs: Vec<u16> = client.frames(9).iter().map(|f| f.0).collect();
    assert_eq!(seqs, vec![0, 1, 2, 3, 5, 6, 7, 8, 9]);

    client.send(&Command::Status);
    match client.reply() {
        Outbound::Status {
            frames_received,
            frames_published,
            frames_dropped,
            gaps,
            ..
        } => {
            assert_eq!((frames_received, frames_published, frames_dropped, gaps), (10, 9, 1, 1));
        }
        other => panic!("{other:?}"),
    }
    h.shutdown();
}

#[test]
fn commands_threshold_recording_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(Some(noiseless_calibration()), dir.path());
    let mut client = Client::connect(h.client_addr());
    client.next();
    wait_for_clients(&h, 1);

    client.send(&Command::SetThreshold { newtons: 6.0, module: None });
    assert!(matches!(client.reply(), Outbound::Ack { ok: true, threshold: Some(t), .. } if t == 6.0));
    client.send(&Command::SetThreshold { newtons: 30.0, module: None });
    assert!(matches!(client.reply(), Outbound::Ack { ok: false, error: Some(_), .. }));
    client.send(&Command::SetThreshold { newtons: 3.0, module: Some([13, 1]) });
    assert!(matches!(client.reply(), Outbound::Ack { ok: false, .. }));
    client.writer.write_all(b"not json\n").unwrap();
    assert!(matches!(client.reply(), Outbound::Ack { ok: false, .. }));

    client.send(&Command::StartRecording);
    let path = match client.reply() {
        Outbound::Ack { ok: true, recording: Some(true), path: Some(p), .. } => p,
        other => panic!("{other:?}"),
    };
    assert!(Path::new(&path).starts_with(dir.path()));

    let scenario = presses();
    stream(&h, &scenario, 199 * 50);
    let live = client.frames(200);
    for (_, _, forces, flags) in &live {
        for r in 0..12 {
            for c in 0..6 {
                assert_eq!(flags[r][c], forces[r][c] > 6.0);
            }
        }
    }
    client.send(&Command::StopRecording);
    assert!(matches!(client.reply(), Outbound::Ack { ok: true, recording: Some(false), .. }));
    let summary = h.shutdown();
    assert_eq!(summary.session.frames_written, 200);

    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 200);

    // Replay the recording to a fresh client.
    let file = load_replay(Path::new(&path)).unwrap();
    assert_eq!(file.skipped, 0);
    let started = Instant::now();
    let replay = start(ServiceConfig {
        source: Source::Replay {
            items: file.items,
            speed: 50.0,
            wait_for_clients: 1,
        },
        client_addr: local(),
        calibration: None,
        compensation: CompensationMode::Enabled,
        thresholds: ThresholdConfig::new(6.0).unwrap(),
        recording_dir: dir.path().to_path_buf(),
    })
    .unwrap();
    let mut viewer = Client::connect(replay.client_addr());
    let replayed = viewer.frames(200);
    replay.wait();
    // 9.95 s of recording at 50x
    assert!(started.elapsed() >= Duration::from_millis(180));
    for (a, b) in live.iter().zip(&replayed) {
        assert_eq!(a.1, b.1);
        for r in 0..12 {
            for c in 0..6 {
                assert!((a.2[r][c] - b.2[r][c]).abs() <= 0.005 + 1e-12);
            }
        }
    }
    assert!(viewer.next().is_none(), "replay should close the stream when done");
}

#[test]
fn stalled_client_is_dropped_without_stalling_others() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(Some(noiseless_calibration()), dir.path());
    // Never reads; once the kernel buffers fill its queue overflows.
    let _stalled = TcpStream::connect(h.client_addr()).unwrap();
    let mut live = Client::connect(h.client_addr());
    wait_for_clients(&h, 2);

    let reader = std::thread::spawn(move || {
        let mut seqs = Vec::new();
        while let Some(msg) = live.next() {
            if let Outbound::Frame { seq, .. } = msg {
                seqs.push(seq);
            }
        }
        seqs
    });
    let mut dev = TcpStream::connect(h.device_addr().unwrap()).unwrap();
    let mut emu = Emulator::new(EmulatorConfig::noiseless()).unwrap();
    let mut sent = 0u32;
    let mut after_drop = 0;
    while after_drop < 100 {
        assert!(sent < 60_000, "stalled client never dropped");
        let mut batch = Vec::new();
        for _ in 0..10 {
            let f = emu.scan_frame(&Scenario::empty(), sent * 50).frame;
            batch.extend_from_slice(&encode_frame(&f).unwrap());
            sent += 1;
        }
        dev.write_all(&batch).unwrap();
        std::thread::sleep(Duration::from_millis(4));
        if h.clients() == 1 {
            after_drop += 10;
        }
    }
    let t0 = Instant::now();
    while h.stats().frames_published < sent as u64 {
        assert!(t0.elapsed() < Duration::from_secs(10));
        std::thread::sleep(Duration::from_millis(10));
    }
    let summary = h.shutdown();
    assert_eq!(summary.slow_clients_dropped, 1);
    let seqs = reader.join().unwrap();
    assert_eq!(seqs.len(), sent as usize, "live client lost frames");
    assert!(seqs.iter().enumerate().all(|(i, &s)| s == i as u16));
}

#[test]
fn raw_diagnostic_mode_without_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(ServiceConfig {
        source: Source::Device(local()),
        client_addr: local(),
        calibration: None,
        compensation: CompensationMode::PassThrough,
        thresholds: ThresholdConfig::default(),
        recording_dir: dir.path().to_path_buf(),
    })
    .unwrap();
    let mut client = Client::connect(h.client_addr());
    assert!(matches!(client.next(), Some(Outbound::Hello { calibrated: false, .. })));
    wait_for_clients(&h, 1);
    let mut f = RawFrame::zeroed(7, 350);
    f.counts[3][4] = 2048;
    let mut dev = TcpStream::connect(h.device_addr().unwrap()).unwrap();
    dev.write_all(&encode_frame(&f).unwrap()).unwrap();
    match client.next().unwrap() {
        Outbound::Frame { mode: FrameMode::Raw, seq: 7, counts: Some(c), compensated: Some(false), .. } => {
            assert_eq!(c[3][4], 2048);
        }
        other => panic!("{other:?}"),
    }

    // Loading a calibration switches to calibrated frames.
    let cal_path = dir.path().join("fleet.cal");
    std::fs::write(&cal_path, noiseless_calibration().to_text()).unwrap();
    client.send(&Command::LoadCalibration { path: cal_path.display().to_string() });
    assert!(matches!(client.reply(), Outbound::Ack { ok: true, .. }));
    client.send(&Command::LoadCalibration { path: "/nonexistent.cal".into() });
    assert!(matches!(client.reply(), Outbound::Ack { ok: false, .. }));
    dev.write_all(&encode_frame(&RawFrame::zeroed(8, 400)).unwrap()).unwrap();
    assert_eq!(client.frames(1)[0].0, 8);
    h.shutdown();
}

#[test]
fn port_in_use_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let a = serve(None, dir.path());
    let err = start(ServiceConfig {
        source: Source::Device(a.device_addr().unwrap()),
        client_addr: local(),
        calibration: None,
        compensation: CompensationMode::Enabled,
        thresholds: ThresholdConfig::default(),
        recording_dir: dir.path().to_path_buf(),
    })
    .unwrap_err();
    assert!(err.is_addr_in_use());
    a.shutdown();
}
