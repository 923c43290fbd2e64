use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fretsense");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn fretsense")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn kv(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .to_string()
}

fn calibrate_noiseless(dir: &Path) -> PathBuf {
    let cal = dir.join("cal.txt");
    let o = run(&["calibrate", "--all", "--noiseless", "--out", p(&cal)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    cal
}

#[test]
fn emulate_frame_arithmetic_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    assert!(run(&["emulate", "--duration", "1000", "--out", p(&a)]).status.success());
    assert_eq!(std::fs::metadata(&a).unwrap().len(), 21 * 179);

    let scen = dir.path().join("s.txt");
    std::fs::write(&scen, "# fret string start attack hold release peak\n2 3 100 100 200 100 12.5\n").unwrap();
    for out in [&a, &b] {
        let o = run(&["emulate", "--seed", "7", "--scenario", p(&scen), "--duration", "2000", "--out", p(out)]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn emulate_rejects_bad_inputs_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.bin");
    let o = run(&["emulate", "--scenario", "/no/such/file", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let scen = dir.path().join("bad.txt");
    std::fs::write(&scen, "1 1 0 10 10 10 5\n1 7 0 10 10 10 5\n").unwrap();
    let o = run(&["emulate", "--scenario", p(&scen), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert!(!out.exists());
}

#[test]
fn calibrate_single_module_and_dead_sensor() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.txt");
    let o = run(&["calibrate", "--module", "3", "2", "--out", p(&one)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&one).unwrap();
    let curves: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
        .collect();
    assert_eq!(curves.len(), 1);
    assert!(curves[0].starts_with("3 2 "));

    let cfg = dir.path().join("dead.cfg");
    std::fs::write(&cfg, "gain_override = 3 2 0\n").unwrap();
    let all = dir.path().join("all.txt");
    let o = run(&["calibrate", "--all", "--config", p(&cfg), "--out", p(&all)]);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert_eq!(kv(&out, "calibrated"), "71");
    assert!(out.lines().any(|l| l.starts_with("failure 3 2 ")));
    assert!(!std::fs::read_to_string(&all).unwrap().lines().any(|l| l.starts_with("3 2 ")));
}

#[test]
fn validate_noiseless_is_perfect_and_one_trial_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cal = calibrate_noiseless(dir.path());
    let o = run(&["validate", "--noiseless", "--calset", p(&cal), "--out-dir", p(dir.path())]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(kv(&out, "fraction_rmse_under_0p4"), "1.000000");
    assert_eq!(kv(&out, "fraction_worst_under_5pct"), "1.000000");
    assert_eq!(kv(&out, "low_confidence"), "false");
    for f in ["validation.txt", "fleet_summary.txt", "rmse_histogram.csv", "worst_histogram.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let o = run(&["validate", "--noiseless", "--calset", p(&cal), "--trials", "1", "--out-dir", p(dir.path())]);
    assert!(o.status.success());
    assert_eq!(kv(&stdout(&o), "low_confidence"), "true");

    let o = run(&["validate", "--calset", "/missing.cal", "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

/// Counts per `[lo, hi)` bin by scanning every bin, with values at or
/// past the top edge left out.
fn brute_force_bins(values: &[f64], step: f64, n: usize) -> Vec<u64> {
    (0..n)
        .map(|i| {
            let lo = i as f64 * step;
            let hi = (i + 1) as f64 * step;
            values.iter().filter(|&&v| v >= lo - 1e-12 && v < hi - 1e-12).count() as u64
        })
        .collect()
}

#[test]
fn report_matches_brute_force_binning() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("fretsense-validation 1\n");
    let mut rmse = Vec::new();
    let mut worst = Vec::new();
    for i in 0..72u32 {
        let r = (i * 37 % 100) as f64 / 100.0 * 0.97;
        let w = (i * 53 % 100) as f64 / 100.0 * 9.9;
        rmse.push(r);
        worst.push(w);
        text.push_str(&format!("{} {} {r} {w} 50\n", i / 6 + 1, i % 6 + 1));
    }
    let results = dir.path().join("v.txt");
    std::fs::write(&results, text).unwrap();
    let o = run(&["report", "--results", p(&results), "--out-dir", p(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let counts = |name: &str| -> Vec<u64> {
        std::fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .skip(1)
            .filter(|l| !l.contains("inf"))
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect()
    };
    assert_eq!(counts("rmse_histogram.csv"), brute_force_bins(&rmse, 0.05, 20));
    assert_eq!(counts("worst_histogram.csv"), brute_force_bins(&worst, 0.5, 20));

    let uniform = dir.path().join("u.txt");
    let mut t = String::from("fretsense-validation 1\n");
    for i in 0..72 {
        t.push_str(&format!("{} {} 0.1 1.0 50\n", i / 6 + 1, i % 6 + 1));
    }
    std::fs::write(&uniform, t).unwrap();
    assert!(run(&["report", "--results", p(&uniform), "--out-dir", p(dir.path())]).status.success());
    let rm = counts("rmse_histogram.csv");
    assert_eq!(rm.iter().sum::<u64>(), 72);
    assert_eq!(rm[2], 72);

    let empty = dir.path().join("e.txt");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(run(&["report", "--results", p(&empty), "--out-dir", p(dir.path())]).status.code(), Some(1));
    std::fs::write(&empty, "fretsense-validation 1\n1 1 abc 1 1\n").unwrap();
    assert_eq!(run(&["report", "--results", p(&empty), "--out-dir", p(dir.path())]).status.code(), Some(1));
}

struct Server {
    child: Child,
    device: SocketAddr,
    client: SocketAddr,
    stdout: BufReader<std::process::ChildStdout>,
}

impl Server {
    fn start(cal: &Path, recordings: &Path) -> Server {
        let mut child = Command::new(BIN)
            .args(["serve", "--device-port", "0", "--client-port", "0"])
            .args(["--calset", p(cal), "--recording-dir", p(recordings)])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut stdout = BufReader::new(child.stdout.take().unwrap());
        let mut addr = |key: &str| {
            let mut line = String::new();
            stdout.read_line(&mut line).unwrap();
            line.trim().strip_prefix(&format!("{key} = ")).unwrap().parse().unwrap()
        };
        let device = addr("device");
        let client = addr("client");
        Server {
            child,
            device,
            client,
            stdout,
        }
    }

    fn interrupt(mut self) -> String {
        let pid = self.child.id().to_string();
        assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
        let status = self.child.wait().unwrap();
        assert!(status.success(), "serve exited with {status}");
        let mut rest = String::new();
        for line in self.stdout.lines() {
            rest.push_str(&line.unwrap());
            rest.push('\n');
        }
        rest
    }
}

fn json_lines(stream: &TcpStream) -> impl Iterator<Item = Value> {
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    BufReader::new(stream.try_clone().unwrap())
        .lines()
        .map_while(Result::ok)
        .map(|l| serde_json::from_str(&l).unwrap())
}

#[test]
fn serve_streams_records_and_shuts_down_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cal = calibrate_noiseless(dir.path());
    let server = Server::start(&cal, dir.path());

    let mut client = TcpStream::connect(server.client).unwrap();
    let mut msgs = json_lines(&client);
    assert_eq!(msgs.next().unwrap()["type"], "hello");
    client.write_all(b"{\"cmd\":\"start_recording\"}\n").unwrap();
    let ack = msgs.next().unwrap();
    assert_eq!(ack["ok"], true);
    let path = PathBuf::from(ack["path"].as_str().unwrap());

    let device = server.device.to_string();
    let mut emu = Command::new(BIN)
        .args(["emulate", "--noiseless", "--duration", "3000", "--realtime", "--connect", &device])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let t0 = Instant::now();
    let mut in_first_second = 0;
    let mut first: Option<Instant> = None;
    let mut seqs = Vec::new();
    for m in msgs.by_ref() {
        if m["type"] == "frame" {
            let now = Instant::now();
            let start = *first.get_or_insert(now);
            if now - start <= Duration::from_millis(1000) {
                in_first_second += 1;
            }
            seqs.push(m["seq"].as_u64().unwrap());
            if seqs.len() == 30 {
                break;
            }
        }
        assert!(t0.elapsed() < Duration::from_secs(10));
    }
    assert!(in_first_second >= 19, "only {in_first_second} frames in the first second");
    assert_eq!(seqs, (0..30).collect::<Vec<u64>>());

    // Interrupt while still recording.
    let summary = server.interrupt();
    let _ = emu.wait();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.ends_with('\n'));
    assert!(text.lines().count() >= 30);
    assert!(text.lines().all(|l| l.split_whitespace().count() == 73));
    assert_eq!(kv(&summary, "frames_dropped"), "0");
    drop(client);
}

#[test]
fn serve_reports_bad_calset_and_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["serve", "--device-port", "0", "--client-port", "0", "--calset", "/no/cal.txt"]);
    assert_eq!(o.status.code(), Some(1));

    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = run(&["serve", "--device-port", &port, "--client-port", "0", "--recording-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

fn recording(dir: &Path, frames: u32) -> PathBuf {
    let path = dir.join("session.txt");
    let mut text = String::new();
    for i in 0..frames {
        text.push_str(&(i * 50).to_string());
        for m in 0..72u32 {
            text.push_str(&format!(" {:.2}", ((i * 7 + m * 13) % 2500) as f64 / 100.0));
        }
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn replay_round_trip_and_pacing() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recording(dir.path(), 21);
    let started = Instant::now();
    let o = run(&["replay", p(&rec), "--speed", "2"]);
    let took = started.elapsed().as_secs_f64();
    assert!(o.status.success());
    // one second of recording at double speed
    assert!((0.45..0.65).contains(&took), "took {took}");

    let original = std::fs::read_to_string(&rec).unwrap();
    let out = stdout(&o);
    let frames: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(frames.len(), 21);
    for (line, frame) in original.lines().zip(&frames) {
        let fields: Vec<f64> = line.split_whitespace().map(|f| f.parse().unwrap()).collect();
        assert_eq!(frame["timestamp_ms"].as_f64().unwrap(), fields[0]);
        let forces: Vec<f64> = frame["forces"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|row| row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()))
            .collect();
        for (a, b) in forces.iter().zip(&fields[1..]) {
            assert!((a - b).abs() <= 0.005 + 1e-12);
        }
        let flags: Vec<bool> = frame["over_threshold"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|row| row.as_array().unwrap().iter().map(|v| v.as_bool().unwrap()))
            .collect();
        for (f, flag) in forces.iter().zip(flags) {
            assert_eq!(flag, *f > 8.0);
        }
    }
}

#[test]
fn replay_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["replay", p(&empty)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());

    let junk = dir.path().join("junk.txt");
    std::fs::write(&junk, "hello\n").unwrap();
    assert_eq!(run(&["replay", p(&junk)]).status.code(), Some(1));

    // Binary captures go through the full pipeline.
    let cal = calibrate_noiseless(dir.path());
    let bin = dir.path().join("f.bin");
    assert!(run(&["emulate", "--noiseless", "--duration", "500", "--out", p(&bin)]).status.success());
    let o = run(&["replay", p(&bin), "--calset", p(&cal), "--speed", "100"]);
    assert!(o.status.success());
    let frames: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(frames.len(), 11);
    assert!(frames.iter().all(|f| f["mode"] == "calibrated"));
}

#[test]
fn replay_to_clients() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recording(dir.path(), 40);
    let mut child = Command::new(BIN)
        .args(["replay", p(&rec), "--speed", "20", "--client-port", "0", "--recording-dir", p(dir.path())])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    let addr: SocketAddr = line.trim().strip_prefix("client = ").unwrap().parse().unwrap();
    let client = TcpStream::connect(addr).unwrap();
    let frames: Vec<Value> = json_lines(&client).filter(|m| m["type"] == "frame").collect();
    assert_eq!(frames.len(), 40);
    assert!(child.wait().unwrap().success());
}
