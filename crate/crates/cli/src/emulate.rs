use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpStream;
use std::path::PathBuf;

use clap::Args;
use fretsense_core::emulator::{Emulator, Pacing, Scenario};
use fretsense_core::wire::WireWriter;
use log::info;

use crate::{CmdResult, EmulatorArgs, Failure};

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("sink").required(true).args(["out", "connect"]))]
pub struct EmulateArgs {
    #[command(flatten)]
    emulator: EmulatorArgs,
    /// Press scenario file; without one the instrument sits idle.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Stream length in milliseconds; frames go out at 0, 50, ... duration.
    #[arg(long, default_value_t = 1000)]
    duration: u32,
    /// Write frames to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Send frames to a service's device port, e.g. 127.0.0.1:7070.
    #[arg(long)]
    connect: Option<String>,
    /// Pace frames on the wall clock at 20 Hz instead of as fast as possible.
    #[arg(long)]
    realtime: bool,
    /// Wall-clock speed-up when pacing.
    #[arg(long, default_value_t = 1.0, requires = "realtime")]
    speed: f64,
}

pub fn run(args: EmulateArgs) -> CmdResult {
    let cfg = args.emulator.load()?;
    let scenario = match &args.scenario {
        Some(p) => Scenario::load(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
        None => Scenario::empty(),
    };
    if !(args.speed.is_finite() && args.speed > 0.0) {
        return Err(Failure::input(format!("--speed must be positive, got {}", args.speed)));
    }
    let mut emu = Emulator::new(cfg).map_err(Failure::input)?;
    let pacing = if args.realtime {
        Pacing::RealTime { speed: args.speed }
    } else {
        Pacing::Simulated
    };

    let sent = if let Some(path) = &args.out {
        if args.realtime {
            let file = File::create(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            let mut w = WireWriter::new(file);
            emu.run_stream(&scenario, args.duration, &mut w, pacing)
                .map_err(Failure::runtime)?
        } else {
            // Render in memory first so a failure leaves no partial file.
            let mut w = WireWriter::new(Vec::new());
            let n = emu
                .run_stream(&scenario, args.duration, &mut w, pacing)
                .map_err(Failure::runtime)?;
            let file = File::create(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            let mut out = BufWriter::new(file);
            out.write_all(&w.into_inner())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
            n
        }
    } else {
        let addr = args.connect.as_deref().expect("clap enforces a sink");
        let stream = TcpStream::connect(addr).map_err(|e| Failure::runtime(format!("{addr}: {e}")))?;
        stream.set_nodelay(true).map_err(Failure::runtime)?;
        let mut w = WireWriter::new(stream);
        emu.run_stream(&scenario, args.duration, &mut w, pacing)
            .map_err(Failure::runtime)?
    };
    info!("sent {sent} frames");
    println!("frames = {sent}");
    Ok(())
}
