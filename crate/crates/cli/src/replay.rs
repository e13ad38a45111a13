use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, ValueEnum};

use synproxy_core::cookie::CookieKey;
use synproxy_core::engine::{
    ActionList, DropReason, Engine, EngineConfig, Interface, L2Config, Strategy,
};
use synproxy_core::packet::{parse_segment, serialize_segment_mtu};
use synproxy_core::pcap::{read_pcap, write_pcap, PcapError, PcapRecord};

use crate::Failure;

pub const DROPS_SCHEMA: &str = "synproxy-drops-v1";

#[derive(Clone, Copy, ValueEnum)]
enum Clock {
    /// Each frame is processed at its capture time.
    PcapTimestamps,
    /// Every frame is processed at `--now`.
    Fixed,
}

#[derive(Args)]
pub struct ReplayArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    /// Cookie key, 32 hex digits.
    #[arg(long)]
    key: String,
    #[arg(long, value_enum, default_value_t = Clock::PcapTimestamps)]
    clock: Clock,
    /// Seconds; the clock value with `--clock fixed`.
    #[arg(long, default_value_t = 0.0)]
    now: f64,
}

pub(crate) fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

/// Frames addressed to the proxy's server-side port, or sent by the server,
/// came in from the server. Everything else is client side.
fn ingress_of(frame: &[u8], l2: &L2Config) -> Interface {
    match parse_segment(frame) {
        Ok(s) if s.eth_dst == l2.proxy_server_port || s.eth_src == l2.server_neighbor => {
            Interface::Server
        }
        _ => Interface::Client,
    }
}

fn emit(list: ActionList, at: Duration, out: &mut Vec<PcapRecord>) {
    for (seg, _) in list.emissions() {
        // Engine output always fits a jumbo frame; the limit only guards
        // against absurd option lengths.
        if let Ok(frame) = serialize_segment_mtu(seg, 65_535) {
            out.push(PcapRecord::new(at, frame));
        }
    }
}

pub fn run(a: ReplayArgs) -> Result<u8, Failure> {
    let key = CookieKey::from_hex(&a.key).map_err(|e| Failure::invalid(format!("--key: {e}")))?;
    if !a.now.is_finite() || a.now < 0.0 {
        return Err(Failure::invalid(
            "--now must be a non-negative number of seconds",
        ));
    }
    let records = read_pcap(&a.input).map_err(|e| match e {
        PcapError::Io(e) => Failure::io(format!("{}: {e}", a.input.display())),
        other => Failure::invalid(format!("{}: {other}", a.input.display())),
    })?;

    let cfg = EngineConfig {
        strategy: a.strategy,
        shard_count: 1,
        ..EngineConfig::default()
    };
    let l2 = cfg.l2;
    let mut engine = Engine::new(cfg, key).map_err(Failure::invalid)?;
    let fixed = Duration::from_secs_f64(a.now);

    let mut out = Vec::new();
    let mut last = Duration::ZERO;
    for r in &records {
        let now = match a.clock {
            Clock::PcapTimestamps => r.timestamp().max(last),
            Clock::Fixed => fixed,
        };
        last = now;
        while let Some(t) = engine.next_deadline().filter(|&t| t <= now) {
            emit(engine.on_timer(t), t, &mut out);
        }
        let ingress = ingress_of(&r.data, &l2);
        emit(engine.process_frame(&r.data, ingress, now), now, &mut out);
    }

    write_pcap(&a.output, &out).map_err(|e| Failure::io(format!("{}: {e}", a.output.display())))?;

    let mut sidecar = a.output.clone().into_os_string();
    sidecar.push(".drops.csv");
    let sidecar = PathBuf::from(sidecar);
    let stats = engine.stats();
    let write = || -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&sidecar)?));
        w.write_record(["schema", "reason", "count"])?;
        for r in DropReason::ALL {
            w.write_record([DROPS_SCHEMA, r.as_str(), &stats.drop_count(r).to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Failure::io(format!("{}: {e}", sidecar.display())))?;
    println!(
        "{} frames in, {} frames out, {} dropped",
        records.len(),
        out.len(),
        stats.total_drops()
    );
    Ok(0)
}
