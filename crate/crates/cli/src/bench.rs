use std::io::Write;
use std::net::Ipv4Addr;
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synproxy_core::cookie::CookieKey;
use synproxy_core::engine::{ActionList, Engine, EngineConfig, Interface, Strategy};
use synproxy_core::packet::{FlowKey, Segment, TcpFlags, TcpOptions};

use crate::replay::parse_strategy;
use crate::Failure;

pub const BENCH_SCHEMA: &str = "synproxy-bench-v1";

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mix {
    /// Spoofed SYNs only.
    SynOnly,
    /// Spoofed SYNs interleaved one-for-one with segments of complete
    /// legitimate handshakes.
    HandshakeMix,
}

impl Mix {
    fn as_str(self) -> &'static str {
        match self {
            Mix::SynOnly => "syn-only",
            Mix::HandshakeMix => "handshake-mix",
        }
    }
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, default_value_t = 1_000_000)]
    packets: usize,
    /// Batch sizes to sweep.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    batch: Vec<usize>,
    /// Shard counts to sweep; each shard runs on its own thread.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    shards: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Mix::SynOnly)]
    mix: Mix,
    /// Runs per configuration; the fastest is reported.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

const SERVER: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);
const BASE: Duration = Duration::from_secs(1_000);

fn engine(
    strategy: Strategy,
    batch: usize,
    shards: usize,
    key: CookieKey,
) -> Result<Engine, Failure> {
    let cfg = EngineConfig {
        strategy,
        batch_size: batch,
        shard_count: shards,
        ..EngineConfig::default()
    };
    Engine::new(cfg, key).map_err(Failure::invalid)
}

fn spoofed_syn(rng: &mut ChaCha8Rng) -> Segment {
    let src = Ipv4Addr::from(0xc612_0000 | (rng.gen::<u32>() & 0xffff));
    let key = FlowKey::new(src, rng.gen_range(1024..=u16::MAX), SERVER, 80);
    Segment::new(key, TcpFlags::SYN, rng.gen(), 0)
        .with_window(64_240)
        .with_options(TcpOptions::with_mss(1460))
}

/// Builds the input. Legitimate flows are played against a scratch engine
/// with the same key so that every ACK carries the right cookie and every
/// server reply matches what the proxy sent.
fn workload(
    strategy: Strategy,
    mix: Mix,
    packets: usize,
    key: CookieKey,
    seed: u64,
) -> Result<Vec<(Segment, Interface)>, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(packets);
    if mix == Mix::SynOnly {
        out.extend((0..packets).map(|_| (spoofed_syn(&mut rng), Interface::Client)));
        return Ok(out);
    }
    let mut scratch = engine(strategy, 64, 1, key)?;
    let mut legit: Vec<(Segment, Interface)> = Vec::new();
    let mut flow = 0u32;
    while out.len() < packets {
        if legit.is_empty() {
            legit = handshake(&mut scratch, flow, &mut rng);
            legit.reverse();
            flow += 1;
        }
        if out.len() % 2 == 0 {
            out.push(legit.pop().expect("refilled"));
        } else {
            out.push((spoofed_syn(&mut rng), Interface::Client));
        }
    }
    Ok(out)
}

/// One client connection through the proxy up to its first forwarded data
/// segment, answering whatever the proxy sends as client or server would.
fn handshake(e: &mut Engine, flow: u32, rng: &mut ChaCha8Rng) -> Vec<(Segment, Interface)> {
    let ip = Ipv4Addr::from(0x0a01_0000 | (flow % 60_000 + 1));
    let port = 10_000 + (flow / 60_000) as u16;
    let key = FlowKey::new(ip, port, SERVER, 80);
    let mut inputs = Vec::new();
    let mut queue = vec![(
        Segment::new(key, TcpFlags::SYN, rng.gen(), 0)
            .with_window(64_240)
            .with_options(TcpOptions::with_mss(1460)),
        Interface::Client,
    )];
    let mut sent_data = false;
    while let Some((s, ingress)) = queue.pop() {
        inputs.push((s.clone(), ingress));
        if inputs.len() > 12 {
            break;
        }
        let out: ActionList = e.process(s, ingress, BASE);
        for (o, iface) in out.emissions() {
            let synack = TcpFlags::SYN | TcpFlags::ACK;
            let reply = match iface {
                // To the client.
                Interface::Client if o.has(synack) && o.window > 0 && !sent_data => {
                    sent_data = true;
                    Segment::new(
                        key,
                        TcpFlags::ACK | TcpFlags::PSH,
                        o.ack,
                        o.seq.wrapping_add(1),
                    )
                    .with_window(64_240)
                    .with_payload(vec![0x47; 64])
                }
                Interface::Client if o.has(synack) => {
                    Segment::new(key, TcpFlags::ACK, o.ack, o.seq.wrapping_add(1))
                        .with_window(64_240)
                }
                // A reset decoy: try again.
                Interface::Client if o.has(TcpFlags::RST) => {
                    Segment::new(key, TcpFlags::SYN, rng.gen(), 0)
                        .with_window(64_240)
                        .with_options(TcpOptions::with_mss(1460))
                }
                // To the server: play the server's SYN/ACK.
                Interface::Server if o.has(TcpFlags::SYN) => {
                    Segment::new(key.reverse(), synack, rng.gen(), o.seq.wrapping_add(1))
                        .with_window(65_535)
                        .with_options(TcpOptions::with_mss(1460))
                }
                _ => continue,
            };
            let to = if iface == Interface::Client {
                Interface::Client
            } else {
                Interface::Server
            };
            queue.push((reply, to));
        }
    }
    inputs
}

struct Measurement {
    wall: Duration,
    per_shard: Vec<(usize, Duration)>,
    hashes: u64,
}

fn measure(
    strategy: Strategy,
    batch: usize,
    shards: usize,
    key: CookieKey,
    input: &[(Segment, Interface)],
) -> Result<Measurement, Failure> {
    let mut e = engine(strategy, batch, shards, key)?;
    let mut parts: Vec<Vec<(Segment, Interface)>> = vec![Vec::new(); shards];
    for (s, i) in input {
        parts[e.shard_of(s, *i)].push((s.clone(), *i));
    }
    let start = Instant::now();
    let per_shard = thread::scope(|scope| {
        let handles: Vec<_> = e
            .shards_mut()
            .iter_mut()
            .zip(parts)
            .map(|(shard, part)| {
                scope.spawn(move || {
                    let n = part.len();
                    let t = Instant::now();
                    let mut out = Vec::with_capacity(batch);
                    let mut it = part.into_iter().peekable();
                    while it.peek().is_some() {
                        out.clear();
                        shard.process_batch(it.by_ref().take(batch), BASE, &mut out);
                        std::hint::black_box(&out);
                    }
                    (n, t.elapsed())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench thread panicked"))
            .collect::<Vec<_>>()
    });
    let wall = start.elapsed();
    Ok(Measurement {
        wall,
        per_shard,
        hashes: e.stats().hash_invocations,
    })
}

fn rate(n: usize, d: Duration) -> f64 {
    n as f64 / d.as_secs_f64().max(1e-9)
}

pub fn run(a: BenchArgs) -> Result<u8, Failure> {
    if a.packets == 0 || a.repeat == 0 {
        return Err(Failure::invalid(
            "--packets and --repeat must be at least 1",
        ));
    }
    if a.batch.contains(&0) || a.shards.contains(&0) {
        return Err(Failure::invalid(
            "batch sizes and shard counts must be at least 1",
        ));
    }
    let key = CookieKey::from_seed(a.seed);
    let input = workload(a.strategy, a.mix, a.packets, key, a.seed)?;

    let stdout = std::io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    let io = |e: csv::Error| Failure::io(e);
    w.write_record([
        "schema",
        "strategy",
        "mix",
        "batch",
        "shards",
        "shard",
        "packets",
        "elapsed_s",
        "segments_per_s",
        "hash_invocations",
    ])
    .map_err(io)?;
    for &shards in &a.shards {
        for &batch in &a.batch {
            let mut best: Option<Measurement> = None;
            for _ in 0..a.repeat {
                let m = measure(a.strategy, batch, shards, key, &input)?;
                if best.as_ref().is_none_or(|b| m.wall < b.wall) {
                    best = Some(m);
                }
            }
            let m = best.expect("repeat >= 1");
            let fixed = [
                BENCH_SCHEMA.to_owned(),
                a.strategy.as_str().to_owned(),
                a.mix.as_str().to_owned(),
                batch.to_string(),
                shards.to_string(),
            ];
            let mut row = |shard: String, n: usize, d: Duration, hashes: String| {
                let mut r: Vec<String> = fixed.to_vec();
                r.extend([
                    shard,
                    n.to_string(),
                    format!("{:.6}", d.as_secs_f64()),
                    format!("{:.0}", rate(n, d)),
                    hashes,
                ]);
                w.write_record(&r)
            };
            row("all".into(), input.len(), m.wall, m.hashes.to_string()).map_err(io)?;
            for (i, (n, d)) in m.per_shard.iter().enumerate() {
                row(i.to_string(), *n, *d, String::new()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(Failure::io)?;
    std::io::stdout().flush().map_err(Failure::io)?;
    Ok(0)
}
