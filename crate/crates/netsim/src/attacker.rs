//! Spoofed-source flood generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use synproxy_core::packet::{FlowKey, Segment, TcpFlags, TcpOptions};

use crate::config::{secs_to_us, Arrival, AttackerConfig, Prefix};
use crate::event::Micros;
use crate::server::{SERVER_IP, SERVER_PORT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Syn,
    Ack,
    Rst,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Syn, AttackKind::Ack, AttackKind::Rst];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackerStats {
    pub syn_sent: u64,
    pub ack_sent: u64,
    pub rst_sent: u64,
}

pub struct Attacker {
    rates: [f64; 3],
    arrival: Arrival,
    spoof: Prefix,
    start: Micros,
    stop: Micros,
    /// Time of the previous Poisson arrival per kind.
    last: [Micros; 3],
    rng: ChaCha8Rng,
    pub stats: AttackerStats,
}

/// Exponential gap in microseconds with mean `1e6 / rate`.
fn exp_gap(rng: &mut impl Rng, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() * 1e6 / rate
}

impl Attacker {
    pub fn new(cfg: &AttackerConfig, spoof: Prefix, end: Micros, rng: ChaCha8Rng) -> Self {
        let start = secs_to_us(cfg.start_s);
        Attacker {
            rates: [cfg.syn_rate, cfg.ack_rate, cfg.rst_rate],
            arrival: cfg.arrival,
            spoof,
            start,
            stop: cfg.stop_s.map(secs_to_us).unwrap_or(end).min(end),
            last: [start; 3],
            rng,
            stats: AttackerStats::default(),
        }
    }

    /// Time of the `n`th packet of `kind`, or `None` past the end of the
    /// attack. Poisson arrivals must be asked for in order.
    pub fn arrival(&mut self, kind: AttackKind, n: u64) -> Option<Micros> {
        let rate = self.rates[kind.index()];
        if rate <= 0.0 {
            return None;
        }
        let t = match self.arrival {
            Arrival::Constant => self.start + (n as f64 * 1e6 / rate).round() as Micros,
            Arrival::Poisson => {
                let gap = exp_gap(&mut self.rng, rate).round() as Micros;
                let t = self.last[kind.index()] + gap;
                self.last[kind.index()] = t;
                t
            }
        };
        (t < self.stop).then_some(t)
    }

    pub fn packet(&mut self, kind: AttackKind) -> Segment {
        let src = self.spoof.host(self.rng.gen());
        let sport = self.rng.gen_range(1024..=u16::MAX);
        let key = FlowKey::new(src, sport, SERVER_IP, SERVER_PORT);
        let seq = self.rng.gen();
        match kind {
            AttackKind::Syn => {
                self.stats.syn_sent += 1;
                Segment::new(key, TcpFlags::SYN, seq, 0)
                    .with_window(64_240)
                    .with_options(TcpOptions::with_mss(1460))
            }
            AttackKind::Ack => {
                self.stats.ack_sent += 1;
                Segment::new(key, TcpFlags::ACK, seq, self.rng.gen()).with_window(64_240)
            }
            AttackKind::Rst => {
                self.stats.rst_sent += 1;
                Segment::new(key, TcpFlags::RST, seq, 0)
            }
        }
    }
}
