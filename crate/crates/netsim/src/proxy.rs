//! The proxy node: the mitigation engine behind an optional processing
//! budget. Without an engine it forwards everything unchanged.

use std::time::Duration;

use synproxy_core::engine::{ActionList, Engine, Interface};
use synproxy_core::packet::{Segment, TcpFlags};

use crate::config::Prefix;
use crate::event::Micros;

/// Integer token bucket in millionths of a token, refilled continuously.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate: u64,
    depth: u64,
    level: u64,
    last: Micros,
}

const UNIT: u64 = 1_000_000;

impl TokenBucket {
    /// `rate` tokens per second, holding at most `depth`. Starts full.
    pub fn new(rate: u64, depth: u64) -> Self {
        TokenBucket {
            rate,
            depth: depth * UNIT,
            level: depth * UNIT,
            last: 0,
        }
    }

    pub fn take(&mut self, now: Micros) -> bool {
        let elapsed = now.saturating_sub(self.last);
        self.last = self.last.max(now);
        self.level = self
            .level
            .saturating_add(self.rate.saturating_mul(elapsed))
            .min(self.depth);
        if self.level >= UNIT {
            self.level -= UNIT;
            true
        } else {
            false
        }
    }
}

/// One segment through the proxy and what came of it.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub at: Micros,
    pub ingress: Interface,
    pub segment: Segment,
    pub actions: ActionList,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProxyStats {
    pub segments_in: u64,
    /// Segments turned away because the processing budget was spent.
    pub capacity_drops: u64,
    pub attack_capacity_drops: u64,
    /// Spoofed SYNs the engine actually processed.
    pub attack_syns_processed: u64,
}

pub struct Proxy {
    engine: Option<Engine>,
    bucket: Option<TokenBucket>,
    spoof: Prefix,
    trace: Option<Vec<TraceRecord>>,
    /// Earliest engine timer already in the event queue.
    pub(crate) timer_scheduled: Option<Micros>,
    pub stats: ProxyStats,
}

pub(crate) fn duration(t: Micros) -> Duration {
    Duration::from_micros(t)
}

impl Proxy {
    pub fn new(engine: Option<Engine>, ops_per_second: u64, spoof: Prefix) -> Self {
        let bucket = match &engine {
            Some(e) if ops_per_second > 0 => Some(TokenBucket::new(
                ops_per_second,
                e.config().batch_size as u64,
            )),
            _ => None,
        };
        Proxy {
            engine,
            bucket,
            spoof,
            trace: None,
            timer_scheduled: None,
            stats: ProxyStats::default(),
        }
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.engine.as_ref()
    }

    pub fn record_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn process(&mut self, s: Segment, ingress: Interface, now: Micros) -> ActionList {
        self.stats.segments_in += 1;
        let attack = self.spoof.contains(s.key.src_ip);
        let Some(engine) = &mut self.engine else {
            return ActionList::emit(s, ingress.opposite());
        };
        if let Some(b) = &mut self.bucket {
            if !b.take(now) {
                self.stats.capacity_drops += 1;
                if attack {
                    self.stats.attack_capacity_drops += 1;
                }
                return ActionList::new();
            }
        }
        if attack && s.has(TcpFlags::SYN) && !s.has(TcpFlags::ACK) {
            self.stats.attack_syns_processed += 1;
        }

        if let Some(t) = &mut self.trace {
            let out = engine.process(s.clone(), ingress, duration(now));
            t.push(TraceRecord {
                at: now,
                ingress,
                segment: s,
                actions: out.clone(),
            });
            out
        } else {
            engine.process(s, ingress, duration(now))
        }
    }

    pub fn next_deadline(&self) -> Option<Micros> {
        self.engine
            .as_ref()?
            .next_deadline()
            .map(|d| d.as_micros() as Micros)
    }

    pub fn on_timer(&mut self, now: Micros) -> ActionList {
        match &mut self.engine {
            Some(e) => e.on_timer(duration(now)),
            None => ActionList::new(),
        }
    }
}
