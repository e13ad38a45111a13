use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::time::Duration;

use crate::conn_state::SwapMaps;
use crate::cookie::CookieCodec;
use crate::packet::{FlowKey, Segment, TcpFlags, TcpOptions};
use crate::whitelist::Whitelist;

use super::action::{Action, ActionList, DropReason, Interface};
use super::config::{EngineConfig, Strategy};
use super::stats::EngineStats;
use super::Secrets;

/// The proxy's SYN toward the server, kept until the server answers.
#[derive(Debug, Clone)]
pub(crate) struct PendingHandshake {
    pub syn: Segment,
    /// Window the client advertised in its handshake ACK.
    pub client_window: u16,
    pub attempt: usize,
    pub deadline: Duration,
}

/// One independent engine instance with its own state.
#[derive(Debug)]
pub struct Shard {
    pub(crate) cfg: EngineConfig,
    pub(crate) codec: CookieCodec,
    pub(crate) auth_secret: u32,
    pub(crate) whitelist: Option<Whitelist>,
    pub(crate) conns: SwapMaps,
    pub(crate) pending: HashMap<FlowKey, PendingHandshake>,
    timers: BinaryHeap<Reverse<(Duration, FlowKey)>>,
    /// Unset until the shard first sees the clock.
    next_gc: Option<Duration>,
    pub(crate) stats: EngineStats,
}

impl Shard {
    pub(crate) fn new(cfg: EngineConfig, codec: CookieCodec, secrets: &Secrets) -> Self {
        let whitelist = cfg.strategy.is_auth().then(|| {
            Whitelist::new(
                cfg.whitelist_granularity,
                cfg.whitelist_mask_bits,
                secrets.whitelist_index,
            )
            .expect("mask bits validated")
        });
        let conns = SwapMaps::new(cfg.conn_capacity, cfg.conn_swap_period);
        Shard {
            cfg,
            codec,
            auth_secret: secrets.auth_full,
            whitelist,
            conns,
            pending: HashMap::new(),
            timers: BinaryHeap::new(),
            next_gc: None,
            stats: EngineStats::default(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn conn_state(&self) -> &SwapMaps {
        &self.conns
    }

    pub fn whitelist(&self) -> Option<&Whitelist> {
        self.whitelist.as_ref()
    }

    /// Splice attempts still waiting for the server's SYN/ACK.
    pub fn pending_handshakes(&self) -> usize {
        self.pending.len()
    }

    pub fn process(&mut self, s: Segment, ingress: Interface, now: Duration) -> ActionList {
        self.stats.segments_in += 1;
        self.anchor_gc(now);
        let out = match (self.cfg.strategy, ingress) {
            (Strategy::SynCookie, Interface::Client) => self.syncookie_client(s, now),
            (Strategy::SynCookie, Interface::Server) => self.syncookie_server(s, now),
            (_, Interface::Client) => self.auth_client(s, now),
            (_, Interface::Server) => self.forward(s, Interface::Client),
        };
        self.account(&out);
        out
    }

    pub fn process_batch<I>(&mut self, batch: I, now: Duration, out: &mut Vec<ActionList>)
    where
        I: IntoIterator<Item = (Segment, Interface)>,
    {
        for (s, ingress) in batch {
            out.push(self.process(s, ingress, now));
        }
    }

    pub(crate) fn account(&mut self, out: &ActionList) {
        for a in out {
            match a {
                Action::Emit {
                    iface: Interface::Client,
                    ..
                } => self.stats.emitted_to_client += 1,
                Action::Emit {
                    iface: Interface::Server,
                    ..
                } => self.stats.emitted_to_server += 1,
                Action::Drop(r) => self.stats.record_drop(*r),
            }
        }
    }

    pub(crate) fn set_l2(&self, s: &mut Segment, egress: Interface) {
        let l2 = &self.cfg.l2;
        match egress {
            Interface::Client => {
                s.eth_src = l2.proxy_client_port;
                s.eth_dst = l2.client_neighbor;
            }
            Interface::Server => {
                s.eth_src = l2.proxy_server_port;
                s.eth_dst = l2.server_neighbor;
            }
        }
    }

    /// Passes `s` on unchanged apart from its Ethernet addresses.
    pub(crate) fn forward(&mut self, mut s: Segment, egress: Interface) -> ActionList {
        self.set_l2(&mut s, egress);
        self.stats.forwarded += 1;
        ActionList::emit(s, egress)
    }

    /// Builds a segment originated by the proxy itself.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn generate(
        &self,
        key: FlowKey,
        flags: TcpFlags,
        seq: u32,
        ack: u32,
        window: u16,
        options: TcpOptions,
        egress: Interface,
    ) -> Segment {
        let mut s = Segment::new(key, flags, seq, ack)
            .with_window(window)
            .with_options(options);
        self.set_l2(&mut s, egress);
        s
    }

    pub(crate) fn arm_handshake_timer(&mut self, key: FlowKey, deadline: Duration) {
        self.timers.push(Reverse((deadline, key)));
    }

    /// Earliest time [`Shard::on_timer`] has work to do.
    pub fn next_deadline(&self) -> Option<Duration> {
        let timer = self.timers.peek().map(|Reverse((t, _))| *t);
        match (timer, self.next_gc) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn anchor_gc(&mut self, now: Duration) {
        if self.next_gc.is_none() {
            self.next_gc = Some(now + gc_period(&self.cfg));
        }
    }

    /// Runs handshake retransmissions and garbage collection due at `now`.
    pub fn on_timer(&mut self, now: Duration) -> ActionList {
        let mut out = ActionList::new();
        while let Some(Reverse((t, key))) = self.timers.peek().copied() {
            if t > now {
                break;
            }
            self.timers.pop();
            self.handshake_timer(key, t, &mut out);
        }
        self.anchor_gc(now);
        self.run_gc(now);
        self.account(&out);
        out
    }

    fn handshake_timer(&mut self, key: FlowKey, t: Duration, out: &mut ActionList) {
        let Some(p) = self.pending.get_mut(&key) else {
            return;
        };
        if p.deadline != t {
            return;
        }
        let awaiting = self.conns.peek(&key).is_some_and(|e| !e.is_established());
        if !awaiting {
            self.pending.remove(&key);
            return;
        }
        let schedule = &self.cfg.handshake_retransmits;
        if p.attempt + 1 < schedule.len() {
            p.attempt += 1;
            p.deadline = t + schedule[p.attempt];
            let syn = p.syn.clone();
            let deadline = p.deadline;
            self.stats.handshake_retransmits += 1;
            out.push_emit(syn, Interface::Server);
            self.arm_handshake_timer(key, deadline);
            return;
        }
        // Give up. Reset the client so it does not sit on a zero window.
        self.pending.remove(&key);
        let y = self.conns.peek(&key).map(|e| e.delta).unwrap_or(0);
        self.conns.remove(&key);
        self.stats.conn_removals += 1;
        let rst = self.generate(
            key.reverse(),
            TcpFlags::RST,
            y.wrapping_add(1),
            0,
            0,
            TcpOptions::default(),
            Interface::Client,
        );
        out.push_emit(rst, Interface::Client);
        out.push(Action::Drop(DropReason::HandshakeTimeout));
    }

    fn run_gc(&mut self, now: Duration) {
        let period = gc_period(&self.cfg);
        let Some(mut next) = self.next_gc else {
            return;
        };
        let mut runs = 0;
        while now >= next {
            // Two collections empty everything that is idle; beyond that a
            // long jump in time only needs the schedule moved forward.
            if runs < 2 {
                self.collect();
                runs += 1;
                next += period;
            } else {
                let behind = (now - next).as_nanos() / period.as_nanos() + 1;
                next += Duration::from_nanos((period.as_nanos() * behind) as u64);
            }
        }
        self.next_gc = Some(next);
    }

    fn collect(&mut self) {
        self.stats.gc_runs += 1;
        match &mut self.whitelist {
            Some(w) => self.stats.whitelist_evictions += w.sweep(),
            None => self.stats.conn_swapped_out += self.conns.swap() as u64,
        }
    }

    pub(crate) fn note_conn_insert(&mut self) {
        self.stats.conn_inserts += 1;
        self.stats.conn_high_water = self.stats.conn_high_water.max(self.conns.len() as u64);
    }
}

fn gc_period(cfg: &EngineConfig) -> Duration {
    if cfg.strategy.is_auth() {
        cfg.whitelist_sweep_period
    } else {
        cfg.conn_swap_period
    }
}
