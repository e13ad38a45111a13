//! Web server model: a finite SYN backlog in front of a request/response
//! service.

use std::collections::{HashMap, VecDeque};
use std::net::Ipv4Addr;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use synproxy_core::packet::{FlowKey, Segment, TcpFlags};

use crate::config::{BacklogPolicy, Prefix, ServerConfig};
use crate::event::Micros;
use crate::sim::{Event, Outbox};
use crate::tcp::{Outcome, Tcb, TcpParams, TcpState};

pub const SERVER_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);
pub const SERVER_PORT: u16 = 80;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub segments_in: u64,
    /// Segments whose source lies in the attacker's spoofing range.
    pub attack_segments: u64,
    pub tcb_allocations: u64,
    pub attack_tcb_allocations: u64,
    pub backlog_high_water: u64,
    pub backlog_drops: u64,
    pub backlog_evictions: u64,
    pub synack_expired: u64,
    pub established: u64,
    pub aborted: u64,
    pub rsts_sent: u64,
    pub requests_served: u64,
}

/// Bytes the server exchanged on one connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerStream {
    /// Client to server.
    pub key: FlowKey,
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
}

struct Conn {
    tcb: Tcb,
    id: u64,
    in_backlog: bool,
    scheduled: Option<Micros>,
    request_progress: usize,
    sent: Vec<u8>,
    received: Vec<u8>,
}

pub struct Server {
    cfg: ServerConfig,
    params: TcpParams,
    spoof: Prefix,
    request_bytes: usize,
    response_bytes: usize,
    conns: HashMap<FlowKey, Conn>,
    /// Half-open connections in arrival order, for eviction. Stale entries
    /// are skipped when popped.
    backlog_order: VecDeque<(FlowKey, u64)>,
    half_open: usize,
    next_id: u64,
    rng: ChaCha8Rng,
    record: bool,
    finished: Vec<ServerStream>,
    pub stats: ServerStats,
}

impl Server {
    pub fn new(
        cfg: &ServerConfig,
        spoof: Prefix,
        request_bytes: usize,
        response_bytes: usize,
        rng: ChaCha8Rng,
    ) -> Self {
        // Initial timeout, then doubling per retry; the final entry is the
        // wait after the last retransmission.
        let handshake_schedule = (0..=cfg.synack_retries)
            .map(|i| (cfg.synack_timeout_ms * 1000) << i)
            .collect();
        Server {
            params: TcpParams {
                mss: cfg.mss,
                window: cfg.window,
                rto: cfg.data_rto_ms * 1000,
                max_retransmits: cfg.max_retransmits,
                handshake_schedule,
            },
            cfg: cfg.clone(),
            spoof,
            request_bytes,
            response_bytes,
            conns: HashMap::new(),
            backlog_order: VecDeque::new(),
            half_open: 0,
            next_id: 0,
            rng,
            record: false,
            finished: Vec::new(),
            stats: ServerStats::default(),
        }
    }

    pub fn record_streams(&mut self, on: bool) {
        self.record = on;
    }

    /// Connections currently holding a backlog slot.
    pub fn backlog(&self) -> usize {
        self.half_open
    }

    pub fn connections(&self) -> usize {
        self.conns.len()
    }

    pub(crate) fn on_segment(&mut self, s: Segment, ob: &mut Outbox) {
        self.stats.segments_in += 1;
        if self.spoof.contains(s.key.src_ip) {
            self.stats.attack_segments += 1;
        }
        if s.key.dst_ip != SERVER_IP || s.key.dst_port != SERVER_PORT {
            return;
        }
        let k = s.key;
        let fresh_syn = s.has(TcpFlags::SYN) && !s.has(TcpFlags::ACK) && !s.has(TcpFlags::RST);
        if let Some(c) = self.conns.get_mut(&k) {
            let superseded =
                fresh_syn && c.tcb.state == TcpState::SynReceived && s.seq != c.tcb.irs();
            if !superseded {
                let o = c.tcb.on_segment(&s, ob.now);
                self.after(k, o, ob);
                return;
            }
            self.finish(k);
        }
        if s.has(TcpFlags::RST) {
            return;
        }
        if fresh_syn {
            self.open(&s, ob);
        } else if s.has(TcpFlags::ACK) {
            self.stats.rsts_sent += 1;
            ob.segments
                .push(Segment::new(k.reverse(), TcpFlags::RST, s.ack, 0));
        }
    }

    fn open(&mut self, syn: &Segment, ob: &mut Outbox) {
        if self.half_open >= self.cfg.backlog {
            match self.cfg.backlog_policy {
                BacklogPolicy::DropNew => {
                    self.stats.backlog_drops += 1;
                    return;
                }
                BacklogPolicy::EvictOldest => {
                    while let Some((k, id)) = self.backlog_order.pop_front() {
                        if self
                            .conns
                            .get(&k)
                            .is_some_and(|c| c.id == id && c.in_backlog)
                        {
                            self.finish(k);
                            self.stats.backlog_evictions += 1;
                            break;
                        }
                    }
                }
            }
        }
        let (tcb, synack) = Tcb::accept(syn, self.rng.next_u32(), self.params.clone(), ob.now);
        let id = self.next_id;
        self.next_id += 1;
        let k = syn.key;
        self.conns.insert(
            k,
            Conn {
                tcb,
                id,
                in_backlog: true,
                scheduled: None,
                request_progress: 0,
                sent: Vec::new(),
                received: Vec::new(),
            },
        );
        self.half_open += 1;
        self.backlog_order.push_back((k, id));
        self.stats.tcb_allocations += 1;
        if self.spoof.contains(k.src_ip) {
            self.stats.attack_tcb_allocations += 1;
        }
        self.stats.backlog_high_water = self.stats.backlog_high_water.max(self.half_open as u64);
        ob.segments.push(synack);
        self.arm(k, ob);
    }

    pub(crate) fn on_timer(&mut self, k: FlowKey, id: u64, at: Micros, ob: &mut Outbox) {
        let Some(c) = self.conns.get_mut(&k).filter(|c| c.id == id) else {
            return;
        };
        if c.scheduled == Some(at) {
            c.scheduled = None;
        }
        let half_open = c.in_backlog;
        let o = c.tcb.on_timer(ob.now);
        if o.aborted && half_open {
            self.stats.synack_expired += 1;
        }
        self.after(k, o, ob);
    }

    pub(crate) fn respond(&mut self, k: FlowKey, id: u64, ob: &mut Outbox) {
        let Some(c) = self.conns.get_mut(&k).filter(|c| c.id == id) else {
            return;
        };
        if c.tcb.state != TcpState::Established || c.tcb.is_closing() {
            return;
        }
        let mut data = vec![0u8; self.response_bytes];
        self.rng.fill(&mut data[..]);
        if self.record {
            c.sent.extend_from_slice(&data);
        }
        ob.segments.extend(c.tcb.send(&data, ob.now));
        self.stats.requests_served += 1;
        self.arm(k, ob);
    }

    fn after(&mut self, k: FlowKey, o: Outcome, ob: &mut Outbox) {
        let Some(c) = self.conns.get_mut(&k) else {
            return;
        };
        ob.segments.extend(o.segments);
        if o.established && c.in_backlog {
            c.in_backlog = false;
            self.half_open -= 1;
            self.stats.established += 1;
        }
        if !o.delivered.is_empty() {
            if self.record {
                c.received.extend_from_slice(&o.delivered);
            }
            c.request_progress += o.delivered.len();
            while c.request_progress >= self.request_bytes {
                c.request_progress -= self.request_bytes;
                ob.timers.push((
                    ob.now + self.cfg.service_time_us,
                    Event::ServerRespond { key: k, id: c.id },
                ));
            }
        }
        if o.fin && !c.tcb.is_closing() {
            ob.segments.extend(c.tcb.close(ob.now));
        }
        if o.aborted && !c.in_backlog {
            self.stats.aborted += 1;
        }
        if o.reset || o.aborted || o.closed || c.tcb.is_closed() {
            self.finish(k);
            return;
        }
        self.arm(k, ob);
    }

    fn arm(&mut self, k: FlowKey, ob: &mut Outbox) {
        let Some(c) = self.conns.get_mut(&k) else {
            return;
        };
        if let Some(t) = c.tcb.timer() {
            if c.scheduled.is_none_or(|s| s > t) {
                c.scheduled = Some(t);
                ob.timers.push((
                    t,
                    Event::ServerTimer {
                        key: k,
                        id: c.id,
                        at: t,
                    },
                ));
            }
        }
    }

    fn finish(&mut self, k: FlowKey) {
        if let Some(c) = self.conns.remove(&k) {
            if c.in_backlog {
                self.half_open -= 1;
            }
            if self.record {
                self.finished.push(ServerStream {
                    key: k,
                    sent: c.sent,
                    received: c.received,
                });
            }
        }
    }

    /// Streams of finished connections followed by live ones, in key order
    /// for the live part.
    pub fn streams(&self) -> Vec<ServerStream> {
        let mut live: Vec<ServerStream> = self
            .conns
            .iter()
            .map(|(k, c)| ServerStream {
                key: *k,
                sent: c.sent.clone(),
                received: c.received.clone(),
            })
            .collect();
        live.sort_by_key(|s| s.key);
        let mut out = self.finished.clone();
        out.extend(live);
        out
    }
}
