//! Legitimate client fleet: a fixed number of connection slots, each with
//! its own source address, issuing fixed-size requests at a steady
//! aggregate rate.

use std::collections::{BTreeMap, VecDeque};

use hdrhistogram::Histogram;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use synproxy_core::packet::FlowKey;

use crate::config::{secs_to_us, ClientConfig, Prefix};
use crate::event::Micros;
use crate::server::{SERVER_IP, SERVER_PORT};
use crate::sim::{Event, Outbox};
use crate::tcp::{Outcome, Tcb, TcpParams};

/// How long a closed connection lingers to re-acknowledge a repeated FIN.
const TIME_WAIT: Micros = 2_000_000;
const FIRST_PORT: u16 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestOutcome {
    Pending,
    /// Answered, with the latency.
    Ok(Micros),
    Failed,
}

#[derive(Debug, Clone, Copy)]
pub struct Request {
    pub created: Micros,
    pub deadline: Micros,
    pub outcome: RequestOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub connections_opened: u64,
    pub connections_established: u64,
    /// Gave up before the connection was ever usable.
    pub connections_failed: u64,
    /// Died after being usable.
    pub connections_aborted: u64,
    pub connections_closed: u64,
    pub rst_retries: u64,
    pub retransmissions: u64,
    pub zero_window_probes: u64,
    /// Segments addressed to a client port with no connection.
    pub unmatched: u64,
}

/// Bytes a client exchanged on one connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientStream {
    pub key: FlowKey,
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
    /// Closed by a completed FIN exchange.
    pub clean: bool,
}

struct Conn {
    tcb: Tcb,
    id: u64,
    started: Micros,
    ready: bool,
    scheduled: Option<Micros>,
    outstanding: VecDeque<usize>,
    response_progress: usize,
    sent_requests: u32,
    rst_retries: u32,
    sent: Vec<u8>,
    received: Vec<u8>,
}

struct Slot {
    ip: std::net::Ipv4Addr,
    next_port: u16,
    conns: BTreeMap<u16, Conn>,
    active: Option<u16>,
    unsent: VecDeque<usize>,
}

pub struct Clients {
    cfg: ClientConfig,
    params: TcpParams,
    prefix: Prefix,
    slots: Vec<Slot>,
    requests: Vec<Request>,
    next_conn_id: u64,
    rng: ChaCha8Rng,
    record: bool,
    streams: Vec<ClientStream>,
    start: Micros,
    stop: Micros,
    pub setup_latency: Histogram<u64>,
    pub request_latency: Histogram<u64>,
    pub stats: ClientStats,
}

pub(crate) fn new_histogram() -> Histogram<u64> {
    Histogram::new_with_bounds(1, 3_600_000_000, 3).expect("static bounds")
}

impl Clients {
    pub fn new(cfg: &ClientConfig, prefix: Prefix, end: Micros, rng: ChaCha8Rng) -> Self {
        let slots = (0..cfg.parallel_connections)
            .map(|i| Slot {
                ip: prefix.host(i as u32 + 1),
                next_port: FIRST_PORT,
                conns: BTreeMap::new(),
                active: None,
                unsent: VecDeque::new(),
            })
            .collect();
        Clients {
            params: TcpParams {
                mss: cfg.mss,
                window: cfg.window,
                rto: cfg.data_rto_ms * 1000,
                max_retransmits: cfg.max_retransmits,
                handshake_schedule: cfg
                    .syn_retransmit_s
                    .iter()
                    .map(|&s| secs_to_us(s))
                    .collect(),
            },
            cfg: cfg.clone(),
            prefix,
            slots,
            requests: Vec::new(),
            next_conn_id: 0,
            rng,
            record: false,
            streams: Vec::new(),
            start: secs_to_us(cfg.start_s),
            stop: cfg.stop_s.map(secs_to_us).unwrap_or(end).min(end),
            setup_latency: new_histogram(),
            request_latency: new_histogram(),
            stats: ClientStats::default(),
        }
    }

    pub fn record_streams(&mut self, on: bool) {
        self.record = on;
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    /// Time of the `n`th request, if it falls inside the active period.
    pub fn request_time(&self, n: u64) -> Option<Micros> {
        if self.cfg.request_rate <= 0.0 || self.slots.is_empty() {
            return None;
        }
        let t = self.start + (n as f64 * 1e6 / self.cfg.request_rate).round() as Micros;
        (t < self.stop).then_some(t)
    }

    pub(crate) fn new_request(&mut self, n: u64, ob: &mut Outbox) {
        let slot = (n % self.slots.len() as u64) as usize;
        let id = self.requests.len();
        let deadline = ob.now + self.cfg.request_timeout_ms * 1000;
        self.requests.push(Request {
            created: ob.now,
            deadline,
            outcome: RequestOutcome::Pending,
        });
        ob.timers.push((deadline, Event::RequestTimeout(id)));
        self.slots[slot].unsent.push_back(id);
        self.dispatch(slot, ob);
        if let Some(t) = self.request_time(n + 1) {
            ob.timers.push((t, Event::Request(n + 1)));
        }
    }

    pub fn request_timeout(&mut self, id: usize) {
        let r = &mut self.requests[id];
        if r.outcome == RequestOutcome::Pending {
            r.outcome = RequestOutcome::Failed;
        }
    }

    /// Slot owning `ip`, if it is one of ours.
    fn slot_of(&self, ip: std::net::Ipv4Addr) -> Option<usize> {
        if !self.prefix.contains(ip) {
            return None;
        }
        let host = (u32::from(ip) & !self.prefix.mask()) as usize;
        (1..=self.slots.len()).contains(&host).then(|| host - 1)
    }

    pub(crate) fn on_segment(&mut self, s: synproxy_core::packet::Segment, ob: &mut Outbox) {
        let Some(slot) = self.slot_of(s.key.dst_ip) else {
            self.stats.unmatched += 1;
            return;
        };
        let port = s.key.dst_port;
        let Some(c) = self.slots[slot].conns.get_mut(&port) else {
            self.stats.unmatched += 1;
            return;
        };
        let o = c.tcb.on_segment(&s, ob.now);
        self.after(slot, port, o, ob);
    }

    pub(crate) fn on_timer(
        &mut self,
        slot: usize,
        port: u16,
        id: u64,
        at: Micros,
        ob: &mut Outbox,
    ) {
        let Some(c) = self.slots[slot].conns.get_mut(&port).filter(|c| c.id == id) else {
            return;
        };
        if c.scheduled == Some(at) {
            c.scheduled = None;
        }
        let o = c.tcb.on_timer(ob.now);
        self.after(slot, port, o, ob);
    }

    pub fn time_wait_over(&mut self, slot: usize, port: u16, id: u64) {
        let conns = &mut self.slots[slot].conns;
        if conns
            .get(&port)
            .is_some_and(|c| c.id == id && c.tcb.is_closed())
        {
            let c = conns.remove(&port).expect("checked");
            self.absorb(&c.tcb);
        }
    }

    fn absorb(&mut self, t: &Tcb) {
        self.stats.retransmissions += t.retransmissions;
        self.stats.zero_window_probes += t.probes;
    }

    fn prune(&mut self, slot: usize) {
        let requests = &self.requests;
        self.slots[slot]
            .unsent
            .retain(|&id| requests[id].outcome == RequestOutcome::Pending);
    }

    fn open(&mut self, slot: usize, ob: &mut Outbox) {
        let s = &mut self.slots[slot];
        let port = s.next_port;
        s.next_port = if s.next_port == u16::MAX {
            FIRST_PORT
        } else {
            s.next_port + 1
        };
        let key = FlowKey::new(s.ip, port, SERVER_IP, SERVER_PORT);
        let (tcb, syn) = Tcb::connect(key, self.rng.next_u32(), self.params.clone(), ob.now);
        let id = self.next_conn_id;
        self.next_conn_id += 1;
        s.conns.insert(
            port,
            Conn {
                tcb,
                id,
                started: ob.now,
                ready: false,
                scheduled: None,
                outstanding: VecDeque::new(),
                response_progress: 0,
                sent_requests: 0,
                rst_retries: 0,
                sent: Vec::new(),
                received: Vec::new(),
            },
        );
        s.active = Some(port);
        self.stats.connections_opened += 1;
        ob.segments.push(syn);
        self.arm(slot, port, ob);
    }

    /// Sends queued requests on the slot's connection, opening one if needed.
    fn dispatch(&mut self, slot: usize, ob: &mut Outbox) {
        self.prune(slot);
        let Some(port) = self.slots[slot].active else {
            if !self.slots[slot].unsent.is_empty() {
                self.open(slot, ob);
            }
            return;
        };
        let limit = self.cfg.requests_per_connection;
        let s = &mut self.slots[slot];
        let c = s.conns.get_mut(&port).expect("active connection exists");
        if !c.ready {
            return;
        }
        while !s.unsent.is_empty() && (limit == 0 || c.sent_requests < limit) {
            let id = s.unsent.pop_front().expect("not empty");
            let mut data = vec![0u8; self.cfg.request_bytes];
            self.rng.fill(&mut data[..]);
            if self.record {
                c.sent.extend_from_slice(&data);
            }
            c.sent_requests += 1;
            c.outstanding.push_back(id);
            ob.segments.extend(c.tcb.send(&data, ob.now));
        }
        self.maybe_close(slot, port, ob);
        self.arm(slot, port, ob);
    }

    /// Closes a connection that has used up its request budget.
    fn maybe_close(&mut self, slot: usize, port: u16, ob: &mut Outbox) {
        let limit = self.cfg.requests_per_connection;
        let s = &mut self.slots[slot];
        let Some(c) = s.conns.get_mut(&port) else {
            return;
        };
        if limit == 0 || c.sent_requests < limit || !c.outstanding.is_empty() || c.tcb.is_closing()
        {
            return;
        }
        ob.segments.extend(c.tcb.close(ob.now));
        if s.active == Some(port) {
            s.active = None;
            if !s.unsent.is_empty() {
                self.open(slot, ob);
            }
        }
        self.arm(slot, port, ob);
    }

    fn after(&mut self, slot: usize, port: u16, o: Outcome, ob: &mut Outbox) {
        ob.segments.extend(o.segments);
        let s = &mut self.slots[slot];
        let active = s.active == Some(port);
        let c = s.conns.get_mut(&port).expect("caller found it");

        if self.record {
            c.received.extend_from_slice(&o.delivered);
        }
        c.response_progress += o.delivered.len();
        while c.response_progress >= self.cfg.response_bytes {
            c.response_progress -= self.cfg.response_bytes;
            if let Some(id) = c.outstanding.pop_front() {
                let r = &mut self.requests[id];
                if r.outcome == RequestOutcome::Pending {
                    let latency = ob.now - r.created;
                    r.outcome = RequestOutcome::Ok(latency);
                    self.request_latency.saturating_record(latency.max(1));
                }
            }
        }

        if o.reset && active && c.rst_retries < self.cfg.rst_retries && !c.tcb.is_closing() {
            // Retry at once on the same port, resending whatever was queued.
            c.rst_retries += 1;
            self.stats.rst_retries += 1;
            for id in c.outstanding.drain(..).rev() {
                s.unsent.push_front(id);
            }
            c.response_progress = 0;
            c.sent_requests = 0;
            c.sent.clear();
            c.received.clear();
            c.ready = false;
            c.retransmissions_into(&mut self.stats);
            let syn = c.tcb.reconnect(self.rng.next_u32(), ob.now);
            ob.segments.push(syn);
            self.arm(slot, port, ob);
            return;
        }
        if o.reset || o.aborted {
            if c.ready {
                self.stats.connections_aborted += 1;
            } else {
                self.stats.connections_failed += 1;
            }
            let c = s.conns.remove(&port).expect("present");
            if self.record {
                self.streams.push(ClientStream {
                    key: c.tcb.key,
                    sent: c.sent.clone(),
                    received: c.received.clone(),
                    clean: false,
                });
            }
            if active {
                s.active = None;
            }
            self.absorb(&c.tcb);
            if active {
                self.dispatch(slot, ob);
            }
            return;
        }

        if !c.ready && c.tcb.can_send() {
            c.ready = true;
            self.stats.connections_established += 1;
            self.setup_latency
                .saturating_record((ob.now - c.started).max(1));
        }
        if o.fin && !c.tcb.is_closing() {
            // The server closed first; close our side and move on.
            ob.segments.extend(c.tcb.close(ob.now));
            if active {
                s.active = None;
            }
        }
        if o.closed {
            self.stats.connections_closed += 1;
            if self.record {
                self.streams.push(ClientStream {
                    key: c.tcb.key,
                    sent: c.sent.clone(),
                    received: c.received.clone(),
                    clean: true,
                });
            }
            ob.timers.push((
                ob.now + TIME_WAIT,
                Event::TimeWait {
                    slot,
                    port,
                    id: c.id,
                },
            ));
        }
        if s.active.is_none() || active {
            self.dispatch(slot, ob);
        }
        self.maybe_close(slot, port, ob);
        self.arm(slot, port, ob);
    }

    fn arm(&mut self, slot: usize, port: u16, ob: &mut Outbox) {
        let Some(c) = self.slots[slot].conns.get_mut(&port) else {
            return;
        };
        if let Some(t) = c.tcb.timer() {
            if c.scheduled.is_none_or(|s| s > t) {
                c.scheduled = Some(t);
                ob.timers.push((
                    t,
                    Event::ClientTimer {
                        slot,
                        port,
                        id: c.id,
                        at: t,
                    },
                ));
            }
        }
    }

    /// Stats including connections still open.
    pub fn totals(&self) -> ClientStats {
        let mut st = self.stats.clone();
        for c in self.slots.iter().flat_map(|s| s.conns.values()) {
            st.retransmissions += c.tcb.retransmissions;
            st.zero_window_probes += c.tcb.probes;
        }
        st
    }

    /// Streams of finished connections followed by those still open.
    pub fn streams(&self) -> Vec<ClientStream> {
        let mut out = self.streams.clone();
        for c in self.slots.iter().flat_map(|s| s.conns.values()) {
            if !c.tcb.is_closed() {
                out.push(ClientStream {
                    key: c.tcb.key,
                    sent: c.sent.clone(),
                    received: c.received.clone(),
                    clean: false,
                });
            }
        }
        out
    }
}

impl Conn {
    fn retransmissions_into(&self, st: &mut ClientStats) {
        st.retransmissions += self.tcb.retransmissions;
        st.zero_window_probes += self.tcb.probes;
    }
}
