//! The discrete-event loop tying clients, attacker, proxy and server
//! together.
//!
//! ```text
//! clients ──c2p──▶            ──p2s──▶
//!                   proxy               server
//! clients ◀──p2c──            ◀──s2p──
//!            ▲
//! attacker ──┘ (shares the c2p link)
//! ```

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use synproxy_core::engine::{ActionList, Engine, Interface};
use synproxy_core::packet::{FlowKey, Segment};

use crate::attacker::{AttackKind, Attacker};
use crate::client::{ClientStream, Clients, RequestOutcome};
use crate::config::{secs_to_us, ConfigError, Prefix, ProxyMode, ScenarioConfig};
use crate::event::{EventQueue, Micros};
use crate::link::Link;
use crate::metrics::MetricsReport;
use crate::proxy::{Proxy, TraceRecord};
use crate::server::{Server, ServerStream};

#[derive(Debug, Clone)]
pub(crate) enum Event {
    ArriveProxy {
        seg: Segment,
        from: Interface,
    },
    ArriveServer(Segment),
    ArriveClient(Segment),
    Attack {
        kind: AttackKind,
        n: u64,
    },
    Request(u64),
    RequestTimeout(usize),
    ClientTimer {
        slot: usize,
        port: u16,
        id: u64,
        at: Micros,
    },
    TimeWait {
        slot: usize,
        port: u16,
        id: u64,
    },
    ServerTimer {
        key: FlowKey,
        id: u64,
        at: Micros,
    },
    ServerRespond {
        key: FlowKey,
        id: u64,
    },
    EngineTimer {
        at: Micros,
    },
}

/// What a node produced while handling one event.
pub(crate) struct Outbox {
    pub now: Micros,
    pub segments: Vec<Segment>,
    pub timers: Vec<(Micros, Event)>,
}

impl Outbox {
    fn new(now: Micros) -> Self {
        Outbox {
            now,
            segments: Vec::new(),
            timers: Vec::new(),
        }
    }
}

/// RNG stream numbers; one per component so that changing one part of a
/// scenario leaves the others' randomness alone.
mod stream {
    pub const ATTACKER: u64 = 1;
    pub const SERVER: u64 = 2;
    pub const CLIENTS: u64 = 3;
    pub const LINKS: u64 = 4;
}

const C2P: usize = 0;
const P2C: usize = 1;
const P2S: usize = 2;
const S2P: usize = 3;
const LINK_NAMES: [&str; 4] = [
    "client_to_proxy",
    "proxy_to_client",
    "proxy_to_server",
    "server_to_proxy",
];

/// A client stream and the server side of the same connection, if the
/// server ever saw it.
#[derive(Debug, Clone)]
pub struct StreamPair {
    pub client: ClientStream,
    pub server: Option<ServerStream>,
}

pub struct Simulation {
    mode: ProxyMode,
    seed: u64,
    duration_s: f64,
    end: Micros,
    now: Micros,
    queue: EventQueue<Event>,
    links: [Link; 4],
    client_prefix: Prefix,
    clients: Clients,
    server: Server,
    attacker: Attacker,
    proxy: Proxy,
    /// Proxy output toward addresses no client owns.
    backscatter: u64,
    events: u64,
    done: bool,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, seed: u64, duration_s: f64) -> Result<Self, ConfigError> {
        cfg.validate()?;
        if !duration_s.is_finite() || duration_s <= 0.0 {
            return Err(ConfigError::Invalid {
                key: "duration",
                reason: format!("{duration_s} is not a positive number of seconds"),
            });
        }
        let mode = cfg.mode()?;
        let end = secs_to_us(duration_s);
        let spoof = cfg.spoof_prefix()?;
        let client_prefix = cfg.client_prefix()?;
        let engine =
            match cfg.engine_config()? {
                Some(ec) => Some(Engine::new(ec, cfg.cookie_key(seed)?).map_err(|e| {
                    ConfigError::Invalid {
                        key: "engine",
                        reason: e.to_string(),
                    }
                })?),
                None => None,
            };
        let t = &cfg.topology;
        let link =
            |i: u64, delay| Link::new(delay, t.jitter_us, t.loss, rng(seed, stream::LINKS + i));
        let links = [
            link(0, t.client_proxy_delay_us),
            link(1, t.client_proxy_delay_us),
            link(2, t.proxy_server_delay_us),
            link(3, t.proxy_server_delay_us),
        ];
        let mut sim = Simulation {
            mode,
            seed,
            duration_s,
            end,
            now: 0,
            queue: EventQueue::new(),
            links,
            client_prefix,
            clients: Clients::new(&cfg.clients, client_prefix, end, rng(seed, stream::CLIENTS)),
            server: Server::new(
                &cfg.server,
                spoof,
                cfg.clients.request_bytes,
                cfg.clients.response_bytes,
                rng(seed, stream::SERVER),
            ),
            attacker: Attacker::new(&cfg.attacker, spoof, end, rng(seed, stream::ATTACKER)),
            proxy: Proxy::new(engine, cfg.engine_capacity.ops_per_second, spoof),
            backscatter: 0,
            events: 0,
            done: false,
        };
        for kind in AttackKind::ALL {
            if let Some(t) = sim.attacker.arrival(kind, 0) {
                sim.queue.push(t, Event::Attack { kind, n: 0 });
            }
        }
        if let Some(t) = sim.clients.request_time(0) {
            sim.queue.push(t, Event::Request(0));
        }
        Ok(sim)
    }

    /// Keep every segment the proxy handles, with the engine's response.
    pub fn record_trace(&mut self, on: bool) {
        self.proxy.record_trace(on);
    }

    /// Keep the bytes each connection carried, on both ends.
    pub fn record_streams(&mut self, on: bool) {
        self.clients.record_streams(on);
        self.server.record_streams(on);
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// Runs to the end of the configured duration.
    pub fn run(&mut self) {
        while !self.done && self.step() {}
        self.done = true;
        self.now = self.end;
    }

    /// Handles one event. False once the run is over.
    pub fn step(&mut self) -> bool {
        match self.queue.peek_time() {
            Some(t) if t <= self.end => {}
            _ => return false,
        }
        let (at, ev) = self.queue.pop().expect("peeked");
        self.now = at;
        self.events += 1;
        let mut ob = Outbox::new(at);
        match ev {
            Event::ArriveProxy { seg, from } => {
                let out = self.proxy.process(seg, from, at);
                self.route_proxy(out);
                self.schedule_engine_timer();
            }
            Event::EngineTimer { at: scheduled } => {
                if self.proxy.timer_scheduled == Some(scheduled) {
                    self.proxy.timer_scheduled = None;
                }
                let out = self.proxy.on_timer(at);
                self.route_proxy(out);
                self.schedule_engine_timer();
            }
            Event::ArriveServer(seg) => {
                self.server.on_segment(seg, &mut ob);
                self.flush(ob, S2P);
            }
            Event::ServerTimer {
                key,
                id,
                at: scheduled,
            } => {
                self.server.on_timer(key, id, scheduled, &mut ob);
                self.flush(ob, S2P);
            }
            Event::ServerRespond { key, id } => {
                self.server.respond(key, id, &mut ob);
                self.flush(ob, S2P);
            }
            Event::ArriveClient(seg) => {
                self.clients.on_segment(seg, &mut ob);
                self.flush(ob, C2P);
            }
            Event::Request(n) => {
                self.clients.new_request(n, &mut ob);
                self.flush(ob, C2P);
            }
            Event::RequestTimeout(id) => self.clients.request_timeout(id),
            Event::ClientTimer {
                slot,
                port,
                id,
                at: scheduled,
            } => {
                self.clients.on_timer(slot, port, id, scheduled, &mut ob);
                self.flush(ob, C2P);
            }
            Event::TimeWait { slot, port, id } => self.clients.time_wait_over(slot, port, id),
            Event::Attack { kind, n } => {
                let seg = self.attacker.packet(kind);
                if let Some(t) = self.links[C2P].transit(at) {
                    self.queue.push(
                        t,
                        Event::ArriveProxy {
                            seg,
                            from: Interface::Client,
                        },
                    );
                }
                if let Some(t) = self.attacker.arrival(kind, n + 1) {
                    self.queue.push(t, Event::Attack { kind, n: n + 1 });
                }
            }
        }
        true
    }

    /// Sends a node's output toward the proxy over `link`.
    fn flush(&mut self, ob: Outbox, link: usize) {
        let from = if link == C2P {
            Interface::Client
        } else {
            Interface::Server
        };
        for (t, ev) in ob.timers {
            self.queue.push(t, ev);
        }
        for seg in ob.segments {
            if let Some(t) = self.links[link].transit(self.now) {
                self.queue.push(t, Event::ArriveProxy { seg, from });
            }
        }
    }

    fn route_proxy(&mut self, out: ActionList) {
        for a in out {
            let Some((seg, iface)) = a.emitted().map(|(s, i)| (s.clone(), i)) else {
                continue;
            };
            match iface {
                Interface::Server => {
                    if let Some(t) = self.links[P2S].transit(self.now) {
                        self.queue.push(t, Event::ArriveServer(seg));
                    }
                }
                Interface::Client => {
                    if !self.client_prefix.contains(seg.key.dst_ip) {
                        self.backscatter += 1;
                        continue;
                    }
                    if let Some(t) = self.links[P2C].transit(self.now) {
                        self.queue.push(t, Event::ArriveClient(seg));
                    }
                }
            }
        }
    }

    fn schedule_engine_timer(&mut self) {
        let Some(t) = self.proxy.next_deadline() else {
            return;
        };
        let t = t.max(self.now + 1);
        if self.proxy.timer_scheduled.is_none_or(|s| t < s) {
            self.proxy.timer_scheduled = Some(t);
            self.queue.push(t, Event::EngineTimer { at: t });
        }
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.proxy.trace()
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.proxy.engine()
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn clients(&self) -> &Clients {
        &self.clients
    }

    pub fn proxy(&self) -> &Proxy {
        &self.proxy
    }

    pub fn attacker(&self) -> &Attacker {
        &self.attacker
    }

    /// Client streams joined with the server's view of the same tuple. When
    /// a tuple was used more than once the latest server stream wins.
    pub fn streams(&self) -> Vec<StreamPair> {
        let mut by_key: HashMap<FlowKey, ServerStream> = HashMap::new();
        for s in self.server.streams() {
            by_key.insert(s.key, s);
        }
        self.clients
            .streams()
            .into_iter()
            .map(|c| StreamPair {
                server: by_key.get(&c.key).cloned(),
                client: c,
            })
            .collect()
    }

    pub fn report(&self) -> MetricsReport {
        let mut r = MetricsReport::new();
        r.set("run.strategy", self.mode.as_str());
        r.set("run.seed", self.seed);
        r.set("run.duration_s", self.duration_s);
        r.set("run.events", self.events);

        let (mut ok, mut failed) = (0u64, 0u64);
        for q in self.clients.requests() {
            match q.outcome {
                RequestOutcome::Ok(_) => ok += 1,
                RequestOutcome::Failed => failed += 1,
                // Still running when the clock stopped: no verdict.
                RequestOutcome::Pending => {}
            }
        }
        r.set("requests.total", ok + failed);
        r.set("requests.succeeded", ok);
        r.set("requests.failed", failed);
        r.set(
            "requests.success_probability",
            if ok + failed == 0 {
                f64::NAN
            } else {
                ok as f64 / (ok + failed) as f64
            },
        );

        let c = self.clients.totals();
        r.set("connections.opened", c.connections_opened);
        r.set("connections.established", c.connections_established);
        r.set("connections.failed", c.connections_failed);
        r.set("connections.aborted", c.connections_aborted);
        r.set("connections.closed", c.connections_closed);
        r.set("connections.rst_retries", c.rst_retries);
        r.set("clients.retransmissions", c.retransmissions);
        r.set("clients.zero_window_probes", c.zero_window_probes);
        r.set("clients.unmatched", c.unmatched);

        for (name, h) in [
            ("setup_us", &self.clients.setup_latency),
            ("request_us", &self.clients.request_latency),
        ] {
            r.set(format!("latency.{name}.count"), h.len());
            for (q, label) in [(0.5, "p50"), (0.9, "p90"), (0.99, "p99"), (0.999, "p999")] {
                r.set(format!("latency.{name}.{label}"), h.value_at_quantile(q));
            }
            r.set(format!("latency.{name}.mean"), h.mean());
            r.histograms.insert(name.to_owned(), h.clone());
        }

        let a = &self.attacker.stats;
        r.set("attack.syn_sent", a.syn_sent);
        r.set("attack.ack_sent", a.ack_sent);
        r.set("attack.rst_sent", a.rst_sent);
        let p = &self.proxy.stats;
        r.set("attack.syn_processed", p.attack_syns_processed);
        r.set(
            "attack.syn_processed_per_s",
            p.attack_syns_processed as f64 / self.duration_s,
        );

        r.set("proxy.segments_in", p.segments_in);
        r.set("proxy.capacity_drops", p.capacity_drops);
        r.set("proxy.attack_capacity_drops", p.attack_capacity_drops);
        r.set("proxy.backscatter", self.backscatter);
        if let Some(e) = self.proxy.engine() {
            for (k, v) in e.stats().rows() {
                r.set(format!("engine.{k}"), v);
            }
            r.set("engine.conn_entries", e.conn_entries());
            r.set("engine.whitelist_entries", e.whitelist_entries());
            r.set("engine.pending_handshakes", e.pending_handshakes());
        }

        let s = &self.server.stats;
        r.set("server.segments_in", s.segments_in);
        r.set("server.attack_segments", s.attack_segments);
        r.set("server.tcb_allocations", s.tcb_allocations);
        r.set("server.attack_tcb_allocations", s.attack_tcb_allocations);
        r.set("server.backlog_high_water", s.backlog_high_water);
        r.set("server.backlog_drops", s.backlog_drops);
        r.set("server.backlog_evictions", s.backlog_evictions);
        r.set("server.synack_expired", s.synack_expired);
        r.set("server.established", s.established);
        r.set("server.aborted", s.aborted);
        r.set("server.rsts_sent", s.rsts_sent);
        r.set("server.requests_served", s.requests_served);
        r.set("server.backlog_final", self.server.backlog());

        for (l, name) in self.links.iter().zip(LINK_NAMES) {
            r.set(format!("links.{name}.sent"), l.sent);
            r.set(format!("links.{name}.lost"), l.lost);
        }
        r
    }
}

/// Builds, runs and reports one scenario.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    seed: u64,
    duration_s: f64,
) -> Result<MetricsReport, ConfigError> {
    let mut sim = Simulation::new(cfg, seed, duration_s)?;
    sim.run();
    Ok(sim.report())
}
