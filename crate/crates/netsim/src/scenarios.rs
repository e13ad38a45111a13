//! Canned scenarios used by the test suites and the CLI.

use crate::config::{Arrival, ProxyMode, ScenarioConfig};

/// No proxy, a 256-entry backlog and a constant-interval SYN flood. Each
/// half-open entry lives for 3 s (one SYN/ACK retry after 1 s, then 2 s
/// more), so the backlog fills once `rate * 3` exceeds 256.
///
/// Clients open one connection per request so every request needs a fresh
/// backlog slot.
pub fn backlog_collapse(syn_rate: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::with_mode(ProxyMode::None);
    c.server.backlog = 256;
    c.server.synack_retries = 1;
    c.server.synack_timeout_ms = 1000;
    c.topology.jitter_us = 0;
    c.attacker.syn_rate = syn_rate;
    c.attacker.arrival = Arrival::Constant;
    c.clients.requests_per_connection = 1;
    c.clients.parallel_connections = 50;
    c.clients.request_rate = 50.0;
    c.clients.start_s = 1.0;
    c
}

/// The proxy limited to `capacity` segments per second, with a Poisson SYN
/// flood. Every request opens its own connection, so each one is an
/// independent trial of getting a handshake and an exchange through.
pub fn capacity_overload(mode: ProxyMode, capacity: u64, syn_rate: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::with_mode(mode);
    c.engine_capacity.ops_per_second = capacity;
    c.attacker.syn_rate = syn_rate;
    c.attacker.arrival = Arrival::Poisson;
    // Without jitter every client event sits on the same microsecond grid as
    // the token refills, and results depend on that phase.
    c.topology.jitter_us = 25;
    c.clients.parallel_connections = 100;
    c.clients.request_rate = 25.0;
    c.clients.requests_per_connection = 1;
    c.clients.request_timeout_ms = 3000;
    c.clients.start_s = 0.5;
    c
}

/// Attack traffic only: SYN, ACK and RST floods and no clients. Ten seconds
/// of it is 10^5 packets.
pub fn pure_attack(mode: ProxyMode) -> ScenarioConfig {
    let mut c = ScenarioConfig::with_mode(mode);
    c.clients.request_rate = 0.0;
    c.attacker.syn_rate = 5000.0;
    c.attacker.ack_rate = 3000.0;
    c.attacker.rst_rate = 2000.0;
    c.attacker.arrival = Arrival::Poisson;
    c
}

/// Short connections over lossy links, for checking what the proxy does
/// to the bytes in flight.
pub fn lossy_transfer(mode: ProxyMode, loss: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::with_mode(mode);
    c.topology.loss = loss;
    c.topology.jitter_us = 10;
    c.clients.parallel_connections = 20;
    c.clients.request_rate = 100.0;
    c.clients.requests_per_connection = 3;
    c.clients.request_bytes = 700;
    c.clients.response_bytes = 3000;
    c.clients.request_timeout_ms = 5000;
    c
}
