//! Seeded discrete-event network simulator: a client fleet, a spoofing
//! attacker, the mitigation proxy and a backlog-limited server, joined by
//! delay/jitter/loss links. The same seed and config always give the same
//! report.

pub mod attacker;
pub mod client;
pub mod config;
pub mod event;
pub mod link;
pub mod metrics;
pub mod proxy;
pub mod scenarios;
pub mod server;
pub mod sim;
pub mod tcp;

pub use config::{Arrival, BacklogPolicy, ConfigError, Prefix, ProxyMode, ScenarioConfig};
pub use metrics::{MetricsReport, Value};
pub use sim::{run_scenario, Simulation, StreamPair};
