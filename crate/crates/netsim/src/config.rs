//! Scenario configuration, read from TOML.
//!
//! Every section is optional and falls back to its defaults, except
//! `engine.strategy`, which must always be given (`none` runs without a
//! proxy in front of the server).

use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use synproxy_core::cookie::{CookieKey, MssTable};
use synproxy_core::engine::{DataDelayMode, EngineConfig, ShardKey, Strategy};
use synproxy_core::whitelist::Granularity;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

/// What sits between the clients and the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyMode {
    /// No proxy: segments cross straight to the server.
    None,
    SynCookie,
    AuthFull,
    AuthCookie,
}

impl ProxyMode {
    pub fn strategy(self) -> Option<Strategy> {
        match self {
            ProxyMode::None => None,
            ProxyMode::SynCookie => Some(Strategy::SynCookie),
            ProxyMode::AuthFull => Some(Strategy::AuthFull),
            ProxyMode::AuthCookie => Some(Strategy::AuthCookie),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self.strategy() {
            None => "none",
            Some(s) => s.as_str(),
        }
    }
}

impl From<Strategy> for ProxyMode {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::SynCookie => ProxyMode::SynCookie,
            Strategy::AuthFull => ProxyMode::AuthFull,
            Strategy::AuthCookie => ProxyMode::AuthCookie,
        }
    }
}

impl fmt::Display for ProxyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BacklogPolicy {
    #[default]
    DropNew,
    EvictOldest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Arrival {
    /// Fixed spacing of 1/rate.
    #[default]
    Constant,
    /// Exponentially distributed gaps with mean 1/rate.
    Poisson,
}

/// An IPv4 prefix such as `198.18.0.0/16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prefix {
    pub base: Ipv4Addr,
    pub len: u8,
}

impl Prefix {
    pub fn mask(&self) -> u32 {
        if self.len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(self.len))
        }
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        (u32::from(ip) & self.mask()) == (u32::from(self.base) & self.mask())
    }

    /// Address with the given host bits inside the prefix.
    pub fn host(&self, bits: u32) -> Ipv4Addr {
        Ipv4Addr::from((u32::from(self.base) & self.mask()) | (bits & !self.mask()))
    }
}

impl FromStr for Prefix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ip, len) = s
            .split_once('/')
            .ok_or_else(|| format!("{s:?} is not of the form a.b.c.d/len"))?;
        let base: Ipv4Addr = ip.parse().map_err(|e| format!("{ip:?}: {e}"))?;
        let len: u8 = len.parse().map_err(|e| format!("{len:?}: {e}"))?;
        if len > 32 {
            return Err(format!("prefix length {len} exceeds 32"));
        }
        Ok(Prefix { base, len })
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.len)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub client_proxy_delay_us: u64,
    pub proxy_server_delay_us: u64,
    /// Uniform jitter of up to this many microseconds either way.
    pub jitter_us: u64,
    /// Independent loss probability on every link.
    pub loss: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            client_proxy_delay_us: 50,
            proxy_server_delay_us: 50,
            jitter_us: 0,
            loss: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub parallel_connections: usize,
    /// Requests per second across the whole fleet.
    pub request_rate: f64,
    pub request_bytes: usize,
    pub response_bytes: usize,
    pub request_timeout_ms: u64,
    pub start_s: f64,
    /// When to stop issuing requests; the run length if unset.
    pub stop_s: Option<f64>,
    /// Close and reopen a connection after this many requests; 0 keeps
    /// connections open for the whole run.
    pub requests_per_connection: u32,
    pub data_rto_ms: u64,
    pub max_retransmits: u32,
    /// Delays between SYN transmissions; the last entry is the wait after
    /// the final SYN before giving up.
    pub syn_retransmit_s: Vec<f64>,
    /// How many times a reset connection attempt is retried at once.
    pub rst_retries: u32,
    pub mss: u16,
    pub window: u16,
    pub client_prefix: String,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            parallel_connections: 100,
            request_rate: 100.0,
            request_bytes: 128,
            response_bytes: 1024,
            request_timeout_ms: 1000,
            start_s: 0.5,
            stop_s: None,
            requests_per_connection: 0,
            data_rto_ms: 200,
            max_retransmits: 6,
            syn_retransmit_s: vec![1.0, 2.0, 4.0, 8.0],
            rst_retries: 3,
            mss: 1460,
            window: 65_535,
            client_prefix: "10.1.0.0/16".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerConfig {
    pub syn_rate: f64,
    pub ack_rate: f64,
    pub rst_rate: f64,
    pub arrival: Arrival,
    pub spoof_prefix: String,
    pub start_s: f64,
    pub stop_s: Option<f64>,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            syn_rate: 0.0,
            ack_rate: 0.0,
            rst_rate: 0.0,
            arrival: Arrival::Constant,
            spoof_prefix: "198.18.0.0/16".into(),
            start_s: 0.0,
            stop_s: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub backlog: usize,
    pub backlog_policy: BacklogPolicy,
    pub synack_retries: u32,
    /// First SYN/ACK retransmission timeout; doubles after each retry.
    pub synack_timeout_ms: u64,
    pub service_time_us: u64,
    pub data_rto_ms: u64,
    pub max_retransmits: u32,
    pub mss: u16,
    pub window: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            backlog: 256,
            backlog_policy: BacklogPolicy::DropNew,
            synack_retries: 5,
            synack_timeout_ms: 1000,
            service_time_us: 20,
            data_rto_ms: 200,
            max_retransmits: 6,
            mss: 1460,
            window: 65_535,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CapacityConfig {
    /// Segments the proxy can process per second; 0 means unlimited.
    pub ops_per_second: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub strategy: Option<ProxyMode>,
    pub data_delay_mode: DataDelayMode,
    pub shard_count: usize,
    pub shard_key: Option<ShardKey>,
    pub batch_size: usize,
    pub handshake_retransmit_s: Vec<f64>,
    pub validate_checksums: bool,
    pub default_window: u16,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        EngineSection {
            strategy: None,
            data_delay_mode: e.data_delay_mode,
            shard_count: e.shard_count,
            shard_key: None,
            batch_size: e.batch_size,
            handshake_retransmit_s: e
                .handshake_retransmits
                .iter()
                .map(Duration::as_secs_f64)
                .collect(),
            validate_checksums: e.validate_checksums,
            default_window: e.default_window,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CookieSection {
    /// 32 hex digits; derived from the seed when absent.
    pub key: Option<String>,
    pub window: u8,
    pub mss_table: Vec<u16>,
}

impl Default for CookieSection {
    fn default() -> Self {
        CookieSection {
            key: None,
            window: 1,
            mss_table: MssTable::default().values().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhitelistSection {
    pub granularity: Granularity,
    pub mask_bits: u8,
    pub sweep_period_s: f64,
}

impl Default for WhitelistSection {
    fn default() -> Self {
        WhitelistSection {
            granularity: Granularity::SourceIp,
            mask_bits: 20,
            sweep_period_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnSection {
    pub capacity: usize,
    pub swap_period_s: f64,
}

impl Default for ConnSection {
    fn default() -> Self {
        ConnSection {
            capacity: synproxy_core::conn_state::DEFAULT_CAPACITY,
            swap_period_s: synproxy_core::conn_state::DEFAULT_SWAP_PERIOD.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub topology: TopologyConfig,
    pub clients: ClientConfig,
    pub attacker: AttackerConfig,
    pub server: ServerConfig,
    pub engine_capacity: CapacityConfig,
    pub engine: EngineSection,
    pub cookie: CookieSection,
    pub whitelist: WhitelistSection,
    pub conn: ConnSection,
}

pub(crate) fn secs_to_us(s: f64) -> u64 {
    (s * 1e6).round() as u64
}

fn duration(key: &'static str, s: f64) -> Result<Duration, ConfigError> {
    if !s.is_finite() || s < 0.0 {
        return Err(invalid(
            key,
            format!("{s} is not a non-negative number of seconds"),
        ));
    }
    Ok(Duration::from_secs_f64(s))
}

fn rate(key: &'static str, r: f64) -> Result<(), ConfigError> {
    if !r.is_finite() || r < 0.0 {
        return Err(invalid(key, format!("{r} is not a non-negative rate")));
    }
    Ok(())
}

impl ScenarioConfig {
    /// A default scenario with the given proxy in front of the server.
    pub fn with_mode(mode: ProxyMode) -> Self {
        let mut c = ScenarioConfig::default();
        c.engine.strategy = Some(mode);
        c
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn mode(&self) -> Result<ProxyMode, ConfigError> {
        self.engine
            .strategy
            .ok_or(ConfigError::Missing("engine.strategy"))
    }

    pub fn spoof_prefix(&self) -> Result<Prefix, ConfigError> {
        self.attacker
            .spoof_prefix
            .parse()
            .map_err(|e| invalid("attacker.spoof_prefix", e))
    }

    pub fn client_prefix(&self) -> Result<Prefix, ConfigError> {
        self.clients
            .client_prefix
            .parse()
            .map_err(|e| invalid("clients.client_prefix", e))
    }

    /// The cookie key: the configured one, or one derived from `seed`.
    pub fn cookie_key(&self, seed: u64) -> Result<CookieKey, ConfigError> {
        match &self.cookie.key {
            Some(hex) => CookieKey::from_hex(hex).map_err(|e| invalid("cookie.key", e.to_string())),
            None => Ok(CookieKey::from_seed(seed)),
        }
    }

    /// Engine settings, or `None` when no proxy is configured.
    pub fn engine_config(&self) -> Result<Option<EngineConfig>, ConfigError> {
        let Some(strategy) = self.mode()?.strategy() else {
            return Ok(None);
        };
        let e = &self.engine;
        let mss_table = MssTable::from_slice(&self.cookie.mss_table)
            .map_err(|err| invalid("cookie.mss_table", err.to_string()))?;
        let handshake_retransmits = e
            .handshake_retransmit_s
            .iter()
            .map(|&s| duration("engine.handshake_retransmit_s", s))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = EngineConfig {
            strategy,
            data_delay_mode: e.data_delay_mode,
            cookie_window: self.cookie.window,
            mss_table,
            shard_count: e.shard_count,
            shard_key: e.shard_key,
            batch_size: e.batch_size,
            whitelist_granularity: self.whitelist.granularity,
            whitelist_mask_bits: self.whitelist.mask_bits,
            whitelist_sweep_period: duration(
                "whitelist.sweep_period_s",
                self.whitelist.sweep_period_s,
            )?,
            conn_capacity: self.conn.capacity,
            conn_swap_period: duration("conn.swap_period_s", self.conn.swap_period_s)?,
            default_window: e.default_window,
            handshake_retransmits,
            validate_checksums: e.validate_checksums,
            ..EngineConfig::default()
        };
        cfg.validate()
            .map_err(|err| invalid("engine", err.to_string()))?;
        Ok(Some(cfg))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mode()?;
        let t = &self.topology;
        if !(0.0..=1.0).contains(&t.loss) {
            return Err(invalid(
                "topology.loss",
                format!("{} is not a probability", t.loss),
            ));
        }
        let c = &self.clients;
        rate("clients.request_rate", c.request_rate)?;
        duration("clients.start_s", c.start_s)?;
        if let Some(s) = c.stop_s {
            duration("clients.stop_s", s)?;
        }
        if c.request_rate > 0.0 && c.parallel_connections == 0 {
            return Err(invalid(
                "clients.parallel_connections",
                "must be at least 1",
            ));
        }
        if c.request_bytes == 0 {
            return Err(invalid("clients.request_bytes", "must be at least 1"));
        }
        if c.response_bytes == 0 {
            return Err(invalid("clients.response_bytes", "must be at least 1"));
        }
        if c.syn_retransmit_s.is_empty() {
            return Err(invalid("clients.syn_retransmit_s", "must not be empty"));
        }
        for &s in &c.syn_retransmit_s {
            duration("clients.syn_retransmit_s", s)?;
        }
        if c.data_rto_ms == 0 {
            return Err(invalid("clients.data_rto_ms", "must be greater than zero"));
        }
        if c.mss == 0 {
            return Err(invalid("clients.mss", "must be greater than zero"));
        }
        let prefix = self.client_prefix()?;
        if (c.parallel_connections as u64) >= (1u64 << (32 - u32::from(prefix.len))) {
            return Err(invalid(
                "clients.parallel_connections",
                format!("does not fit in {prefix}"),
            ));
        }

        let a = &self.attacker;
        rate("attacker.syn_rate", a.syn_rate)?;
        rate("attacker.ack_rate", a.ack_rate)?;
        rate("attacker.rst_rate", a.rst_rate)?;
        duration("attacker.start_s", a.start_s)?;
        if let Some(s) = a.stop_s {
            duration("attacker.stop_s", s)?;
        }
        let spoof = self.spoof_prefix()?;
        if spoof.contains(prefix.base) || prefix.contains(spoof.base) {
            return Err(invalid(
                "attacker.spoof_prefix",
                format!("{spoof} overlaps the client prefix {prefix}"),
            ));
        }

        let s = &self.server;
        if s.backlog == 0 {
            return Err(invalid("server.backlog", "must be at least 1"));
        }
        if s.synack_timeout_ms == 0 {
            return Err(invalid(
                "server.synack_timeout_ms",
                "must be greater than zero",
            ));
        }
        if s.data_rto_ms == 0 {
            return Err(invalid("server.data_rto_ms", "must be greater than zero"));
        }
        if s.mss == 0 {
            return Err(invalid("server.mss", "must be greater than zero"));
        }
        self.cookie_key(0)?;
        self.engine_config()?;
        Ok(())
    }
}
