use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cookie::{CookieConfigError, MssTable};
use crate::packet::{MacAddr, DEFAULT_MTU};
use crate::whitelist::Granularity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    SynCookie,
    AuthFull,
    AuthCookie,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::SynCookie,
        Strategy::AuthFull,
        Strategy::AuthCookie,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::SynCookie => "syn-cookie",
            Strategy::AuthFull => "auth-full",
            Strategy::AuthCookie => "auth-cookie",
        }
    }

    pub fn is_auth(&self) -> bool {
        !matches!(self, Strategy::SynCookie)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "syn-cookie" | "syncookie" => Ok(Strategy::SynCookie),
            "auth-full" | "authfull" => Ok(Strategy::AuthFull),
            "auth-cookie" | "authcookie" => Ok(Strategy::AuthCookie),
            _ => Err(format!(
                "unknown strategy {s:?} (expected syn-cookie, auth-full or auth-cookie)"
            )),
        }
    }
}

/// How the SYN-cookie proxy keeps the client from sending data before the
/// server-side handshake is done.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataDelayMode {
    /// Advertise a zero window, then re-send the SYN/ACK with the server's
    /// window once the splice is complete.
    #[default]
    ZeroWindow,
    /// Advertise a normal window and buffer the first data segment.
    StoreFirstSegment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShardKey {
    #[serde(rename = "source-ip")]
    SourceIp,
    #[serde(rename = "4-tuple")]
    FourTuple,
}

/// Static MAC table, one entry per side of the proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct L2Config {
    /// Next hop on the client side.
    pub client_neighbor: MacAddr,
    /// The proxy's own address on the client-facing port.
    pub proxy_client_port: MacAddr,
    pub proxy_server_port: MacAddr,
    pub server_neighbor: MacAddr,
}

impl Default for L2Config {
    fn default() -> Self {
        L2Config {
            client_neighbor: MacAddr::new(0x02, 0, 0, 0, 0, 0x01),
            proxy_client_port: MacAddr::new(0x02, 0, 0, 0, 0, 0x10),
            proxy_server_port: MacAddr::new(0x02, 0, 0, 0, 0, 0x20),
            server_neighbor: MacAddr::new(0x02, 0, 0, 0, 0, 0x02),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub strategy: Strategy,
    pub data_delay_mode: DataDelayMode,
    pub cookie_window: u8,
    pub mss_table: MssTable,
    pub shard_count: usize,
    /// `None` picks the key the strategy requires.
    pub shard_key: Option<ShardKey>,
    pub batch_size: usize,
    pub whitelist_granularity: Granularity,
    pub whitelist_mask_bits: u8,
    pub whitelist_sweep_period: Duration,
    pub conn_capacity: usize,
    pub conn_swap_period: Duration,
    /// Window advertised in locally generated segments.
    pub default_window: u16,
    /// Delays between retransmissions of the proxy's SYN to the server. The
    /// last entry is how long to wait after the final attempt before giving up.
    pub handshake_retransmits: Vec<Duration>,
    pub validate_checksums: bool,
    pub mtu: usize,
    pub l2: L2Config,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            strategy: Strategy::SynCookie,
            data_delay_mode: DataDelayMode::default(),
            cookie_window: 1,
            mss_table: MssTable::default(),
            shard_count: 1,
            shard_key: None,
            batch_size: 64,
            whitelist_granularity: Granularity::SourceIp,
            whitelist_mask_bits: 20,
            whitelist_sweep_period: Duration::from_secs(60),
            conn_capacity: crate::conn_state::DEFAULT_CAPACITY,
            conn_swap_period: crate::conn_state::DEFAULT_SWAP_PERIOD,
            default_window: 65_535,
            handshake_retransmits: [1, 2, 4, 8].map(Duration::from_secs).to_vec(),
            validate_checksums: false,
            mtu: DEFAULT_MTU,
            l2: L2Config::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineConfigError {
    #[error("engine.shard_count must be at least 1")]
    NoShards,
    #[error("engine.batch_size must be at least 1")]
    ZeroBatch,
    #[error("engine.shard_key: {strategy} with this whitelist granularity requires {required}")]
    ShardKeyMismatch {
        strategy: Strategy,
        required: &'static str,
    },
    #[error(transparent)]
    Cookie(#[from] CookieConfigError),
    #[error("whitelist.mask_bits must be between 1 and 32, got {0}")]
    MaskBits(u8),
    #[error("{0} must be greater than zero")]
    ZeroPeriod(&'static str),
    #[error("engine.handshake_retransmits must not be empty")]
    NoHandshakeTimeout,
}

impl EngineConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        EngineConfig {
            strategy,
            ..Default::default()
        }
    }

    /// The shard key in effect: the configured one, or the one the strategy
    /// requires.
    pub fn effective_shard_key(&self) -> ShardKey {
        self.shard_key.unwrap_or(match self.strategy {
            Strategy::SynCookie => ShardKey::FourTuple,
            _ if self.whitelist_granularity == Granularity::SourceIp => ShardKey::SourceIp,
            _ => ShardKey::FourTuple,
        })
    }

    pub fn validate(&self) -> Result<(), EngineConfigError> {
        if self.shard_count == 0 {
            return Err(EngineConfigError::NoShards);
        }
        if self.batch_size == 0 {
            return Err(EngineConfigError::ZeroBatch);
        }
        if self.cookie_window > crate::cookie::MAX_WINDOW {
            return Err(CookieConfigError::BadWindow(self.cookie_window).into());
        }
        if !(1..=32).contains(&self.whitelist_mask_bits) {
            return Err(EngineConfigError::MaskBits(self.whitelist_mask_bits));
        }
        if self.whitelist_sweep_period.is_zero() {
            return Err(EngineConfigError::ZeroPeriod("whitelist.sweep_period_s"));
        }
        if self.conn_swap_period.is_zero() {
            return Err(EngineConfigError::ZeroPeriod("conn.swap_period_s"));
        }
        if self.handshake_retransmits.is_empty() {
            return Err(EngineConfigError::NoHandshakeTimeout);
        }
        // Per-flow whitelisting under an auth strategy can be sharded either
        // way, since both directions and the whitelist slot live with the flow.
        let key = self.effective_shard_key();
        let required = match self.strategy {
            Strategy::SynCookie => Some(ShardKey::FourTuple),
            _ if self.whitelist_granularity == Granularity::SourceIp => Some(ShardKey::SourceIp),
            _ => None,
        };
        match required {
            Some(r) if r != key => Err(EngineConfigError::ShardKeyMismatch {
                strategy: self.strategy,
                required: match r {
                    ShardKey::SourceIp => "source-ip",
                    ShardKey::FourTuple => "4-tuple",
                },
            }),
            _ => Ok(()),
        }
    }
}
