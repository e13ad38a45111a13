//! The mitigation state machine.
//!
//! An [`Engine`] is a set of [`Shard`]s plus a router. Each shard owns its
//! whitelist and connection table outright; the router makes sure every
//! segment of a flow (and, for source-ip sharding, every flow of a client)
//! reaches the same shard, so shards never share state.

mod action;
mod auth;
mod config;
mod router;
mod shard;
mod stats;
mod syncookie;

use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cookie::{CookieCodec, CookieKey};
use crate::packet::{checksums_valid, parse_segment, Segment};

pub use action::{Action, ActionList, DropReason, Interface};
pub use auth::tuple_mix;
pub use config::{DataDelayMode, EngineConfig, EngineConfigError, L2Config, ShardKey, Strategy};
pub use router::ShardRouter;
pub use shard::Shard;
pub use stats::EngineStats;
pub use syncookie::{translate_to_client, translate_to_server};

/// Secondary secrets, all derived from the cookie key so that a run is
/// reproducible from that one value.
#[derive(Debug, Clone)]
pub(crate) struct Secrets {
    pub auth_full: u32,
    pub whitelist_index: [u8; 16],
    pub router: [u8; 16],
}

impl Secrets {
    fn derive(key: &CookieKey) -> Self {
        let mut seed = [0u8; 32];
        seed[..16].copy_from_slice(key.as_bytes());
        for (d, s) in seed[16..].iter_mut().zip(key.as_bytes()) {
            *d = s ^ 0x5c;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut whitelist_index = [0u8; 16];
        let mut router = [0u8; 16];
        let auth_full = rng.next_u32();
        rng.fill_bytes(&mut whitelist_index);
        rng.fill_bytes(&mut router);
        Secrets {
            auth_full,
            whitelist_index,
            router,
        }
    }
}

#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    router: ShardRouter,
    shards: Vec<Shard>,
}

impl Engine {
    pub fn new(config: EngineConfig, key: CookieKey) -> Result<Self, EngineConfigError> {
        config.validate()?;
        let codec = CookieCodec::new(key, config.mss_table, config.cookie_window)?;
        let secrets = Secrets::derive(&key);
        let router = ShardRouter::new(
            config.effective_shard_key(),
            config.shard_count,
            secrets.router,
        );
        let shards = (0..config.shard_count)
            .map(|_| Shard::new(config.clone(), codec.clone(), &secrets))
            .collect();
        Ok(Engine {
            config,
            router,
            shards,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn router(&self) -> &ShardRouter {
        &self.router
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    /// For driving shards from separate threads.
    pub fn shards_mut(&mut self) -> &mut [Shard] {
        &mut self.shards
    }

    pub fn shard_of(&self, s: &Segment, ingress: Interface) -> usize {
        self.router.route(&s.key, ingress)
    }

    pub fn process(&mut self, s: Segment, ingress: Interface, now: Duration) -> ActionList {
        let i = self.shard_of(&s, ingress);
        self.shards[i].process(s, ingress, now)
    }

    /// Parses a raw frame and processes it. Frames that do not parse (or
    /// fail checksum validation, when enabled) are dropped and counted on
    /// shard 0.
    pub fn process_frame(&mut self, frame: &[u8], ingress: Interface, now: Duration) -> ActionList {
        let reason = match parse_segment(frame) {
            Ok(s) => {
                if !self.config.validate_checksums || checksums_valid(frame) == Ok(true) {
                    return self.process(s, ingress, now);
                }
                DropReason::BadChecksum
            }
            Err(_) => DropReason::Malformed,
        };
        let out = ActionList::drop(reason);
        let shard = &mut self.shards[0];
        shard.stats.segments_in += 1;
        shard.account(&out);
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

    /// `None` until the engine has seen the clock at least once.
    pub fn next_deadline(&self) -> Option<Duration> {
        self.shards.iter().filter_map(Shard::next_deadline).min()
    }

    pub fn on_timer(&mut self, now: Duration) -> ActionList {
        let mut out = ActionList::new();
        for s in &mut self.shards {
            out.extend(s.on_timer(now));
        }
        out
    }

    pub fn stats(&self) -> EngineStats {
        let mut total = EngineStats::default();
        for s in &self.shards {
            total.merge(s.stats());
        }
        total
    }

    /// Connection-table entries across all shards.
    pub fn conn_entries(&self) -> usize {
        self.shards.iter().map(|s| s.conn_state().len()).sum()
    }

    /// Occupied whitelist slots across all shards.
    pub fn whitelist_entries(&self) -> usize {
        self.shards
            .iter()
            .filter_map(Shard::whitelist)
            .map(|w| w.len())
            .sum()
    }

    pub fn pending_handshakes(&self) -> usize {
        self.shards.iter().map(Shard::pending_handshakes).sum()
    }
}
