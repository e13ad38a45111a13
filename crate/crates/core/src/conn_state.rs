//! Per-flow splice state for the SYN-cookie proxy.
//!
//! Entries live in a pair of hash maps. Inserts go to `active`; a periodic
//! [`SwapMaps::swap`] retires `history` and demotes `active` to `history`.
//! A lookup that hits `history` moves the entry back up, so anything touched
//! at least once per period survives and anything idle for two periods is
//! gone without a per-entry timer.

use std::collections::HashMap;
use std::time::Duration;

use thiserror::Error;

use crate::packet::{FlowKey, Segment, TcpFlags};

pub const DEFAULT_CAPACITY: usize = 1 << 20;
pub const DEFAULT_SWAP_PERIOD: Duration = Duration::from_secs(60);

const TAG_BITS: u32 = 13;
const TAG_MASK: u32 = (1 << TAG_BITS) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SpliceState {
    /// Cookie verified, SYN sent to the server, waiting for its SYN/ACK.
    #[default]
    AwaitingServerHandshake,
    Established,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConnEntry {
    /// `server_isn - proxy_isn` once established. While awaiting the server
    /// handshake it holds the proxy ISN (the cookie) instead, which is all
    /// that is needed to compute the delta when the SYN/ACK arrives.
    pub delta: u32,
    pub splice_state: SpliceState,
    pub fin_client_seen: bool,
    pub fin_client_acked: bool,
    pub fin_server_seen: bool,
    pub fin_server_acked: bool,
    pub rst_seen: bool,
    /// Low 13 bits of the sequence number that acknowledges the client FIN.
    fin_client_tag: u16,
    /// Same for the server FIN, in the server's sequence space.
    fin_server_tag: u16,
    pub pending_data: Option<Box<Segment>>,
}

impl ConnEntry {
    pub fn awaiting(proxy_isn: u32) -> Self {
        ConnEntry {
            delta: proxy_isn,
            ..Default::default()
        }
    }

    pub fn established(delta: u32) -> Self {
        ConnEntry {
            delta,
            splice_state: SpliceState::Established,
            ..Default::default()
        }
    }

    pub fn is_established(&self) -> bool {
        self.splice_state == SpliceState::Established
    }

    /// Everything except `pending_data`, in one word:
    /// delta (32) | state (1) | five flags (5) | two FIN tags (13 + 13).
    pub fn pack(&self) -> u64 {
        let flags = [
            self.splice_state == SpliceState::Established,
            self.fin_client_seen,
            self.fin_client_acked,
            self.fin_server_seen,
            self.fin_server_acked,
            self.rst_seen,
        ];
        let mut v = u64::from(self.delta);
        for (i, f) in flags.iter().enumerate() {
            v |= u64::from(*f) << (32 + i);
        }
        v |= u64::from(self.fin_client_tag) << 38;
        v |= u64::from(self.fin_server_tag) << (38 + TAG_BITS);
        v
    }

    pub fn unpack(v: u64) -> Self {
        let bit = |i: u32| (v >> (32 + i)) & 1 == 1;
        ConnEntry {
            delta: v as u32,
            splice_state: if bit(0) {
                SpliceState::Established
            } else {
                SpliceState::AwaitingServerHandshake
            },
            fin_client_seen: bit(1),
            fin_client_acked: bit(2),
            fin_server_seen: bit(3),
            fin_server_acked: bit(4),
            rst_seen: bit(5),
            fin_client_tag: ((v >> 38) as u32 & TAG_MASK) as u16,
            fin_server_tag: ((v >> (38 + TAG_BITS)) as u32 & TAG_MASK) as u16,
            pending_data: None,
        }
    }

    fn closed(&self) -> bool {
        self.fin_client_seen
            && self.fin_client_acked
            && self.fin_server_seen
            && self.fin_server_acked
    }
}

fn tag(v: u32) -> u16 {
    (v & TAG_MASK) as u16
}

/// Updates teardown bits for one segment of an established flow and reports
/// whether the connection is over.
///
/// A FIN is considered acknowledged only by an ACK for exactly the byte after
/// it (compared on 13 bits). Anything else leaves the bits alone; idle
/// entries are eventually collected by the map swap.
pub fn track_teardown(e: &mut ConnEntry, s: &Segment, dir: Direction) -> bool {
    if s.has(TcpFlags::RST) {
        e.rst_seen = true;
        return true;
    }
    match dir {
        Direction::ClientToServer => {
            if s.has(TcpFlags::ACK)
                && e.fin_server_seen
                && tag(s.ack.wrapping_add(e.delta)) == e.fin_server_tag
            {
                e.fin_server_acked = true;
            }
            if s.has(TcpFlags::FIN) {
                e.fin_client_seen = true;
                e.fin_client_tag = tag(s.seq.wrapping_add(s.seq_len()));
            }
        }
        Direction::ServerToClient => {
            if s.has(TcpFlags::ACK) && e.fin_client_seen && tag(s.ack) == e.fin_client_tag {
                e.fin_client_acked = true;
            }
            if s.has(TcpFlags::FIN) {
                e.fin_server_seen = true;
                e.fin_server_tag = tag(s.seq.wrapping_add(s.seq_len()));
            }
        }
    }
    e.closed()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConnStateError {
    #[error("connection table full ({0} entries)")]
    CapacityExceeded(usize),
}

#[derive(Debug, Clone)]
pub struct SwapMaps {
    active: HashMap<FlowKey, ConnEntry>,
    history: HashMap<FlowKey, ConnEntry>,
    capacity: usize,
    swap_period: Duration,
}

impl Default for SwapMaps {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY, DEFAULT_SWAP_PERIOD)
    }
}

impl SwapMaps {
    pub fn new(capacity: usize, swap_period: Duration) -> Self {
        SwapMaps {
            active: HashMap::new(),
            history: HashMap::new(),
            capacity,
            swap_period,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn swap_period(&self) -> Duration {
        self.swap_period
    }

    /// Entries across both maps.
    pub fn len(&self) -> usize {
        self.active.len() + self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn active_len(&self) -> usize {
        self.active.len()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn in_active(&self, k: &FlowKey) -> bool {
        self.active.contains_key(k)
    }

    pub fn in_history(&self, k: &FlowKey) -> bool {
        self.history.contains_key(k)
    }

    pub fn insert(&mut self, k: FlowKey, e: ConnEntry) -> Result<(), ConnStateError> {
        if !self.active.contains_key(&k)
            && self.history.remove(&k).is_none()
            && self.len() >= self.capacity
        {
            return Err(ConnStateError::CapacityExceeded(self.capacity));
        }
        self.active.insert(k, e);
        Ok(())
    }

    /// Finds `k`, promoting it from `history` to `active` if needed.
    pub fn lookup(&mut self, k: &FlowKey) -> Option<&mut ConnEntry> {
        if !self.active.contains_key(k) {
            let e = self.history.remove(k)?;
            self.active.insert(*k, e);
        }
        self.active.get_mut(k)
    }

    /// Lookup without promotion.
    pub fn peek(&self, k: &FlowKey) -> Option<&ConnEntry> {
        self.active.get(k).or_else(|| self.history.get(k))
    }

    pub fn remove(&mut self, k: &FlowKey) -> bool {
        let a = self.active.remove(k).is_some();
        let h = self.history.remove(k).is_some();
        a || h
    }

    /// Drops `history`, demotes `active`; returns the number dropped.
    pub fn swap(&mut self) -> usize {
        let dropped = self.history.len();
        self.history = std::mem::take(&mut self.active);
        dropped
    }
}
