//! SYN-cookie proxy: answer handshakes statelessly, then splice the verified
//! client connection onto a fresh server connection and translate sequence
//! numbers for the rest of its life.

use std::time::Duration;

use crate::conn_state::{track_teardown, ConnEntry, Direction};
use crate::cookie::{CookieReject, DEFAULT_MSS};
use crate::packet::{Segment, TcpFlags, TcpOptions};

use super::action::{ActionList, DropReason, Interface};
use super::config::DataDelayMode;
use super::shard::{PendingHandshake, Shard};

/// Client-to-server direction: only the acknowledgment number moves.
pub fn translate_to_server(mut s: Segment, delta: u32) -> Segment {
    s.ack = s.ack.wrapping_add(delta);
    s
}

/// Server-to-client direction: only the sequence number moves.
pub fn translate_to_client(mut s: Segment, delta: u32) -> Segment {
    s.seq = s.seq.wrapping_sub(delta);
    s
}

impl Shard {
    pub(crate) fn syncookie_client(&mut self, s: Segment, now: Duration) -> ActionList {
        if s.has(TcpFlags::SYN) {
            if s.has(TcpFlags::ACK) || s.has(TcpFlags::RST) {
                return ActionList::drop(DropReason::NoState);
            }
            return self.syncookie_syn(&s, now);
        }

        let k = s.key;
        if let Some(e) = self.conns.lookup(&k) {
            if e.is_established() {
                let done = track_teardown(e, &s, Direction::ClientToServer);
                let delta = e.delta;
                if done {
                    self.conns.remove(&k);
                    self.stats.conn_removals += 1;
                }
                return self.forward(translate_to_server(s, delta), Interface::Server);
            }

            if s.has(TcpFlags::RST) {
                self.conns.remove(&k);
                self.pending.remove(&k);
                self.stats.conn_removals += 1;
                let rst = self.generate(
                    k,
                    TcpFlags::RST,
                    s.seq,
                    0,
                    0,
                    TcpOptions::default(),
                    Interface::Server,
                );
                return ActionList::emit(rst, Interface::Server);
            }

            let first_data = self.cfg.data_delay_mode == DataDelayMode::StoreFirstSegment
                && !s.payload.is_empty()
                && !s.has(TcpFlags::FIN)
                && e.pending_data.is_none()
                && self
                    .pending
                    .get(&k)
                    .is_some_and(|p| s.seq == p.syn.seq.wrapping_add(1));
            if first_data {
                e.pending_data = Some(Box::new(s));
                self.stats.pending_stored += 1;
                return ActionList::new();
            }
            return ActionList::drop(DropReason::AwaitingServer);
        }

        if s.has(TcpFlags::ACK) && !s.has(TcpFlags::FIN) && !s.has(TcpFlags::RST) {
            return self.syncookie_ack(s, now);
        }
        ActionList::drop(DropReason::NoState)
    }

    /// Stateless SYN/ACK carrying the cookie.
    pub(crate) fn syncookie_syn(&mut self, s: &Segment, now: Duration) -> ActionList {
        let reply = s.key.reverse();
        let table = *self.codec.table();
        let client_mss = s.options.mss();
        let mss = table.get(table.quantize(client_mss.unwrap_or(DEFAULT_MSS)));
        self.stats.hash_invocations += 1;
        let cookie = self.codec.encode(&reply, now, client_mss);
        let window = match self.cfg.data_delay_mode {
            DataDelayMode::ZeroWindow => 0,
            DataDelayMode::StoreFirstSegment => self.cfg.default_window,
        };
        let synack = self.generate(
            reply,
            TcpFlags::SYN | TcpFlags::ACK,
            cookie,
            s.seq.wrapping_add(1),
            window,
            TcpOptions::with_mss(mss),
            Interface::Client,
        );
        self.stats.synacks_sent += 1;
        ActionList::emit(synack, Interface::Client)
    }

    /// Handshake-completing ACK for a flow with no state: check the cookie
    /// and open the server-side connection.
    fn syncookie_ack(&mut self, s: Segment, now: Duration) -> ActionList {
        let verdict = self.codec.verify(&s.key.reverse(), s.ack, now);
        if verdict != Err(CookieReject::StaleCookie) {
            self.stats.hash_invocations += 1;
        }
        let mss = match verdict {
            Ok(mss) => mss,
            Err(r) => return ActionList::drop(r.into()),
        };

        let k = s.key;
        let mut entry = ConnEntry::awaiting(s.ack.wrapping_sub(1));
        let syn = self.generate(
            k,
            TcpFlags::SYN,
            s.seq.wrapping_sub(1),
            0,
            s.window,
            TcpOptions::with_mss(mss),
            Interface::Server,
        );
        let client_window = s.window;
        if self.cfg.data_delay_mode == DataDelayMode::StoreFirstSegment && !s.payload.is_empty() {
            entry.pending_data = Some(Box::new(s));
            self.stats.pending_stored += 1;
        }
        if self.conns.insert(k, entry).is_err() {
            return ActionList::drop(DropReason::CapacityExceeded);
        }
        self.note_conn_insert();

        let deadline = now + self.cfg.handshake_retransmits[0];
        self.pending.insert(
            k,
            PendingHandshake {
                syn: syn.clone(),
                client_window,
                attempt: 0,
                deadline,
            },
        );
        self.arm_handshake_timer(k, deadline);
        ActionList::emit(syn, Interface::Server)
    }

    pub(crate) fn syncookie_server(&mut self, s: Segment, _now: Duration) -> ActionList {
        let k = s.key.reverse();
        let is_synack = s.has(TcpFlags::SYN | TcpFlags::ACK);
        let Some(e) = self.conns.lookup(&k) else {
            return ActionList::drop(if is_synack {
                DropReason::NoMatchingSplice
            } else {
                DropReason::NoState
            });
        };

        if e.is_established() {
            if s.has(TcpFlags::SYN) {
                if !is_synack {
                    return ActionList::drop(DropReason::NoMatchingSplice);
                }
                // Our handshake ACK was lost and the server retransmitted.
                let ack = self.generate(
                    k,
                    TcpFlags::ACK,
                    s.ack,
                    s.seq.wrapping_add(1),
                    self.cfg.default_window,
                    TcpOptions::default(),
                    Interface::Server,
                );
                return ActionList::emit(ack, Interface::Server);
            }
            let done = track_teardown(e, &s, Direction::ServerToClient);
            let delta = e.delta;
            if done {
                self.conns.remove(&k);
                self.stats.conn_removals += 1;
            }
            return self.forward(translate_to_client(s, delta), Interface::Client);
        }

        if is_synack {
            let expected = self.pending.get(&k).map(|p| p.syn.seq.wrapping_add(1));
            if expected != Some(s.ack) {
                return ActionList::drop(DropReason::NoMatchingSplice);
            }
            let y = e.delta;
            let delta = s.seq.wrapping_sub(y);
            e.delta = delta;
            e.splice_state = crate::conn_state::SpliceState::Established;
            let stored = e.pending_data.take();
            let p = self.pending.remove(&k).expect("checked above");

            let mut out = ActionList::emit(
                self.generate(
                    k,
                    TcpFlags::ACK,
                    s.ack,
                    s.seq.wrapping_add(1),
                    p.client_window,
                    TcpOptions::default(),
                    Interface::Server,
                ),
                Interface::Server,
            );
            match self.cfg.data_delay_mode {
                DataDelayMode::ZeroWindow => {
                    let opts = s
                        .options
                        .mss()
                        .map(TcpOptions::with_mss)
                        .unwrap_or_default();
                    let synack = self.generate(
                        s.key,
                        TcpFlags::SYN | TcpFlags::ACK,
                        y,
                        s.ack,
                        s.window,
                        opts,
                        Interface::Client,
                    );
                    self.stats.synacks_sent += 1;
                    out.push_emit(synack, Interface::Client);
                }
                DataDelayMode::StoreFirstSegment => {
                    if let Some(d) = stored {
                        let mut d = translate_to_server(*d, delta);
                        self.set_l2(&mut d, Interface::Server);
                        self.stats.forwarded += 1;
                        out.push_emit(d, Interface::Server);
                    }
                }
            }
            return out;
        }

        if s.has(TcpFlags::RST) {
            let y = e.delta;
            self.conns.remove(&k);
            self.pending.remove(&k);
            self.stats.conn_removals += 1;
            let rst = self.generate(
                s.key,
                TcpFlags::RST,
                y.wrapping_add(1),
                0,
                0,
                TcpOptions::default(),
                Interface::Client,
            );
            return ActionList::emit(rst, Interface::Client);
        }
        ActionList::drop(DropReason::AwaitingServer)
    }
}
