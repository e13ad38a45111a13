//! SYN authentication: make every new source complete one decoy handshake,
//! reset it, and whitelist the source so its retry goes straight through.

use std::time::Duration;

use crate::cookie::{CookieReject, DEFAULT_MSS};
use crate::packet::{FlowKey, Segment, TcpFlags, TcpOptions};

use super::action::{ActionList, DropReason, Interface};
use super::config::Strategy;
use super::shard::Shard;

/// Cheap tuple mix for the keyless decoy ISN. Deliberately not a keyed hash.
pub fn tuple_mix(k: &FlowKey) -> u32 {
    let ips = (u64::from(u32::from(k.src_ip)) << 32) | u64::from(u32::from(k.dst_ip));
    let ports = (u64::from(k.src_port) << 16) | u64::from(k.dst_port);
    let mut x = ips ^ ports.rotate_left(23);
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x as u32
}

impl Shard {
    pub(crate) fn auth_client(&mut self, s: Segment, now: Duration) -> ActionList {
        let wl = self.whitelist.as_mut().expect("auth shard has a whitelist");
        self.stats.whitelist_lookups += 1;
        if wl.check(&s.key) {
            return self.forward(s, Interface::Server);
        }
        let syn = s.has(TcpFlags::SYN);
        let ack = s.has(TcpFlags::ACK);
        let rst = s.has(TcpFlags::RST);
        if syn && !ack && !rst {
            return self.auth_syn(&s, now);
        }
        if ack && !syn && !rst && !s.has(TcpFlags::FIN) {
            return self.auth_ack(&s, now);
        }
        ActionList::drop(DropReason::NotWhitelisted)
    }

    /// Decoy SYN/ACK. Zero window: the client has nothing useful to send on
    /// this connection, which is reset as soon as it completes.
    fn auth_syn(&mut self, s: &Segment, now: Duration) -> ActionList {
        let reply = s.key.reverse();
        let table = *self.codec.table();
        let client_mss = s.options.mss();
        let mss = table.get(table.quantize(client_mss.unwrap_or(DEFAULT_MSS)));
        let isn = match self.cfg.strategy {
            Strategy::AuthCookie => {
                self.stats.hash_invocations += 1;
                self.codec.encode(&reply, now, client_mss)
            }
            _ => self.auth_secret ^ tuple_mix(&reply),
        };
        let synack = self.generate(
            reply,
            TcpFlags::SYN | TcpFlags::ACK,
            isn,
            s.seq.wrapping_add(1),
            0,
            TcpOptions::with_mss(mss),
            Interface::Client,
        );
        self.stats.synacks_sent += 1;
        ActionList::emit(synack, Interface::Client)
    }

    fn auth_ack(&mut self, s: &Segment, now: Duration) -> ActionList {
        if self.cfg.strategy == Strategy::AuthCookie {
            let verdict = self.codec.verify(&s.key.reverse(), s.ack, now);
            if verdict != Err(CookieReject::StaleCookie) {
                self.stats.hash_invocations += 1;
            }
            if let Err(r) = verdict {
                return ActionList::drop(r.into());
            }
        }
        self.whitelist
            .as_mut()
            .expect("auth shard has a whitelist")
            .admit(&s.key);
        self.stats.whitelist_admits += 1;
        let rst = self.generate(
            s.key.reverse(),
            TcpFlags::RST,
            s.ack,
            0,
            0,
            TcpOptions::default(),
            Interface::Client,
        );
        ActionList::emit(rst, Interface::Client)
    }
}
