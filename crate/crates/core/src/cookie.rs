//! SYN cookies.
//!
//! A cookie is the 32-bit initial sequence number the proxy hands to a
//! client in its SYN/ACK. It packs three fields:
//!
//! ```text
//!  31     27 26  24 23                                0
//! +---------+------+-----------------------------------+
//! |   t5    | mss  |              hash24               |
//! +---------+------+-----------------------------------+
//! ```
//!
//! * `t5`: the 64-second clock tick, modulo 32.
//! * `mss`: index into an 8-entry [`MssTable`].
//! * `hash24`: low 24 bits of SipHash-2-4 over the 4-tuple and `t5`.
//!
//! The client echoes `cookie + 1` as the acknowledgment number of its final
//! handshake ACK; [`verify_cookie`] recovers and checks it without any
//! per-connection state.

use std::fmt;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::packet::FlowKey;
use crate::siphash::SipKey;

/// Seconds per timestamp tick.
pub const TICK_SECONDS: u64 = 64;
/// Ticks wrap after this many values (5 bits).
pub const TICK_MODULUS: u64 = 32;
/// MSS assumed when the client sends no MSS option.
pub const DEFAULT_MSS: u16 = 536;
/// Largest supported verification window, in ticks.
pub const MAX_WINDOW: u8 = 3;

const HASH24_MASK: u32 = 0x00ff_ffff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum CookieReject {
    #[error("cookie timestamp outside the verification window")]
    StaleCookie,
    #[error("cookie hash mismatch")]
    BadHash,
}

impl CookieReject {
    pub fn as_str(&self) -> &'static str {
        match self {
            CookieReject::StaleCookie => "StaleCookie",
            CookieReject::BadHash => "BadHash",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CookieConfigError {
    #[error("cookie key must be 32 hex characters")]
    BadKey,
    #[error("MSS table must hold 8 strictly increasing values in [536, 65495]")]
    BadMssTable,
    #[error("cookie window must be between 0 and 3 ticks, got {0}")]
    BadWindow(u8),
}

/// 128-bit secret for cookie hashing.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct CookieKey {
    bytes: [u8; 16],
    sip: SipKey,
}

impl CookieKey {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        CookieKey {
            bytes,
            sip: SipKey::from_bytes(&bytes),
        }
    }

    /// Deterministic key for reproducible runs.
    pub fn from_seed(seed: u64) -> Self {
        let mut bytes = [0u8; 16];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
        Self::from_bytes(bytes)
    }

    /// Fresh key from OS entropy.
    pub fn random() -> Self {
        let mut bytes = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        Self::from_bytes(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, CookieConfigError> {
        let s = s.trim();
        if s.len() != 32 || !s.is_ascii() {
            return Err(CookieConfigError::BadKey);
        }
        let mut bytes = [0u8; 16];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| CookieConfigError::BadKey)?;
        }
        Ok(Self::from_bytes(bytes))
    }

    pub fn to_hex(&self) -> String {
        self.bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.bytes
    }

    pub(crate) fn sip(&self) -> &SipKey {
        &self.sip
    }
}

impl fmt::Debug for CookieKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CookieKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cookie {
    t5: u8,
    mss_idx: u8,
    hash24: u32,
}

impl Cookie {
    /// `None` if a field exceeds its width (5, 3 and 24 bits).
    pub fn new(t5: u8, mss_idx: u8, hash24: u32) -> Option<Self> {
        (t5 < 32 && mss_idx < 8 && hash24 <= HASH24_MASK).then_some(Cookie {
            t5,
            mss_idx,
            hash24,
        })
    }

    pub fn t5(&self) -> u8 {
        self.t5
    }

    pub fn mss_idx(&self) -> u8 {
        self.mss_idx
    }

    pub fn hash24(&self) -> u32 {
        self.hash24
    }

    pub fn pack(&self) -> u32 {
        (u32::from(self.t5) << 27) | (u32::from(self.mss_idx) << 24) | self.hash24
    }

    pub fn unpack(v: u32) -> Self {
        Cookie {
            t5: (v >> 27) as u8,
            mss_idx: ((v >> 24) & 0x7) as u8,
            hash24: v & HASH24_MASK,
        }
    }
}

/// Eight MSS values a cookie can encode, strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MssTable([u16; 8]);

impl Default for MssTable {
    fn default() -> Self {
        MssTable([536, 1220, 1300, 1440, 1460, 4096, 8960, 9000])
    }
}

impl MssTable {
    pub fn new(values: [u16; 8]) -> Result<Self, CookieConfigError> {
        let in_range = values.iter().all(|v| (536..=65495).contains(v));
        let increasing = values.windows(2).all(|w| w[0] < w[1]);
        if in_range && increasing {
            Ok(MssTable(values))
        } else {
            Err(CookieConfigError::BadMssTable)
        }
    }

    pub fn from_slice(values: &[u16]) -> Result<Self, CookieConfigError> {
        let arr: [u16; 8] = values
            .try_into()
            .map_err(|_| CookieConfigError::BadMssTable)?;
        Self::new(arr)
    }

    pub fn values(&self) -> &[u16; 8] {
        &self.0
    }

    pub fn get(&self, idx: u8) -> u16 {
        self.0[usize::from(idx & 0x7)]
    }

    /// Largest index whose value does not exceed `mss`; index 0 when `mss`
    /// is below the whole table.
    pub fn quantize(&self, mss: u16) -> u8 {
        self.0.iter().rposition(|&v| v <= mss).unwrap_or(0) as u8
    }
}

pub fn quantize_mss(mss: u16, table: &MssTable) -> u8 {
    table.quantize(mss)
}

/// Absolute 64-second tick count since the clock origin.
fn abs_tick(now: Duration) -> u64 {
    now.as_secs() / TICK_SECONDS
}

/// `floor(now / 64) mod 32`.
pub fn tick(now: Duration) -> u8 {
    (abs_tick(now) % TICK_MODULUS) as u8
}

/// The 13-byte hash input: 4-tuple then `t5`, big-endian.
pub fn hash_input(k: &FlowKey, t5: u8) -> [u8; 13] {
    let mut msg = [0u8; 13];
    msg[..12].copy_from_slice(&k.to_bytes());
    msg[12] = t5;
    msg
}

pub fn compute_hash24(key: &CookieKey, k: &FlowKey, t5: u8) -> u32 {
    (key.sip().hash(&hash_input(k, t5)) as u32) & HASH24_MASK
}

pub fn encode_cookie(
    key: &CookieKey,
    k: &FlowKey,
    now: Duration,
    client_mss: Option<u16>,
    table: &MssTable,
) -> u32 {
    let t5 = tick(now);
    Cookie {
        t5,
        mss_idx: table.quantize(client_mss.unwrap_or(DEFAULT_MSS)),
        hash24: compute_hash24(key, k, t5),
    }
    .pack()
}

/// Checks the acknowledgment number of a handshake-completing ACK.
///
/// `k` must be the same tuple the cookie was encoded for. Returns the MSS
/// recovered from the cookie.
pub fn verify_cookie(
    key: &CookieKey,
    k: &FlowKey,
    ack: u32,
    now: Duration,
    window: u8,
    table: &MssTable,
) -> Result<u16, CookieReject> {
    let cookie = Cookie::unpack(ack.wrapping_sub(1));
    let now_tick = abs_tick(now);
    let max_age = u64::from(window).min(TICK_MODULUS - 1);
    let fresh = (0..=max_age)
        .filter_map(|age| now_tick.checked_sub(age))
        .any(|t| (t % TICK_MODULUS) as u8 == cookie.t5);
    if !fresh {
        return Err(CookieReject::StaleCookie);
    }
    if compute_hash24(key, k, cookie.t5) != cookie.hash24 {
        return Err(CookieReject::BadHash);
    }
    Ok(table.get(cookie.mss_idx))
}

/// Key, MSS table and window bundled for repeated use.
#[derive(Debug, Clone)]
pub struct CookieCodec {
    key: CookieKey,
    table: MssTable,
    window: u8,
}

impl CookieCodec {
    pub fn new(key: CookieKey, table: MssTable, window: u8) -> Result<Self, CookieConfigError> {
        if window > MAX_WINDOW {
            return Err(CookieConfigError::BadWindow(window));
        }
        Ok(CookieCodec { key, table, window })
    }

    pub fn key(&self) -> &CookieKey {
        &self.key
    }

    pub fn table(&self) -> &MssTable {
        &self.table
    }

    pub fn window(&self) -> u8 {
        self.window
    }

    pub fn encode(&self, k: &FlowKey, now: Duration, client_mss: Option<u16>) -> u32 {
        encode_cookie(&self.key, k, now, client_mss, &self.table)
    }

    pub fn verify(&self, k: &FlowKey, ack: u32, now: Duration) -> Result<u16, CookieReject> {
        verify_cookie(&self.key, k, ack, now, self.window, &self.table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn flow() -> FlowKey {
        FlowKey::new(
            Ipv4Addr::new(10, 0, 0, 2),
            80,
            Ipv4Addr::new(10, 0, 0, 1),
            4000,
        )
    }

    fn secs(s: f64) -> Duration {
        Duration::from_secs_f64(s)
    }

    #[test]
    fn pack_layout() {
        assert_eq!(Cookie::new(0, 0, 0).unwrap().pack(), 0);
        assert_eq!(Cookie::new(31, 7, 0xff_ffff).unwrap().pack(), 0xffff_ffff);
        assert_eq!(Cookie::new(1, 2, 3).unwrap().pack(), 0x0a00_0003);
        assert_eq!(Cookie::unpack(0x0a00_0003), Cookie::new(1, 2, 3).unwrap());
        assert!(Cookie::new(32, 0, 0).is_none());
        assert!(Cookie::new(0, 8, 0).is_none());
        assert!(Cookie::new(0, 0, 1 << 24).is_none());
    }

    #[test]
    fn tick_boundaries() {
        assert_eq!(tick(secs(0.0)), 0);
        assert_eq!(tick(secs(63.9)), 0);
        assert_eq!(tick(secs(64.0)), 1);
        assert_eq!(tick(secs(2048.0)), 0);
        assert_eq!(tick(secs(2047.0)), 31);
    }

    #[test]
    fn quantize_default_table() {
        let t = MssTable::default();
        assert_eq!(t.get(t.quantize(1460)), 1460);
        assert_eq!(t.get(t.quantize(1500)), 1460);
        assert_eq!(t.quantize(100), 0);
        assert_eq!(t.quantize(536), 0);
        assert_eq!(t.quantize(65535), 7);
        assert_eq!(t.get(t.quantize(1439)), 1300);
    }

    #[test]
    fn mss_table_validation() {
        assert!(MssTable::new([536, 1220, 1300, 1440, 1460, 4096, 8960, 9000]).is_ok());
        assert!(MssTable::new([536, 536, 1300, 1440, 1460, 4096, 8960, 9000]).is_err());
        assert!(MssTable::new([500, 1220, 1300, 1440, 1460, 4096, 8960, 9000]).is_err());
        assert!(MssTable::from_slice(&[536, 1220]).is_err());
    }

    #[test]
    fn key_hex_roundtrip() {
        let k = CookieKey::from_hex("000102030405060708090a0b0c0d0e0f").unwrap();
        assert_eq!(k.as_bytes()[15], 0x0f);
        assert_eq!(k.to_hex(), "000102030405060708090a0b0c0d0e0f");
        assert!(CookieKey::from_hex("0001").is_err());
        assert!(CookieKey::from_hex("zz0102030405060708090a0b0c0d0e0f").is_err());
        assert_eq!(CookieKey::from_seed(7), CookieKey::from_seed(7));
        assert_ne!(CookieKey::from_seed(7), CookieKey::from_seed(8));
    }

    #[test]
    fn encode_is_deterministic_within_tick() {
        let key = CookieKey::from_seed(1);
        let t = MssTable::default();
        let a = encode_cookie(&key, &flow(), secs(100.0), Some(1460), &t);
        let b = encode_cookie(&key, &flow(), secs(127.9), Some(1460), &t);
        assert_eq!(a, b);
        let c = encode_cookie(&key, &flow(), secs(164.0), Some(1460), &t);
        assert_ne!(Cookie::unpack(a).t5(), Cookie::unpack(c).t5());
        assert_ne!(Cookie::unpack(a).hash24(), Cookie::unpack(c).hash24());
    }

    #[test]
    fn verify_roundtrip_same_tick() {
        let key = CookieKey::from_seed(2);
        let t = MssTable::default();
        let c = encode_cookie(&key, &flow(), secs(10.0), Some(1500), &t);
        assert_eq!(
            verify_cookie(&key, &flow(), c.wrapping_add(1), secs(10.0), 1, &t),
            Ok(1460)
        );
    }

    #[test]
    fn verify_absent_mss_uses_default() {
        let key = CookieKey::from_seed(2);
        let t = MssTable::default();
        let c = encode_cookie(&key, &flow(), secs(10.0), None, &t);
        assert_eq!(
            verify_cookie(&key, &flow(), c.wrapping_add(1), secs(10.0), 1, &t),
            Ok(536)
        );
    }

    #[test]
    fn verify_window_rule() {
        let key = CookieKey::from_seed(3);
        let t = MssTable::default();
        let c = encode_cookie(&key, &flow(), secs(10.0), Some(1460), &t);
        let ack = c.wrapping_add(1);
        assert!(verify_cookie(&key, &flow(), ack, secs(10.0 + 64.0), 1, &t).is_ok());
        assert_eq!(
            verify_cookie(&key, &flow(), ack, secs(10.0 + 128.0), 1, &t),
            Err(CookieReject::StaleCookie)
        );
        assert_eq!(
            verify_cookie(&key, &flow(), ack, secs(10.0 + 3.0 * 64.0), 1, &t),
            Err(CookieReject::StaleCookie)
        );
        assert!(verify_cookie(&key, &flow(), ack, secs(10.0 + 3.0 * 64.0), 3, &t).is_ok());
        assert_eq!(
            verify_cookie(&key, &flow(), ack, secs(10.0 + 64.0), 0, &t),
            Err(CookieReject::StaleCookie)
        );
    }

    #[test]
    fn verify_does_not_reach_before_clock_origin() {
        let key = CookieKey::from_seed(3);
        let t = MssTable::default();
        // A cookie stamped with tick 31 must not pass at time 0 via wraparound.
        let hash = compute_hash24(&key, &flow(), 31);
        let c = Cookie::new(31, 4, hash).unwrap().pack();
        assert_eq!(
            verify_cookie(&key, &flow(), c.wrapping_add(1), secs(0.0), 3, &t),
            Err(CookieReject::StaleCookie)
        );
    }

    #[test]
    fn flipped_hash_bit_is_bad_hash() {
        let key = CookieKey::from_seed(4);
        let t = MssTable::default();
        let c = encode_cookie(&key, &flow(), secs(500.0), Some(1460), &t);
        for bit in 0..24 {
            let forged = (c ^ (1 << bit)).wrapping_add(1);
            assert_eq!(
                verify_cookie(&key, &flow(), forged, secs(500.0), 1, &t),
                Err(CookieReject::BadHash)
            );
        }
    }

    #[test]
    fn ack_wraps_modulo_2_32() {
        // cookie 0xffffffff is acknowledged as 0
        let c = Cookie::unpack(0u32.wrapping_sub(1));
        assert_eq!(c.t5(), 31);
        assert_eq!(c.hash24(), 0xff_ffff);
    }

    #[test]
    fn codec_rejects_large_window() {
        assert_eq!(
            CookieCodec::new(CookieKey::from_seed(0), MssTable::default(), 4).unwrap_err(),
            CookieConfigError::BadWindow(4)
        );
    }
}
