//! Ethernet II / IPv4 / TCP segments.
//!
//! A [`Segment`] is an owned, fully decoded frame. [`parse_segment`] and
//! [`serialize_segment`] convert between the wire format and this
//! representation; serialization always recomputes both checksums.
//!
//! Only plain IPv4 over untagged Ethernet is handled. Fragments, VLAN tags
//! and non-TCP payloads are rejected as [`PacketError::MalformedFrame`].

mod checksum;
mod options;

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use bitflags::bitflags;
use thiserror::Error;

pub use checksum::{internet_checksum, tcp_checksum};
pub use options::{TcpOption, TcpOptions, MAX_OPTIONS_LEN};

pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_MIN_HEADER_LEN: usize = 20;
pub const TCP_MIN_HEADER_LEN: usize = 20;
/// Ethernet + minimal IPv4 + minimal TCP, no payload.
pub const MIN_FRAME_LEN: usize = ETH_HEADER_LEN + IPV4_MIN_HEADER_LEN + TCP_MIN_HEADER_LEN;
/// Largest frame (without FCS) on a standard 1500-byte Ethernet link.
pub const DEFAULT_MTU: usize = 1514;

const ETHERTYPE_IPV4: u16 = 0x0800;
const IPPROTO_TCP: u8 = 6;
const IP_FLAG_DF: u16 = 0x4000;
const IP_FLAG_MF: u16 = 0x2000;
const IP_FRAG_OFFSET: u16 = 0x1fff;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("serialized frame of {len} bytes exceeds MTU of {mtu} bytes")]
    OversizeSegment { len: usize, mtu: usize },
    #[error("TCP options need {0} bytes, at most 40 fit in the header")]
    OptionsTooLong(usize),
    #[error("IPv4 options must be a multiple of 4 bytes and at most 40 bytes")]
    InvalidIpOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const fn new(a: u8, b: u8, c: u8, d: u8, e: u8, f: u8) -> Self {
        MacAddr([a, b, c, d, e, f])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = PacketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for byte in out.iter_mut() {
            let part = parts
                .next()
                .ok_or(PacketError::MalformedFrame("MAC address needs 6 octets"))?;
            *byte = u8::from_str_radix(part, 16)
                .map_err(|_| PacketError::MalformedFrame("bad MAC address octet"))?;
        }
        if parts.next().is_some() {
            return Err(PacketError::MalformedFrame(
                "MAC address has more than 6 octets",
            ));
        }
        Ok(MacAddr(out))
    }
}

/// The TCP connection 4-tuple, in packet direction.
///
/// Equality and hashing are direction-sensitive: a key and its
/// [`reverse`](FlowKey::reverse) are different keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FlowKey {
    pub const fn new(src_ip: Ipv4Addr, src_port: u16, dst_ip: Ipv4Addr, dst_port: u16) -> Self {
        FlowKey {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
        }
    }

    /// Swaps source and destination of both address and port.
    #[must_use]
    pub const fn reverse(&self) -> Self {
        FlowKey {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
        }
    }

    /// `src_ip ‖ dst_ip ‖ src_port ‖ dst_port`, big-endian.
    pub fn to_bytes(&self) -> [u8; 12] {
        let mut b = [0u8; 12];
        b[0..4].copy_from_slice(&self.src_ip.octets());
        b[4..8].copy_from_slice(&self.dst_ip.octets());
        b[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        b[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        b
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port
        )
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const PSH = 0x08;
        const ACK = 0x10;
        const URG = 0x20;
        const ECE = 0x40;
        const CWR = 0x80;
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(TcpFlags, char); 8] = [
            (TcpFlags::CWR, 'C'),
            (TcpFlags::ECE, 'E'),
            (TcpFlags::URG, 'U'),
            (TcpFlags::ACK, 'A'),
            (TcpFlags::PSH, 'P'),
            (TcpFlags::RST, 'R'),
            (TcpFlags::SYN, 'S'),
            (TcpFlags::FIN, 'F'),
        ];
        for (flag, c) in NAMES {
            if self.contains(flag) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

/// A decoded Ethernet/IPv4/TCP frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub eth_src: MacAddr,
    pub eth_dst: MacAddr,
    pub key: FlowKey,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
    pub urgent: u16,
    pub ttl: u8,
    pub tos: u8,
    pub ip_id: u16,
    pub dont_fragment: bool,
    /// Raw IPv4 options, a multiple of 4 bytes.
    pub ip_options: Vec<u8>,
    pub options: TcpOptions,
    pub payload: Vec<u8>,
}

impl Segment {
    /// A segment with no options and no payload, TTL 64 and DF set.
    pub fn new(key: FlowKey, flags: TcpFlags, seq: u32, ack: u32) -> Self {
        Segment {
            eth_src: MacAddr::default(),
            eth_dst: MacAddr::default(),
            key,
            seq,
            ack,
            flags,
            window: 0,
            urgent: 0,
            ttl: 64,
            tos: 0,
            ip_id: 0,
            dont_fragment: true,
            ip_options: Vec::new(),
            options: TcpOptions::default(),
            payload: Vec::new(),
        }
    }

    pub fn with_window(mut self, window: u16) -> Self {
        self.window = window;
        self
    }

    pub fn with_options(mut self, options: TcpOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    pub fn flow_key(&self) -> FlowKey {
        self.key
    }

    pub fn has(&self, flags: TcpFlags) -> bool {
        self.flags.contains(flags)
    }

    /// Sequence space consumed: payload plus one each for SYN and FIN.
    pub fn seq_len(&self) -> u32 {
        let mut n = self.payload.len() as u32;
        if self.has(TcpFlags::SYN) {
            n += 1;
        }
        if self.has(TcpFlags::FIN) {
            n += 1;
        }
        n
    }

    pub fn tcp_header_len(&self) -> usize {
        TCP_MIN_HEADER_LEN + self.options.padded_len()
    }

    pub fn ip_header_len(&self) -> usize {
        IPV4_MIN_HEADER_LEN + self.ip_options.len()
    }

    pub fn frame_len(&self) -> usize {
        ETH_HEADER_LEN + self.ip_header_len() + self.tcp_header_len() + self.payload.len()
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] seq={} ack={} win={} len={}",
            self.key,
            self.flags,
            self.seq,
            self.ack,
            self.window,
            self.payload.len()
        )
    }
}

/// A parsed frame together with the checksum values found on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFrame {
    pub segment: Segment,
    pub ip_checksum: u16,
    pub tcp_checksum: u16,
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Locates the IPv4 header and TCP segment inside an Ethernet frame.
fn split_frame(frame: &[u8]) -> Result<(&[u8], &[u8]), PacketError> {
    use PacketError::MalformedFrame;

    if frame.len() < MIN_FRAME_LEN {
        return Err(MalformedFrame("frame shorter than 54 bytes"));
    }
    if be16(frame, 12) != ETHERTYPE_IPV4 {
        return Err(MalformedFrame("ethertype is not IPv4"));
    }
    let ip = &frame[ETH_HEADER_LEN..];
    if ip[0] >> 4 != 4 {
        return Err(MalformedFrame("IP version is not 4"));
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < IPV4_MIN_HEADER_LEN {
        return Err(MalformedFrame("IPv4 header length below 20 bytes"));
    }
    let total_len = usize::from(be16(ip, 2));
    if total_len < ihl + TCP_MIN_HEADER_LEN || total_len > ip.len() {
        return Err(MalformedFrame("IPv4 total length inconsistent with frame"));
    }
    let frag = be16(ip, 6);
    if frag & IP_FLAG_MF != 0 || frag & IP_FRAG_OFFSET != 0 {
        return Err(MalformedFrame("IPv4 fragments are not supported"));
    }
    if ip[9] != IPPROTO_TCP {
        return Err(MalformedFrame("IP protocol is not TCP"));
    }
    // Anything past total_len is Ethernet padding.
    Ok((&ip[..ihl], &ip[ihl..total_len]))
}

/// Parses an Ethernet II frame carrying IPv4/TCP.
///
/// Checksums are recorded but not verified; see [`checksums_valid`].
pub fn parse_frame(frame: &[u8]) -> Result<ParsedFrame, PacketError> {
    let (ip, tcp) = split_frame(frame)?;
    let data_offset = usize::from(tcp[12] >> 4) * 4;
    if data_offset < TCP_MIN_HEADER_LEN || data_offset > tcp.len() {
        return Err(PacketError::MalformedFrame(
            "TCP data offset inconsistent with segment",
        ));
    }

    let mut eth_dst = [0u8; 6];
    let mut eth_src = [0u8; 6];
    eth_dst.copy_from_slice(&frame[0..6]);
    eth_src.copy_from_slice(&frame[6..12]);

    let key = FlowKey {
        src_ip: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
        dst_ip: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
        src_port: be16(tcp, 0),
        dst_port: be16(tcp, 2),
    };

    let segment = Segment {
        eth_src: MacAddr(eth_src),
        eth_dst: MacAddr(eth_dst),
        key,
        seq: be32(tcp, 4),
        ack: be32(tcp, 8),
        flags: TcpFlags::from_bits_retain(tcp[13]),
        window: be16(tcp, 14),
        urgent: be16(tcp, 18),
        ttl: ip[8],
        tos: ip[1],
        ip_id: be16(ip, 4),
        dont_fragment: be16(ip, 6) & IP_FLAG_DF != 0,
        ip_options: ip[IPV4_MIN_HEADER_LEN..].to_vec(),
        options: TcpOptions::parse(&tcp[TCP_MIN_HEADER_LEN..data_offset]),
        payload: tcp[data_offset..].to_vec(),
    };

    Ok(ParsedFrame {
        segment,
        ip_checksum: be16(ip, 10),
        tcp_checksum: be16(tcp, 16),
    })
}

pub fn parse_segment(frame: &[u8]) -> Result<Segment, PacketError> {
    parse_frame(frame).map(|p| p.segment)
}

/// True iff both the IPv4 header checksum and the TCP checksum verify.
pub fn checksums_valid(frame: &[u8]) -> Result<bool, PacketError> {
    let (ip, tcp) = split_frame(frame)?;
    let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    Ok(internet_checksum(ip) == 0 && tcp_checksum(src, dst, tcp) == 0)
}

/// Serializes with the default 1514-byte MTU.
pub fn serialize_segment(s: &Segment) -> Result<Vec<u8>, PacketError> {
    serialize_segment_mtu(s, DEFAULT_MTU)
}

pub fn serialize_segment_mtu(s: &Segment, mtu: usize) -> Result<Vec<u8>, PacketError> {
    let mut out = Vec::with_capacity(s.frame_len());
    write_segment(s, mtu, &mut out)?;
    Ok(out)
}

/// Appends the serialized frame to `out`, computing both checksums.
pub fn write_segment(s: &Segment, mtu: usize, out: &mut Vec<u8>) -> Result<(), PacketError> {
    let opt_len = s.options.padded_len();
    if opt_len > MAX_OPTIONS_LEN {
        return Err(PacketError::OptionsTooLong(opt_len));
    }
    if !s.ip_options.len().is_multiple_of(4) || s.ip_options.len() > 40 {
        return Err(PacketError::InvalidIpOptions);
    }
    let frame_len = s.frame_len();
    if frame_len > mtu {
        return Err(PacketError::OversizeSegment {
            len: frame_len,
            mtu,
        });
    }

    let start = out.len();
    out.extend_from_slice(&s.eth_dst.0);
    out.extend_from_slice(&s.eth_src.0);
    out.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_start = out.len();
    let ip_hlen = s.ip_header_len();
    let total_len = (frame_len - ETH_HEADER_LEN) as u16;
    out.push(0x40 | (ip_hlen / 4) as u8);
    out.push(s.tos);
    out.extend_from_slice(&total_len.to_be_bytes());
    out.extend_from_slice(&s.ip_id.to_be_bytes());
    let frag: u16 = if s.dont_fragment { IP_FLAG_DF } else { 0 };
    out.extend_from_slice(&frag.to_be_bytes());
    out.push(s.ttl);
    out.push(IPPROTO_TCP);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&s.key.src_ip.octets());
    out.extend_from_slice(&s.key.dst_ip.octets());
    out.extend_from_slice(&s.ip_options);
    let ip_csum = internet_checksum(&out[ip_start..ip_start + ip_hlen]);
    out[ip_start + 10..ip_start + 12].copy_from_slice(&ip_csum.to_be_bytes());

    let tcp_start = out.len();
    out.extend_from_slice(&s.key.src_port.to_be_bytes());
    out.extend_from_slice(&s.key.dst_port.to_be_bytes());
    out.extend_from_slice(&s.seq.to_be_bytes());
    out.extend_from_slice(&s.ack.to_be_bytes());
    out.push((((TCP_MIN_HEADER_LEN + opt_len) / 4) as u8) << 4);
    out.push(s.flags.bits());
    out.extend_from_slice(&s.window.to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&s.urgent.to_be_bytes());
    s.options.write_padded(out);
    out.extend_from_slice(&s.payload);
    let tcp_csum = tcp_checksum(s.key.src_ip, s.key.dst_ip, &out[tcp_start..]);
    out[tcp_start + 16..tcp_start + 18].copy_from_slice(&tcp_csum.to_be_bytes());

    debug_assert_eq!(out.len() - start, frame_len);
    Ok(())
}
