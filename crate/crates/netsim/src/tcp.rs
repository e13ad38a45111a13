//! A small TCP endpoint: three-way handshake with a retransmission
//! schedule, go-back-N data transfer with a doubling RTO, zero-window
//! probing and FIN teardown. No congestion control, no reassembly of
//! out-of-order data, no window scaling.

use std::collections::VecDeque;

use synproxy_core::packet::{FlowKey, Segment, TcpFlags, TcpOptions};

use crate::event::Micros;

const DEFAULT_PEER_MSS: u16 = 536;

fn seq_lt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

fn seq_le(a: u32, b: u32) -> bool {
    a == b || seq_lt(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpState {
    SynSent,
    SynReceived,
    /// Also covers the FIN exchange; see [`Tcb::is_closed`].
    Established,
    Closed,
}

#[derive(Debug, Clone)]
pub struct TcpParams {
    pub mss: u16,
    pub window: u16,
    pub rto: Micros,
    pub max_retransmits: u32,
    /// Waits between handshake transmissions; the last one is how long to
    /// wait after the final attempt before giving up.
    pub handshake_schedule: Vec<Micros>,
}

/// What a segment or timer did to the connection.
#[derive(Debug, Default)]
pub struct Outcome {
    pub segments: Vec<Segment>,
    pub delivered: Vec<u8>,
    pub established: bool,
    /// The peer reset the connection.
    pub reset: bool,
    /// Retransmissions ran out.
    pub aborted: bool,
    /// The peer's FIN arrived.
    pub fin: bool,
    /// Both FINs are sent and acknowledged.
    pub closed: bool,
}

#[derive(Debug, Clone)]
pub struct Tcb {
    /// Local to remote.
    pub key: FlowKey,
    pub state: TcpState,
    params: TcpParams,
    iss: u32,
    snd_una: u32,
    snd_nxt: u32,
    /// Unacknowledged and unsent data, starting at `snd_una`.
    buf: VecDeque<u8>,
    fin_queued: bool,
    fin_sent: bool,
    fin_acked: bool,
    peer_window: u16,
    peer_mss: u16,
    irs: u32,
    rcv_nxt: u32,
    fin_received: bool,
    rto: Micros,
    retries: u32,
    handshake_attempt: usize,
    timer: Option<Micros>,
    pub retransmissions: u64,
    pub probes: u64,
}

impl Tcb {
    fn blank(key: FlowKey, iss: u32, params: TcpParams, state: TcpState) -> Self {
        let rto = params.rto;
        Tcb {
            key,
            state,
            params,
            iss,
            snd_una: iss,
            snd_nxt: iss.wrapping_add(1),
            buf: VecDeque::new(),
            fin_queued: false,
            fin_sent: false,
            fin_acked: false,
            peer_window: 0,
            peer_mss: DEFAULT_PEER_MSS,
            irs: 0,
            rcv_nxt: 0,
            fin_received: false,
            rto,
            retries: 0,
            handshake_attempt: 0,
            timer: None,
            retransmissions: 0,
            probes: 0,
        }
    }

    /// Active open. Returns the connection and its SYN.
    pub fn connect(key: FlowKey, iss: u32, params: TcpParams, now: Micros) -> (Self, Segment) {
        let mut t = Self::blank(key, iss, params, TcpState::SynSent);
        t.timer = Some(now + t.params.handshake_schedule[0]);
        let syn = t.syn();
        (t, syn)
    }

    /// Passive open on `syn`. Returns the connection and its SYN/ACK.
    pub fn accept(syn: &Segment, iss: u32, params: TcpParams, now: Micros) -> (Self, Segment) {
        let mut t = Self::blank(syn.key.reverse(), iss, params, TcpState::SynReceived);
        t.irs = syn.seq;
        t.rcv_nxt = syn.seq.wrapping_add(1);
        t.peer_window = syn.window;
        t.peer_mss = syn.options.mss().unwrap_or(DEFAULT_PEER_MSS);
        t.timer = Some(now + t.params.handshake_schedule[0]);
        let synack = t.synack();
        (t, synack)
    }

    /// Starts the handshake over on the same tuple with a new ISN.
    pub fn reconnect(&mut self, iss: u32, now: Micros) -> Segment {
        let (fresh, syn) = Self::connect(self.key, iss, self.params.clone(), now);
        *self = fresh;
        syn
    }

    fn syn(&self) -> Segment {
        Segment::new(self.key, TcpFlags::SYN, self.iss, 0)
            .with_window(self.params.window)
            .with_options(TcpOptions::with_mss(self.params.mss))
    }

    fn synack(&self) -> Segment {
        Segment::new(
            self.key,
            TcpFlags::SYN | TcpFlags::ACK,
            self.iss,
            self.rcv_nxt,
        )
        .with_window(self.params.window)
        .with_options(TcpOptions::with_mss(self.params.mss))
    }

    fn segment(&self, flags: TcpFlags, seq: u32, payload: Vec<u8>) -> Segment {
        Segment::new(self.key, flags | TcpFlags::ACK, seq, self.rcv_nxt)
            .with_window(self.params.window)
            .with_payload(payload)
    }

    fn ack(&self) -> Segment {
        self.segment(TcpFlags::empty(), self.snd_nxt, Vec::new())
    }

    /// A reset for the current sequence position.
    pub fn rst(&self) -> Segment {
        Segment::new(
            self.key,
            TcpFlags::RST | TcpFlags::ACK,
            self.snd_nxt,
            self.rcv_nxt,
        )
    }

    pub fn timer(&self) -> Option<Micros> {
        self.timer
    }

    pub fn iss(&self) -> u32 {
        self.iss
    }

    pub fn irs(&self) -> u32 {
        self.irs
    }

    pub fn peer_window(&self) -> u16 {
        self.peer_window
    }

    /// Established with room to send.
    pub fn can_send(&self) -> bool {
        self.state == TcpState::Established && self.peer_window > 0
    }

    pub fn is_closed(&self) -> bool {
        self.state == TcpState::Closed
    }

    /// True once our FIN has been queued.
    pub fn is_closing(&self) -> bool {
        self.fin_queued
    }

    pub fn fin_received(&self) -> bool {
        self.fin_received
    }

    /// Everything sent has been acknowledged.
    pub fn is_idle(&self) -> bool {
        self.buf.is_empty() && self.snd_una == self.snd_nxt
    }

    /// Queues application data.
    pub fn send(&mut self, data: &[u8], now: Micros) -> Vec<Segment> {
        debug_assert!(!self.fin_queued, "data after close");
        self.buf.extend(data);
        let mut out = Vec::new();
        self.transmit(now, &mut out);
        out
    }

    /// Queues a FIN after any pending data.
    pub fn close(&mut self, now: Micros) -> Vec<Segment> {
        self.fin_queued = true;
        let mut out = Vec::new();
        self.transmit(now, &mut out);
        out
    }

    /// Marks the connection closed without telling the peer.
    pub fn abandon(&mut self) {
        self.state = TcpState::Closed;
        self.timer = None;
    }

    fn in_flight(&self) -> bool {
        self.snd_nxt != self.snd_una
    }

    fn unsent_offset(&self) -> usize {
        let off = self.snd_nxt.wrapping_sub(self.snd_una) as usize;
        off.min(self.buf.len())
    }

    /// Sends whatever the peer's window allows.
    fn transmit(&mut self, now: Micros, out: &mut Vec<Segment>) {
        if self.state != TcpState::Established {
            return;
        }
        let was_idle = !self.in_flight();
        if !self.fin_sent {
            let wnd = usize::from(self.peer_window);
            let mss = usize::from(self.peer_mss.min(self.params.mss)).max(1);
            let mut off = self.unsent_offset();
            while off < self.buf.len() && off < wnd {
                let len = mss.min(self.buf.len() - off).min(wnd - off);
                let payload: Vec<u8> = self.buf.range(off..off + len).copied().collect();
                let seq = self.snd_una.wrapping_add(off as u32);
                out.push(self.segment(TcpFlags::PSH, seq, payload));
                off += len;
            }
            self.snd_nxt = self.snd_una.wrapping_add(off as u32);
            if self.fin_queued && off == self.buf.len() {
                out.push(self.segment(TcpFlags::FIN, self.snd_nxt, Vec::new()));
                self.snd_nxt = self.snd_nxt.wrapping_add(1);
                self.fin_sent = true;
            }
        }
        let blocked = !self.fin_sent && self.unsent_offset() < self.buf.len();
        if self.in_flight() {
            if was_idle || self.timer.is_none() {
                self.timer = Some(now + self.rto);
            }
        } else if blocked {
            // Zero window: arm the persist timer.
            self.timer.get_or_insert(now + self.rto);
        } else {
            self.timer = None;
        }
    }

    pub fn on_segment(&mut self, s: &Segment, now: Micros) -> Outcome {
        let mut o = Outcome::default();
        if s.has(TcpFlags::RST) {
            let valid = match self.state {
                TcpState::SynSent => s.has(TcpFlags::ACK) && s.ack == self.iss.wrapping_add(1),
                TcpState::Closed => false,
                _ => s.seq == self.rcv_nxt,
            };
            if valid {
                self.abandon();
                o.reset = true;
            }
            return o;
        }

        match self.state {
            TcpState::Closed => {
                // Lingering after close: re-acknowledge a retransmitted FIN.
                if s.has(TcpFlags::FIN) {
                    o.segments.push(self.ack());
                }
                return o;
            }
            TcpState::SynSent => {
                if s.has(TcpFlags::SYN | TcpFlags::ACK) && s.ack == self.iss.wrapping_add(1) {
                    self.irs = s.seq;
                    self.rcv_nxt = s.seq.wrapping_add(1);
                    self.snd_una = s.ack;
                    self.snd_nxt = s.ack;
                    self.peer_window = s.window;
                    self.peer_mss = s.options.mss().unwrap_or(DEFAULT_PEER_MSS);
                    self.state = TcpState::Established;
                    self.timer = None;
                    o.established = true;
                    o.segments.push(self.ack());
                    self.transmit(now, &mut o.segments);
                }
                return o;
            }
            TcpState::SynReceived => {
                if s.has(TcpFlags::SYN) {
                    if !s.has(TcpFlags::ACK) && s.seq == self.irs {
                        o.segments.push(self.synack());
                    }
                    return o;
                }
                if !(s.has(TcpFlags::ACK) && s.ack == self.iss.wrapping_add(1)) {
                    return o;
                }
                self.snd_una = s.ack;
                self.snd_nxt = s.ack;
                self.peer_window = s.window;
                self.state = TcpState::Established;
                self.timer = None;
                o.established = true;
            }
            TcpState::Established => {}
        }

        if s.has(TcpFlags::SYN) {
            // A repeated SYN/ACK, e.g. the proxy lifting its zero window.
            if s.has(TcpFlags::ACK) && s.seq == self.irs {
                if s.ack == self.snd_una {
                    self.peer_window = s.window;
                }
                o.segments.push(self.ack());
                self.transmit(now, &mut o.segments);
            }
            return o;
        }

        if s.has(TcpFlags::ACK) {
            if seq_lt(self.snd_una, s.ack) && seq_le(s.ack, self.snd_nxt) {
                let n = s.ack.wrapping_sub(self.snd_una) as usize;
                let data = n.min(self.buf.len());
                self.buf.drain(..data);
                if n > data {
                    self.fin_acked = true;
                }
                self.snd_una = s.ack;
                self.peer_window = s.window;
                self.retries = 0;
                self.rto = self.params.rto;
                self.timer = None;
            } else if s.ack == self.snd_una {
                self.peer_window = s.window;
            }
        }

        let mut need_ack = false;
        let len = s.payload.len() as u32;
        if len > 0 {
            need_ack = true;
            let end = s.seq.wrapping_add(len);
            if seq_le(s.seq, self.rcv_nxt) && seq_lt(self.rcv_nxt, end) && !self.fin_received {
                let skip = self.rcv_nxt.wrapping_sub(s.seq) as usize;
                o.delivered.extend_from_slice(&s.payload[skip..]);
                self.rcv_nxt = end;
            }
        }
        if s.has(TcpFlags::FIN) {
            need_ack = true;
            if !self.fin_received && s.seq.wrapping_add(len) == self.rcv_nxt {
                self.fin_received = true;
                self.rcv_nxt = self.rcv_nxt.wrapping_add(1);
                o.fin = true;
            }
        }
        if need_ack {
            o.segments.push(self.ack());
        }
        self.transmit(now, &mut o.segments);
        if self.fin_received && self.fin_acked {
            self.state = TcpState::Closed;
            self.timer = None;
            o.closed = true;
        }
        o
    }

    pub fn on_timer(&mut self, now: Micros) -> Outcome {
        let mut o = Outcome::default();
        match self.timer {
            Some(t) if t <= now => {}
            _ => return o,
        }
        self.timer = None;
        match self.state {
            TcpState::Closed => {}
            TcpState::SynSent | TcpState::SynReceived => {
                let schedule = &self.params.handshake_schedule;
                if self.handshake_attempt + 1 < schedule.len() {
                    self.handshake_attempt += 1;
                    self.timer = Some(now + schedule[self.handshake_attempt]);
                    self.retransmissions += 1;
                    o.segments.push(if self.state == TcpState::SynSent {
                        self.syn()
                    } else {
                        self.synack()
                    });
                } else {
                    self.abandon();
                    o.aborted = true;
                }
            }
            TcpState::Established => {
                let probing = !self.in_flight();
                if probing && self.buf.is_empty() {
                    return o;
                }
                self.retries += 1;
                if self.retries > self.params.max_retransmits {
                    self.abandon();
                    o.aborted = true;
                    return o;
                }
                self.rto *= 2;
                // Go back N.
                self.snd_nxt = self.snd_una;
                if !self.fin_acked {
                    self.fin_sent = false;
                }
                let before = o.segments.len();
                self.transmit(now, &mut o.segments);
                if o.segments.len() == before && self.peer_window == 0 && !self.buf.is_empty() {
                    // One byte past the closed window.
                    let b = self.buf[0];
                    o.segments
                        .push(self.segment(TcpFlags::PSH, self.snd_una, vec![b]));
                    self.snd_nxt = self.snd_una.wrapping_add(1);
                    self.probes += 1;
                } else if !probing {
                    self.retransmissions += 1;
                }
                self.timer = Some(now + self.rto);
            }
        }
        o
    }
}
