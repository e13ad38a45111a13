use std::fmt;

use smallvec::SmallVec;

use crate::packet::Segment;

/// A side of the proxy. Used both for where a segment came in and where an
/// emitted segment goes out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Interface {
    Client,
    Server,
}

impl Interface {
    pub fn opposite(self) -> Self {
        match self {
            Interface::Client => Interface::Server,
            Interface::Server => Interface::Client,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Interface::Client => "client",
            Interface::Server => "server",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    Malformed,
    BadChecksum,
    StaleCookie,
    BadHash,
    /// Auth strategies: segment from a source that has not authenticated and
    /// is not part of a handshake.
    NotWhitelisted,
    /// SYN-cookie proxy: no splice state for this flow and not a handshake ACK.
    NoState,
    /// SYN/ACK from the server that matches no pending splice.
    NoMatchingSplice,
    /// Client segment while the server-side handshake is still in progress.
    AwaitingServer,
    CapacityExceeded,
    /// The server never answered the proxy's SYN.
    HandshakeTimeout,
}

impl DropReason {
    pub const ALL: [DropReason; 10] = [
        DropReason::Malformed,
        DropReason::BadChecksum,
        DropReason::StaleCookie,
        DropReason::BadHash,
        DropReason::NotWhitelisted,
        DropReason::NoState,
        DropReason::NoMatchingSplice,
        DropReason::AwaitingServer,
        DropReason::CapacityExceeded,
        DropReason::HandshakeTimeout,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::Malformed => "Malformed",
            DropReason::BadChecksum => "BadChecksum",
            DropReason::StaleCookie => "StaleCookie",
            DropReason::BadHash => "BadHash",
            DropReason::NotWhitelisted => "NotWhitelisted",
            DropReason::NoState => "NoState",
            DropReason::NoMatchingSplice => "NoMatchingSplice",
            DropReason::AwaitingServer => "AwaitingServer",
            DropReason::CapacityExceeded => "CapacityExceeded",
            DropReason::HandshakeTimeout => "HandshakeTimeout",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<crate::cookie::CookieReject> for DropReason {
    fn from(r: crate::cookie::CookieReject) -> Self {
        match r {
            crate::cookie::CookieReject::StaleCookie => DropReason::StaleCookie,
            crate::cookie::CookieReject::BadHash => DropReason::BadHash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Emit { segment: Segment, iface: Interface },
    Drop(DropReason),
}

impl Action {
    pub fn emitted(&self) -> Option<(&Segment, Interface)> {
        match self {
            Action::Emit { segment, iface } => Some((segment, *iface)),
            Action::Drop(_) => None,
        }
    }
}

/// Ordered outcome of processing one segment (or one timer tick).
///
/// Empty when the segment was absorbed into state without a reply, which
/// only happens when the first data segment is buffered during a splice.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActionList(SmallVec<[Action; 2]>);

impl ActionList {
    pub fn new() -> Self {
        ActionList(SmallVec::new())
    }

    pub fn emit(segment: Segment, iface: Interface) -> Self {
        let mut l = Self::new();
        l.push_emit(segment, iface);
        l
    }

    pub fn drop(reason: DropReason) -> Self {
        let mut l = Self::new();
        l.0.push(Action::Drop(reason));
        l
    }

    pub fn push_emit(&mut self, segment: Segment, iface: Interface) {
        self.0.push(Action::Emit { segment, iface });
    }

    pub fn push(&mut self, a: Action) {
        self.0.push(a);
    }

    pub fn extend(&mut self, other: ActionList) {
        self.0.extend(other.0);
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn emissions(&self) -> impl Iterator<Item = (&Segment, Interface)> {
        self.0.iter().filter_map(Action::emitted)
    }

    pub fn emission_count(&self) -> usize {
        self.emissions().count()
    }

    pub fn drop_reason(&self) -> Option<DropReason> {
        self.0.iter().find_map(|a| match a {
            Action::Drop(r) => Some(*r),
            _ => None,
        })
    }
}

impl IntoIterator for ActionList {
    type Item = Action;
    type IntoIter = smallvec::IntoIter<[Action; 2]>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a ActionList {
    type Item = &'a Action;
    type IntoIter = std::slice::Iter<'a, Action>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
