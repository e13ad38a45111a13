/// Maximum size of the TCP options block.
pub const MAX_OPTIONS_LEN: usize = 40;

const KIND_EOL: u8 = 0;
const KIND_NOP: u8 = 1;
const KIND_MSS: u8 = 2;
const KIND_WSCALE: u8 = 3;
const KIND_SACK_PERMITTED: u8 = 4;
const KIND_TIMESTAMP: u8 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TcpOption {
    Nop,
    Mss(u16),
    WindowScale(u8),
    SackPermitted,
    Timestamp {
        value: u32,
        echo: u32,
    },
    /// Any other option, kept verbatim (kind plus the bytes after the length octet).
    Unknown {
        kind: u8,
        data: Vec<u8>,
    },
}

impl TcpOption {
    fn encoded_len(&self) -> usize {
        match self {
            TcpOption::Nop => 1,
            TcpOption::Mss(_) => 4,
            TcpOption::WindowScale(_) => 3,
            TcpOption::SackPermitted => 2,
            TcpOption::Timestamp { .. } => 10,
            TcpOption::Unknown { data, .. } => 2 + data.len(),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            TcpOption::Nop => out.push(KIND_NOP),
            TcpOption::Mss(v) => {
                out.extend_from_slice(&[KIND_MSS, 4]);
                out.extend_from_slice(&v.to_be_bytes());
            }
            TcpOption::WindowScale(s) => out.extend_from_slice(&[KIND_WSCALE, 3, *s]),
            TcpOption::SackPermitted => out.extend_from_slice(&[KIND_SACK_PERMITTED, 2]),
            TcpOption::Timestamp { value, echo } => {
                out.extend_from_slice(&[KIND_TIMESTAMP, 10]);
                out.extend_from_slice(&value.to_be_bytes());
                out.extend_from_slice(&echo.to_be_bytes());
            }
            TcpOption::Unknown { kind, data } => {
                out.push(*kind);
                out.push((2 + data.len()) as u8);
                out.extend_from_slice(data);
            }
        }
    }
}

/// The TCP options block, in wire order.
///
/// Parsing never fails: options that are not understood, or whose length
/// octet does not match the expected size, are kept as
/// [`TcpOption::Unknown`]. Everything from an end-of-list marker (or an
/// unparseable tail) onward is kept in `trailer`. Writing an unmodified
/// block therefore reproduces the original bytes exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TcpOptions {
    items: Vec<TcpOption>,
    trailer: Vec<u8>,
}

impl TcpOptions {
    pub fn from_items(items: Vec<TcpOption>) -> Self {
        TcpOptions {
            items,
            trailer: Vec::new(),
        }
    }

    pub fn with_mss(mss: u16) -> Self {
        Self::from_items(vec![TcpOption::Mss(mss)])
    }

    pub fn parse(bytes: &[u8]) -> Self {
        let mut items = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let kind = bytes[i];
            if kind == KIND_EOL {
                break;
            }
            if kind == KIND_NOP {
                items.push(TcpOption::Nop);
                i += 1;
                continue;
            }
            let Some(&len) = bytes.get(i + 1) else { break };
            let len = usize::from(len);
            if len < 2 || i + len > bytes.len() {
                break;
            }
            let body = &bytes[i + 2..i + len];
            let opt = match (kind, len) {
                (KIND_MSS, 4) => TcpOption::Mss(u16::from_be_bytes([body[0], body[1]])),
                (KIND_WSCALE, 3) => TcpOption::WindowScale(body[0]),
                (KIND_SACK_PERMITTED, 2) => TcpOption::SackPermitted,
                (KIND_TIMESTAMP, 10) => TcpOption::Timestamp {
                    value: u32::from_be_bytes([body[0], body[1], body[2], body[3]]),
                    echo: u32::from_be_bytes([body[4], body[5], body[6], body[7]]),
                },
                _ => TcpOption::Unknown {
                    kind,
                    data: body.to_vec(),
                },
            };
            items.push(opt);
            i += len;
        }
        TcpOptions {
            items,
            trailer: bytes[i..].to_vec(),
        }
    }

    pub fn items(&self) -> &[TcpOption] {
        &self.items
    }

    pub fn trailer(&self) -> &[u8] {
        &self.trailer
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty() && self.trailer.is_empty()
    }

    pub fn mss(&self) -> Option<u16> {
        self.items.iter().find_map(|o| match o {
            TcpOption::Mss(v) => Some(*v),
            _ => None,
        })
    }

    /// Replaces the first MSS option, or prepends one.
    pub fn set_mss(&mut self, mss: u16) {
        match self
            .items
            .iter_mut()
            .find(|o| matches!(o, TcpOption::Mss(_)))
        {
            Some(o) => *o = TcpOption::Mss(mss),
            None => self.items.insert(0, TcpOption::Mss(mss)),
        }
    }

    pub fn sack_permitted(&self) -> bool {
        self.items
            .iter()
            .any(|o| matches!(o, TcpOption::SackPermitted))
    }

    pub fn window_scale(&self) -> Option<u8> {
        self.items.iter().find_map(|o| match o {
            TcpOption::WindowScale(s) => Some(*s),
            _ => None,
        })
    }

    pub fn timestamp(&self) -> Option<(u32, u32)> {
        self.items.iter().find_map(|o| match o {
            TcpOption::Timestamp { value, echo } => Some((*value, *echo)),
            _ => None,
        })
    }

    /// Options carried opaquely.
    pub fn unparsed(&self) -> impl Iterator<Item = (u8, &[u8])> {
        self.items.iter().filter_map(|o| match o {
            TcpOption::Unknown { kind, data } => Some((*kind, data.as_slice())),
            _ => None,
        })
    }

    /// Length before padding.
    pub fn encoded_len(&self) -> usize {
        self.items.iter().map(TcpOption::encoded_len).sum::<usize>() + self.trailer.len()
    }

    /// Length on the wire, rounded up to a multiple of 4.
    pub fn padded_len(&self) -> usize {
        (self.encoded_len() + 3) & !3
    }

    pub(crate) fn write_padded(&self, out: &mut Vec<u8>) {
        let start = out.len();
        for o in &self.items {
            o.write(out);
        }
        out.extend_from_slice(&self.trailer);
        let pad = self.padded_len() - (out.len() - start);
        out.extend(std::iter::repeat_n(KIND_EOL, pad));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.padded_len());
        self.write_padded(&mut out);
        out
    }
}
