//! Classic libpcap capture files: microsecond timestamps, Ethernet link type.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

const MAGIC_USEC: u32 = 0xa1b2_c3d4;
const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;
const SNAPLEN: u32 = 65_535;
const MAX_RECORD_LEN: u32 = 262_144;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("unsupported capture: {0}")]
    UnsupportedCapture(String),
    #[error("capture file is truncated")]
    TruncatedFile,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapRecord {
    pub ts_sec: u32,
    pub ts_usec: u32,
    /// Length of the packet on the wire; equal to `data.len()` unless the
    /// capture was snapped.
    pub orig_len: u32,
    pub data: Vec<u8>,
}

impl PcapRecord {
    pub fn new(timestamp: Duration, data: Vec<u8>) -> Self {
        PcapRecord {
            ts_sec: timestamp.as_secs() as u32,
            ts_usec: timestamp.subsec_micros(),
            orig_len: data.len() as u32,
            data,
        }
    }

    pub fn timestamp(&self) -> Duration {
        Duration::from_secs(u64::from(self.ts_sec)) + Duration::from_micros(u64::from(self.ts_usec))
    }
}

/// Fills `buf` completely. `Ok(false)` on clean EOF before the first byte.
fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool, PcapError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(PcapError::TruncatedFile),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

pub fn read_pcap_from<R: Read>(mut r: R) -> Result<Vec<PcapRecord>, PcapError> {
    let mut header = [0u8; 24];
    if !read_exact_or_eof(&mut r, &mut header)? {
        return Err(PcapError::TruncatedFile);
    }
    let magic = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
    let word: fn([u8; 4]) -> u32 = if magic == MAGIC_USEC {
        u32::from_le_bytes
    } else if magic == MAGIC_USEC.swap_bytes() {
        u32::from_be_bytes
    } else if magic == MAGIC_NSEC || magic == MAGIC_NSEC.swap_bytes() {
        return Err(PcapError::UnsupportedCapture(
            "nanosecond-resolution captures are not supported".into(),
        ));
    } else {
        return Err(PcapError::UnsupportedCapture(format!(
            "unknown magic number {magic:#010x}"
        )));
    };
    let at = |b: &[u8], i: usize| word([b[i], b[i + 1], b[i + 2], b[i + 3]]);

    let linktype = at(&header, 20);
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedCapture(format!(
            "link type {linktype} (only Ethernet is supported)"
        )));
    }

    let mut records = Vec::new();
    let mut rec = [0u8; 16];
    while read_exact_or_eof(&mut r, &mut rec)? {
        let incl_len = at(&rec, 8);
        if incl_len > MAX_RECORD_LEN {
            return Err(PcapError::UnsupportedCapture(format!(
                "record of {incl_len} bytes"
            )));
        }
        let mut data = vec![0u8; incl_len as usize];
        if !data.is_empty() && !read_exact_or_eof(&mut r, &mut data)? {
            return Err(PcapError::TruncatedFile);
        }
        records.push(PcapRecord {
            ts_sec: at(&rec, 0),
            ts_usec: at(&rec, 4),
            orig_len: at(&rec, 12),
            data,
        });
    }
    Ok(records)
}

pub fn write_pcap_to<W: Write>(mut w: W, records: &[PcapRecord]) -> io::Result<()> {
    w.write_all(&MAGIC_USEC.to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&4u16.to_le_bytes())?;
    w.write_all(&0i32.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&SNAPLEN.to_le_bytes())?;
    w.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
    for r in records {
        w.write_all(&r.ts_sec.to_le_bytes())?;
        w.write_all(&r.ts_usec.to_le_bytes())?;
        w.write_all(&(r.data.len() as u32).to_le_bytes())?;
        w.write_all(&r.orig_len.to_le_bytes())?;
        w.write_all(&r.data)?;
    }
    w.flush()
}

pub fn read_pcap(path: impl AsRef<Path>) -> Result<Vec<PcapRecord>, PcapError> {
    read_pcap_from(BufReader::new(File::open(path)?))
}

pub fn write_pcap(path: impl AsRef<Path>, records: &[PcapRecord]) -> Result<(), PcapError> {
    write_pcap_to(BufWriter::new(File::create(path)?), records)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<PcapRecord> {
        (0..3u8)
            .map(|i| {
                PcapRecord::new(
                    Duration::from_micros(1_500_000 * u64::from(i) + 7),
                    vec![i; 54 + usize::from(i)],
                )
            })
            .collect()
    }

    #[test]
    fn write_then_read_three_frames() {
        let mut buf = Vec::new();
        write_pcap_to(&mut buf, &sample()).unwrap();
        assert_eq!(read_pcap_from(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn empty_capture() {
        let mut buf = Vec::new();
        write_pcap_to(&mut buf, &[]).unwrap();
        assert_eq!(buf.len(), 24);
        assert!(read_pcap_from(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn nanosecond_magic_rejected() {
        let mut buf = Vec::new();
        write_pcap_to(&mut buf, &sample()).unwrap();
        buf[..4].copy_from_slice(&MAGIC_NSEC.to_le_bytes());
        assert!(matches!(
            read_pcap_from(buf.as_slice()),
            Err(PcapError::UnsupportedCapture(_))
        ));
    }

    #[test]
    fn other_linktype_rejected() {
        let mut buf = Vec::new();
        write_pcap_to(&mut buf, &sample()).unwrap();
        buf[20] = 101; // LINKTYPE_RAW
        assert!(matches!(
            read_pcap_from(buf.as_slice()),
            Err(PcapError::UnsupportedCapture(_))
        ));
    }

    #[test]
    fn truncation_detected() {
        let mut buf = Vec::new();
        write_pcap_to(&mut buf, &sample()).unwrap();
        for cut in [10, 30, buf.len() - 1] {
            assert!(
                matches!(read_pcap_from(&buf[..cut]), Err(PcapError::TruncatedFile)),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn big_endian_file_accepted() {
        let recs = sample();
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC_USEC.to_be_bytes());
        buf.extend_from_slice(&2u16.to_be_bytes());
        buf.extend_from_slice(&4u16.to_be_bytes());
        buf.extend_from_slice(&[0; 8]);
        buf.extend_from_slice(&SNAPLEN.to_be_bytes());
        buf.extend_from_slice(&1u32.to_be_bytes());
        for r in &recs {
            for v in [r.ts_sec, r.ts_usec, r.data.len() as u32, r.orig_len] {
                buf.extend_from_slice(&v.to_be_bytes());
            }
            buf.extend_from_slice(&r.data);
        }
        assert_eq!(read_pcap_from(buf.as_slice()).unwrap(), recs);
    }
}
