//! Classic libpcap capture files, Ethernet link type.
//!
//! Files are written little-endian with microsecond timestamps. Either byte
//! order is accepted on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{parse, Packet, PacketError};

pub const MAGIC: u32 = 0xa1b2_c3d4;
pub const LINKTYPE_ETHERNET: u32 = 1;
const SNAPLEN: u32 = 65535;

/// One captured frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Frame {
    pub ts_sec: u32,
    pub ts_usec: u32,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(data: Vec<u8>) -> Self {
        Self {
            data,
            ..Self::default()
        }
    }

    /// Timestamp from simulated nanoseconds.
    pub fn at_nanos(ns: u64, data: Vec<u8>) -> Self {
        Self {
            ts_sec: (ns / 1_000_000_000) as u32,
            ts_usec: (ns % 1_000_000_000 / 1000) as u32,
            data,
        }
    }
}

fn format_err(msg: impl Into<String>) -> PacketError {
    PacketError::Format(msg.into())
}

pub fn write_frames<W: Write>(mut w: W, frames: &[Frame]) -> Result<(), PacketError> {
    let mut hdr = Vec::with_capacity(24);
    hdr.extend_from_slice(&MAGIC.to_le_bytes());
    hdr.extend_from_slice(&2u16.to_le_bytes());
    hdr.extend_from_slice(&4u16.to_le_bytes());
    hdr.extend_from_slice(&0i32.to_le_bytes());
    hdr.extend_from_slice(&0u32.to_le_bytes());
    hdr.extend_from_slice(&SNAPLEN.to_le_bytes());
    hdr.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    w.write_all(&hdr)?;
    for f in frames {
        let len = u32::try_from(f.data.len()).map_err(|_| format_err("frame too large"))?;
        w.write_all(&f.ts_sec.to_le_bytes())?;
        w.write_all(&f.ts_usec.to_le_bytes())?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&f.data)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads until `buf` is full. Returns false on a clean EOF before the
/// first byte and an error on EOF partway through.
fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<bool, PacketError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(format_err(format!("truncated {what}"))),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

pub fn read_frames<R: Read>(mut r: R) -> Result<Vec<Frame>, PacketError> {
    let mut hdr = [0u8; 24];
    if !read_exact_or_eof(&mut r, &mut hdr, "global header")? {
        return Err(format_err("truncated global header"));
    }
    let swapped = match u32::from_le_bytes(hdr[0..4].try_into().unwrap()) {
        MAGIC => false,
        m if m.swap_bytes() == MAGIC => true,
        m => return Err(format_err(format!("bad magic {m:#010x}"))),
    };
    let word = |b: &[u8]| {
        let v = u32::from_le_bytes(b.try_into().unwrap());
        if swapped {
            v.swap_bytes()
        } else {
            v
        }
    };
    let linktype = word(&hdr[20..24]);
    if linktype != LINKTYPE_ETHERNET {
        return Err(format_err(format!("unsupported link type {linktype}")));
    }

    let mut frames = Vec::new();
    let mut rec = [0u8; 16];
    while read_exact_or_eof(&mut r, &mut rec, "record header")? {
        let incl = word(&rec[8..12]) as usize;
        if incl > SNAPLEN as usize {
            return Err(format_err(format!("record length {incl} exceeds snaplen")));
        }
        let mut data = vec![0u8; incl];
        if incl > 0 && !read_exact_or_eof(&mut r, &mut data, "record data")? {
            return Err(format_err("truncated record data"));
        }
        frames.push(Frame {
            ts_sec: word(&rec[0..4]),
            ts_usec: word(&rec[4..8]),
            data,
        });
    }
    Ok(frames)
}

pub fn write_file(path: impl AsRef<Path>, frames: &[Frame]) -> Result<(), PacketError> {
    write_frames(BufWriter::new(File::create(path)?), frames)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<Frame>, PacketError> {
    read_frames(BufReader::new(File::open(path)?))
}

/// Reads a capture and parses every frame.
pub fn pcap_read(path: impl AsRef<Path>) -> Result<Vec<Packet>, PacketError> {
    read_file(path)?.iter().map(|f| parse(&f.data)).collect()
}

pub fn pcap_write(path: impl AsRef<Path>, packets: &[Packet]) -> Result<(), PacketError> {
    let frames = packets
        .iter()
        .map(|p| super::serialize(p).map(Frame::new))
        .collect::<Result<Vec<_>, _>>()?;
    write_file(path, &frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{build_roce_packet, build_udp_packet, PacketTemplate};

    #[test]
    fn hundred_packets_round_trip() {
        let t = PacketTemplate::default();
        let packets: Vec<Packet> = (0..100u32)
            .map(|i| {
                let payload = vec![i as u8; 16 * (1 + i as usize % 8)];
                if i % 2 == 0 {
                    build_udp_packet(&t, &payload).unwrap()
                } else {
                    build_roce_packet(&t, i, &payload).unwrap()
                }
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cap.pcap");
        pcap_write(&path, &packets).unwrap();
        assert_eq!(pcap_read(&path).unwrap(), packets);
    }

    #[test]
    fn empty_capture() {
        let mut buf = Vec::new();
        write_frames(&mut buf, &[]).unwrap();
        assert_eq!(buf.len(), 24);
        assert!(read_frames(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn big_endian_files_are_accepted() {
        let frame = Frame {
            ts_sec: 5,
            ts_usec: 7,
            data: vec![1, 2, 3],
        };
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC.to_be_bytes());
        buf.extend_from_slice(&2u16.to_be_bytes());
        buf.extend_from_slice(&4u16.to_be_bytes());
        buf.extend_from_slice(&[0; 8]);
        buf.extend_from_slice(&SNAPLEN.to_be_bytes());
        buf.extend_from_slice(&1u32.to_be_bytes());
        for v in [5u32, 7, 3, 3] {
            buf.extend_from_slice(&v.to_be_bytes());
        }
        buf.extend_from_slice(&[1, 2, 3]);
        assert_eq!(&buf[..4], &[0xa1, 0xb2, 0xc3, 0xd4]);
        assert_eq!(read_frames(&buf[..]).unwrap(), vec![frame]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(
            read_frames(&[0u8; 24][..]),
            Err(PacketError::Format(_))
        ));
        assert!(matches!(
            read_frames(&[0u8; 3][..]),
            Err(PacketError::Format(_))
        ));

        let mut buf = Vec::new();
        write_frames(&mut buf, &[Frame::new(vec![9; 40])]).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_frames(&buf[..]), Err(PacketError::Format(_))));
        buf.truncate(30);
        assert!(matches!(read_frames(&buf[..]), Err(PacketError::Format(_))));
    }

    #[test]
    fn timestamps_from_nanos() {
        let f = Frame::at_nanos(3_000_250_999, vec![]);
        assert_eq!((f.ts_sec, f.ts_usec), (3, 250));
    }
}
