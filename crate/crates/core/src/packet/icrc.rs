//! RoCEv2 invariant CRC.
//!
//! CRC-32 (the Ethernet polynomial, reflected, final complement) over:
//! eight 0xff bytes standing in for the InfiniBand LRH, then the IPv4, UDP
//! and BTH headers and the payload. Fields routers may rewrite are set to
//! all ones first: IPv4 DSCP/ECN, TTL and header checksum, the UDP
//! checksum, and the BTH reserved byte in front of the destination QP. The
//! result is appended little-endian.

use super::{serialize, Packet, PacketError, PacketKind, ETH_LEN, ICRC_LEN, IPV4_LEN, UDP_LEN};

/// Byte string the ICRC covers, with variant fields masked.
pub(crate) fn masked_bytes(p: &Packet) -> Result<Vec<u8>, PacketError> {
    if p.kind() != PacketKind::Roce {
        return Err(PacketError::NotRoce);
    }
    // The progress header never reaches the wire, so it is not covered.
    let mut wire = p.clone();
    wire.recirc = None;
    let frame = serialize(&wire)?;

    let mut out = Vec::with_capacity(8 + frame.len() - ETH_LEN - ICRC_LEN);
    out.extend_from_slice(&[0xff; 8]);
    let start = out.len();
    out.extend_from_slice(&frame[ETH_LEN..frame.len() - ICRC_LEN]);

    let ip = start;
    out[ip + 1] = 0xff;
    out[ip + 8] = 0xff;
    out[ip + 10] = 0xff;
    out[ip + 11] = 0xff;
    let udp = ip + IPV4_LEN;
    out[udp + 6] = 0xff;
    out[udp + 7] = 0xff;
    let bth = udp + UDP_LEN;
    out[bth + 4] = 0xff;
    Ok(out)
}

pub fn compute_icrc(p: &Packet) -> Result<u32, PacketError> {
    Ok(crc32fast::hash(&masked_bytes(p)?))
}

pub fn verify_icrc(p: &Packet) -> Result<bool, PacketError> {
    let stored = p.roce.ok_or(PacketError::NotRoce)?.icrc;
    Ok(compute_icrc(p)? == stored)
}
