use std::net::Ipv4Addr;

use super::{
    compute_icrc, Bth, EthernetHeader, Ipv4Header, MacAddr, Packet, PacketError, RoceHeaders,
    UdpHeader, ETHERTYPE_IPV4, IP_PROTO_UDP, ROCEV2_UDP_PORT,
};
use crate::aes_core::BLOCK_LEN;

/// Fixed header fields for generated traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketTemplate {
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub ttl: u8,
    pub src_port: u16,
    /// Ignored for RoCEv2, which always uses 4791.
    pub dst_port: u16,
    pub pkey: u16,
    pub dest_qp: u32,
}

impl Default for PacketTemplate {
    fn default() -> Self {
        Self {
            src_mac: MacAddr([0x02, 0x00, 0x00, 0x00, 0x00, 0x01]),
            dst_mac: MacAddr([0x02, 0x00, 0x00, 0x00, 0x00, 0x02]),
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            ttl: 64,
            src_port: 49152,
            dst_port: 9000,
            pkey: 0xffff,
            dest_qp: 0x11,
        }
    }
}

fn check_payload(payload: &[u8]) -> Result<(), PacketError> {
    if payload.is_empty() || !payload.len().is_multiple_of(BLOCK_LEN) {
        return Err(PacketError::PayloadSize(payload.len()));
    }
    Ok(())
}

fn base(t: &PacketTemplate, dst_port: u16, payload: &[u8]) -> Packet {
    Packet {
        eth: EthernetHeader {
            dst: t.dst_mac,
            src: t.src_mac,
            ethertype: ETHERTYPE_IPV4,
        },
        ipv4: Some(Ipv4Header {
            dscp_ecn: 0,
            total_length: 0,
            identification: 0,
            flags_fragment: 0x4000,
            ttl: t.ttl,
            protocol: IP_PROTO_UDP,
            checksum: 0,
            src: t.src_ip,
            dst: t.dst_ip,
        }),
        udp: Some(UdpHeader {
            src_port: t.src_port,
            dst_port,
            length: 0,
            checksum: 0,
        }),
        roce: None,
        recirc: None,
        payload: payload.to_vec(),
    }
}

/// Payload must be a positive multiple of 16 bytes.
pub fn build_udp_packet(t: &PacketTemplate, payload: &[u8]) -> Result<Packet, PacketError> {
    check_payload(payload)?;
    let mut p = base(t, t.dst_port, payload);
    p.sync_lengths();
    Ok(p)
}

/// RC SEND Only with the given PSN (truncated to 24 bits) and a valid ICRC.
pub fn build_roce_packet(
    t: &PacketTemplate,
    psn: u32,
    payload: &[u8],
) -> Result<Packet, PacketError> {
    check_payload(payload)?;
    let mut p = base(t, ROCEV2_UDP_PORT, payload);
    p.roce = Some(RoceHeaders {
        bth: Bth {
            opcode: Bth::OPCODE_RC_SEND_ONLY,
            flags: 0,
            pkey: t.pkey,
            resv8a: 0,
            dest_qp: t.dest_qp & 0x00ff_ffff,
            ack_req: 0,
            psn: psn & 0x00ff_ffff,
        },
        icrc: 0,
    });
    p.sync_lengths();
    let icrc = compute_icrc(&p)?;
    p.roce.as_mut().unwrap().icrc = icrc;
    Ok(p)
}

/// Builds consecutive RoCEv2 packets on one queue pair, PSN incrementing by
/// one per packet modulo 2^24.
#[derive(Debug, Clone)]
pub struct RoceSequence {
    template: PacketTemplate,
    next_psn: u32,
}

impl RoceSequence {
    pub fn new(template: PacketTemplate, first_psn: u32) -> Self {
        Self {
            template,
            next_psn: first_psn & 0x00ff_ffff,
        }
    }

    pub fn next_packet(&mut self, payload: &[u8]) -> Result<Packet, PacketError> {
        let p = build_roce_packet(&self.template, self.next_psn, payload)?;
        self.next_psn = (self.next_psn + 1) & 0x00ff_ffff;
        Ok(p)
    }
}
