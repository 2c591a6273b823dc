//! Ethernet/IPv4/UDP/RoCEv2 framing, the in-pipeline progress header, and
//! capture files.
//!
//! Wire layout of the two encryptable packet kinds:
//!
//! ```text
//! UDP:    | Ethernet 14 | IPv4 20 | UDP 8 | [recirc 4] | payload ...        |
//! RoCEv2: | Ethernet 14 | IPv4 20 | UDP 8 | BTH 12 | [recirc 4] | payload ... | ICRC 4 |
//! ```
//!
//! The recirculation header only exists while a packet is looping through
//! the pipeline. It is never present on ingress or egress frames, so the
//! parser only looks for it when told the frame came in on a recirculation
//! port.

mod build;
pub mod hexdump;
mod icrc;
pub mod pcap;

use std::net::Ipv4Addr;

use thiserror::Error;

use crate::aes_core::BLOCK_LEN;

pub use build::{build_roce_packet, build_udp_packet, PacketTemplate, RoceSequence};
pub use icrc::{compute_icrc, verify_icrc};

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const IP_PROTO_UDP: u8 = 17;
pub const ROCEV2_UDP_PORT: u16 = 4791;

pub const ETH_LEN: usize = 14;
pub const IPV4_LEN: usize = 20;
pub const UDP_LEN: usize = 8;
pub const BTH_LEN: usize = 12;
pub const ICRC_LEN: usize = 4;
pub const RECIRC_LEN: usize = 4;

/// Headers in front of a plain UDP payload.
pub const UDP_HEADERS_LEN: usize = ETH_LEN + IPV4_LEN + UDP_LEN;
/// Headers and trailer around a RoCEv2 payload.
pub const ROCE_HEADERS_LEN: usize = UDP_HEADERS_LEN + BTH_LEN + ICRC_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("truncated {layer} header: need {need} bytes, have {have}")]
    Truncated {
        layer: Layer,
        need: usize,
        have: usize,
    },
    #[error("unsupported {layer} header: {reason}")]
    Unsupported { layer: Layer, reason: &'static str },
    #[error("inconsistent header stack: {0}")]
    Inconsistent(&'static str),
    #[error("payload of {0} bytes is not a positive multiple of 16")]
    PayloadSize(usize),
    #[error("ICRC is only defined for RoCEv2 packets")]
    NotRoce,
    #[error("capture format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is neither `Clone` nor `PartialEq`; keep the message.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for PacketError {
    fn from(e: std::io::Error) -> Self {
        PacketError::Io(IoError(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Ethernet,
    Ipv4,
    Udp,
    Bth,
    Recirc,
    Icrc,
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layer::Ethernet => "ethernet",
            Layer::Ipv4 => "ipv4",
            Layer::Udp => "udp",
            Layer::Bth => "bth",
            Layer::Recirc => "recirc",
            Layer::Icrc => "icrc",
        })
    }
}

fn need(layer: Layer, buf: &[u8], n: usize) -> Result<(), PacketError> {
    if buf.len() < n {
        Err(PacketError::Truncated {
            layer,
            need: n,
            have: buf.len(),
        })
    } else {
        Ok(())
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MacAddr(pub [u8; 6]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EthernetHeader {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub ethertype: u16,
}

impl EthernetHeader {
    fn parse(buf: &[u8]) -> Result<Self, PacketError> {
        need(Layer::Ethernet, buf, ETH_LEN)?;
        Ok(Self {
            dst: MacAddr(buf[0..6].try_into().unwrap()),
            src: MacAddr(buf[6..12].try_into().unwrap()),
            ethertype: be16(&buf[12..14]),
        })
    }

    fn emit(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.dst.0);
        out.extend_from_slice(&self.src.0);
        out.extend_from_slice(&self.ethertype.to_be_bytes());
    }
}

/// IPv4 without options. `total_length` and `checksum` are recomputed on
/// serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub dscp_ecn: u8,
    pub total_length: u16,
    pub identification: u16,
    pub flags_fragment: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub checksum: u16,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
}

impl Ipv4Header {
    const VERSION_IHL: u8 = 0x45;

    fn parse(buf: &[u8]) -> Result<Self, PacketError> {
        need(Layer::Ipv4, buf, IPV4_LEN)?;
        if buf[0] >> 4 != 4 {
            return Err(PacketError::Unsupported {
                layer: Layer::Ipv4,
                reason: "version is not 4",
            });
        }
        if buf[0] & 0x0f != 5 {
            return Err(PacketError::Unsupported {
                layer: Layer::Ipv4,
                reason: "options are not supported",
            });
        }
        Ok(Self {
            dscp_ecn: buf[1],
            total_length: be16(&buf[2..4]),
            identification: be16(&buf[4..6]),
            flags_fragment: be16(&buf[6..8]),
            ttl: buf[8],
            protocol: buf[9],
            checksum: be16(&buf[10..12]),
            src: Ipv4Addr::new(buf[12], buf[13], buf[14], buf[15]),
            dst: Ipv4Addr::new(buf[16], buf[17], buf[18], buf[19]),
        })
    }

    fn to_bytes(self) -> [u8; IPV4_LEN] {
        let mut b = [0u8; IPV4_LEN];
        b[0] = Self::VERSION_IHL;
        b[1] = self.dscp_ecn;
        b[2..4].copy_from_slice(&self.total_length.to_be_bytes());
        b[4..6].copy_from_slice(&self.identification.to_be_bytes());
        b[6..8].copy_from_slice(&self.flags_fragment.to_be_bytes());
        b[8] = self.ttl;
        b[9] = self.protocol;
        b[10..12].copy_from_slice(&self.checksum.to_be_bytes());
        b[12..16].copy_from_slice(&self.src.octets());
        b[16..20].copy_from_slice(&self.dst.octets());
        b
    }

    /// Header with the given total length and a valid checksum.
    fn finalized(mut self, total_length: u16) -> [u8; IPV4_LEN] {
        self.total_length = total_length;
        self.checksum = 0;
        let mut b = self.to_bytes();
        let sum = ipv4_checksum(&b);
        b[10..12].copy_from_slice(&sum.to_be_bytes());
        b
    }
}

/// Ones' complement of the ones' complement sum of 16-bit words.
pub fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|w| u16::from_be_bytes([w[0], *w.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub length: u16,
    pub checksum: u16,
}

impl UdpHeader {
    fn parse(buf: &[u8]) -> Result<Self, PacketError> {
        need(Layer::Udp, buf, UDP_LEN)?;
        Ok(Self {
            src_port: be16(&buf[0..2]),
            dst_port: be16(&buf[2..4]),
            length: be16(&buf[4..6]),
            checksum: be16(&buf[6..8]),
        })
    }

    fn to_bytes(self) -> [u8; UDP_LEN] {
        let mut b = [0u8; UDP_LEN];
        b[0..2].copy_from_slice(&self.src_port.to_be_bytes());
        b[2..4].copy_from_slice(&self.dst_port.to_be_bytes());
        b[4..6].copy_from_slice(&self.length.to_be_bytes());
        b[6..8].copy_from_slice(&self.checksum.to_be_bytes());
        b
    }
}

/// InfiniBand Base Transport Header as carried by RoCEv2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bth {
    pub opcode: u8,
    /// SE, M, PadCnt and TVer packed as on the wire.
    pub flags: u8,
    pub pkey: u16,
    /// Reserved byte in front of the destination QP; masked in the ICRC.
    pub resv8a: u8,
    /// 24 bits.
    pub dest_qp: u32,
    /// AckReq bit plus 7 reserved bits.
    pub ack_req: u8,
    /// 24 bits.
    pub psn: u32,
}

impl Bth {
    /// RC SEND Only.
    pub const OPCODE_RC_SEND_ONLY: u8 = 0x04;

    fn parse(buf: &[u8]) -> Result<Self, PacketError> {
        need(Layer::Bth, buf, BTH_LEN)?;
        Ok(Self {
            opcode: buf[0],
            flags: buf[1],
            pkey: be16(&buf[2..4]),
            resv8a: buf[4],
            dest_qp: u32::from_be_bytes([0, buf[5], buf[6], buf[7]]),
            ack_req: buf[8],
            psn: u32::from_be_bytes([0, buf[9], buf[10], buf[11]]),
        })
    }

    fn to_bytes(self) -> [u8; BTH_LEN] {
        let mut b = [0u8; BTH_LEN];
        b[0] = self.opcode;
        b[1] = self.flags;
        b[2..4].copy_from_slice(&self.pkey.to_be_bytes());
        b[4] = self.resv8a;
        b[5..8].copy_from_slice(&self.dest_qp.to_be_bytes()[1..]);
        b[8] = self.ack_req;
        b[9..12].copy_from_slice(&self.psn.to_be_bytes()[1..]);
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoceHeaders {
    pub bth: Bth,
    pub icrc: u32,
}

/// Encryption progress, carried between the transport header and the
/// payload while a packet recirculates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecircHeader {
    /// Rounds completed on the current block, 0..=10.
    pub round: u8,
    /// Block currently being encrypted.
    pub block: u8,
    pub total_blocks: u8,
    pub flags: u8,
}

impl RecircHeader {
    pub const FLAG_IN_PROGRESS: u8 = 0x01;

    pub fn start(total_blocks: u8) -> Self {
        Self {
            round: 0,
            block: 0,
            total_blocks,
            flags: Self::FLAG_IN_PROGRESS,
        }
    }

    pub fn in_progress(&self) -> bool {
        self.flags & Self::FLAG_IN_PROGRESS != 0
    }

    fn check(&self) -> Result<(), PacketError> {
        if self.round as usize > crate::aes_core::ROUNDS {
            return Err(PacketError::Inconsistent("recirc round above 10"));
        }
        if self.block >= self.total_blocks {
            return Err(PacketError::Inconsistent("recirc block index past total"));
        }
        Ok(())
    }

    fn parse(buf: &[u8]) -> Result<Self, PacketError> {
        need(Layer::Recirc, buf, RECIRC_LEN)?;
        let h = Self {
            round: buf[0],
            block: buf[1],
            total_blocks: buf[2],
            flags: buf[3],
        };
        h.check().map_err(|_| PacketError::Unsupported {
            layer: Layer::Recirc,
            reason: "progress fields out of range",
        })?;
        Ok(h)
    }

    fn to_bytes(self) -> [u8; RECIRC_LEN] {
        [self.round, self.block, self.total_blocks, self.flags]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketKind {
    /// Not IPv4; forwarded as-is.
    Opaque,
    /// IPv4 but not UDP.
    Ipv4,
    Udp,
    Roce,
}

/// A parsed frame. Everything after the innermost recognized header, minus
/// the RoCE trailer, is `payload`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub eth: EthernetHeader,
    pub ipv4: Option<Ipv4Header>,
    pub udp: Option<UdpHeader>,
    pub roce: Option<RoceHeaders>,
    pub recirc: Option<RecircHeader>,
    pub payload: Vec<u8>,
}

/// Whether the parser should expect a recirculation header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseContext {
    #[default]
    Wire,
    Recirculated,
}

pub fn parse(bytes: &[u8]) -> Result<Packet, PacketError> {
    parse_with(bytes, ParseContext::Wire)
}

pub fn parse_recirculated(bytes: &[u8]) -> Result<Packet, PacketError> {
    parse_with(bytes, ParseContext::Recirculated)
}

pub fn parse_with(bytes: &[u8], ctx: ParseContext) -> Result<Packet, PacketError> {
    let eth = EthernetHeader::parse(bytes)?;
    let rest = &bytes[ETH_LEN..];
    let mut pkt = Packet {
        eth,
        ipv4: None,
        udp: None,
        roce: None,
        recirc: None,
        payload: Vec::new(),
    };
    if eth.ethertype != ETHERTYPE_IPV4 {
        pkt.payload = rest.to_vec();
        return Ok(pkt);
    }

    let ip = Ipv4Header::parse(rest)?;
    let ip_len = ip.total_length as usize;
    if ip_len < IPV4_LEN {
        return Err(PacketError::Unsupported {
            layer: Layer::Ipv4,
            reason: "total length shorter than header",
        });
    }
    need(Layer::Ipv4, rest, ip_len)?;
    // Anything past total_length is link-layer padding and is dropped.
    let ip_body = &rest[IPV4_LEN..ip_len];
    pkt.ipv4 = Some(ip);
    if ip.protocol != IP_PROTO_UDP {
        pkt.payload = ip_body.to_vec();
        return Ok(pkt);
    }

    let udp = UdpHeader::parse(ip_body)?;
    let udp_len = udp.length as usize;
    if udp_len < UDP_LEN {
        return Err(PacketError::Unsupported {
            layer: Layer::Udp,
            reason: "length shorter than header",
        });
    }
    need(Layer::Udp, ip_body, udp_len)?;
    let mut body = &ip_body[UDP_LEN..udp_len];
    pkt.udp = Some(udp);

    if udp.dst_port == ROCEV2_UDP_PORT {
        let bth = Bth::parse(body)?;
        body = &body[BTH_LEN..];
        need(Layer::Icrc, body, ICRC_LEN)?;
        let (inner, trailer) = body.split_at(body.len() - ICRC_LEN);
        body = inner;
        pkt.roce = Some(RoceHeaders {
            bth,
            icrc: u32::from_le_bytes(trailer.try_into().unwrap()),
        });
    }
    if ctx == ParseContext::Recirculated {
        pkt.recirc = Some(RecircHeader::parse(body)?);
        body = &body[RECIRC_LEN..];
    }
    pkt.payload = body.to_vec();
    Ok(pkt)
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match (&self.ipv4, &self.udp, &self.roce) {
            (None, _, _) => PacketKind::Opaque,
            (Some(_), None, _) => PacketKind::Ipv4,
            (Some(_), Some(_), None) => PacketKind::Udp,
            (Some(_), Some(_), Some(_)) => PacketKind::Roce,
        }
    }

    /// Octets occupied by everything except the payload.
    pub fn header_len(&self) -> usize {
        ETH_LEN
            + self.ipv4.map_or(0, |_| IPV4_LEN)
            + self.udp.map_or(0, |_| UDP_LEN)
            + self.roce.map_or(0, |_| BTH_LEN + ICRC_LEN)
            + self.recirc.map_or(0, |_| RECIRC_LEN)
    }

    pub fn wire_len(&self) -> usize {
        self.header_len() + self.payload.len()
    }

    pub fn block_count(&self) -> usize {
        self.payload.len() / BLOCK_LEN
    }

    pub fn blocks(&self) -> std::slice::ChunksExact<'_, u8> {
        self.payload.chunks_exact(BLOCK_LEN)
    }

    /// UDP or RoCEv2 with at least one block and no partial trailing block.
    pub fn is_encryptable(&self) -> bool {
        matches!(self.kind(), PacketKind::Udp | PacketKind::Roce)
            && !self.payload.is_empty()
            && self.payload.len().is_multiple_of(BLOCK_LEN)
    }

    /// Rewrites the derived length and checksum fields to what
    /// [`serialize`] will emit, so that `parse(serialize(p)) == p`.
    pub fn sync_lengths(&mut self) {
        let ip_total = (self.wire_len() - ETH_LEN) as u16;
        if let Some(ip) = self.ipv4.as_mut() {
            let b = ip.finalized(ip_total);
            ip.total_length = ip_total;
            ip.checksum = be16(&b[10..12]);
        }
        if let Some(udp) = self.udp.as_mut() {
            udp.length = ip_total - IPV4_LEN as u16;
        }
    }

    fn check_stack(&self) -> Result<(), PacketError> {
        match (&self.ipv4, &self.udp, &self.roce) {
            (None, Some(_), _) => return Err(PacketError::Inconsistent("udp without ipv4")),
            (_, None, Some(_)) => return Err(PacketError::Inconsistent("bth without udp")),
            _ => {}
        }
        if self.ipv4.is_some() != (self.eth.ethertype == ETHERTYPE_IPV4) {
            return Err(PacketError::Inconsistent(
                "ethertype does not match ipv4 presence",
            ));
        }
        if let Some(ip) = &self.ipv4 {
            if self.udp.is_some() != (ip.protocol == IP_PROTO_UDP) {
                return Err(PacketError::Inconsistent(
                    "ip protocol does not match udp presence",
                ));
            }
        }
        if let Some(udp) = &self.udp {
            if self.roce.is_some() != (udp.dst_port == ROCEV2_UDP_PORT) {
                return Err(PacketError::Inconsistent(
                    "udp port does not match bth presence",
                ));
            }
        }
        if let Some(r) = &self.recirc {
            if self.udp.is_none() {
                return Err(PacketError::Inconsistent("recirc header without udp"));
            }
            r.check()?;
        }
        if self.wire_len() - ETH_LEN > u16::MAX as usize {
            return Err(PacketError::Inconsistent("packet too long for ipv4"));
        }
        Ok(())
    }
}

/// Deparser. IPv4 total length and checksum and UDP length are recomputed;
/// every other field is emitted as stored.
pub fn serialize(p: &Packet) -> Result<Vec<u8>, PacketError> {
    p.check_stack()?;
    let mut out = Vec::with_capacity(p.wire_len());
    p.eth.emit(&mut out);
    let Some(ip) = p.ipv4 else {
        out.extend_from_slice(&p.payload);
        return Ok(out);
    };
    let ip_total = (p.wire_len() - ETH_LEN) as u16;
    out.extend_from_slice(&ip.finalized(ip_total));
    if let Some(mut udp) = p.udp {
        udp.length = ip_total - IPV4_LEN as u16;
        out.extend_from_slice(&udp.to_bytes());
        if let Some(roce) = &p.roce {
            out.extend_from_slice(&roce.bth.to_bytes());
        }
        if let Some(r) = &p.recirc {
            out.extend_from_slice(&r.to_bytes());
        }
        out.extend_from_slice(&p.payload);
        if let Some(roce) = &p.roce {
            out.extend_from_slice(&roce.icrc.to_le_bytes());
        }
    } else {
        out.extend_from_slice(&p.payload);
    }
    Ok(out)
}
