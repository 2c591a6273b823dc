//! The switch model: parser, forwarding table, recirculating encryption,
//! deparser, and the capacity limits of the ingress and recirculation
//! paths.
//!
//! A packet's life:
//!
//! 1. Ingress admission against the source rate limit.
//! 2. Parse, then exact-match on the ingress port. Unmatched ports drop.
//! 3. UDP and RoCEv2 packets made of 1..=`max_blocks` whole blocks get a
//!    progress header and are handed to a recirculation port, after
//!    reserving their passes from the recirculation budget.
//! 4. Each pass deparses the packet, re-enters on the recirculation port,
//!    and runs `rounds_per_pass` table rounds on the current block.
//! 5. After the last round of the last block the progress header is
//!    stripped, the ICRC is recomputed, and the packet leaves on the egress
//!    port chosen at first ingress.

mod bucket;
mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::aes_core::{StateBlock, BLOCK_LEN, ROUNDS};
use crate::packet::{self, pcap::Frame, Packet, PacketError, PacketKind, RecircHeader};
use crate::ttables::{apply_round, RoundError, RoundState, ScrambledTables};

pub use bucket::TokenBucket;
pub use config::{
    validate_config, ConfigError, PipelineConfig, PipelineFile, DEFAULT_RECIRC_PASS_RATE,
    DEFAULT_SOURCE_PPS_CAP,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid port: {0}")]
    Port(String),
    #[error("packet is not recirculating")]
    NotInFlight,
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Round(#[from] RoundError),
}

pub const FRONT_PANEL_PORTS: u16 = 64;

/// Switch port. Front-panel ports are `0..64`; the CPU port and the two
/// internal recirculation ports sit above them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PortId(u16);

impl PortId {
    pub const CPU: PortId = PortId(64);
    pub const RECIRC_0: PortId = PortId(68);
    pub const RECIRC_1: PortId = PortId(69);

    pub fn front(n: u16) -> Result<Self, PipelineError> {
        if n < FRONT_PANEL_PORTS {
            Ok(Self(n))
        } else {
            Err(PipelineError::Port(format!(
                "front-panel port {n} out of range 0..64"
            )))
        }
    }

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn is_front_panel(self) -> bool {
        self.0 < FRONT_PANEL_PORTS
    }

    pub fn is_recirculation(self) -> bool {
        self == Self::RECIRC_0 || self == Self::RECIRC_1
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::CPU => f.write_str("cpu"),
            Self::RECIRC_0 => f.write_str("recirc0"),
            Self::RECIRC_1 => f.write_str("recirc1"),
            PortId(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for PortId {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cpu" => Ok(Self::CPU),
            "recirc0" => Ok(Self::RECIRC_0),
            "recirc1" => Ok(Self::RECIRC_1),
            n => Self::front(
                n.parse()
                    .map_err(|_| PipelineError::Port(format!("not a port: {n:?}")))?,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    SetEgressPort(PortId),
    SendToCpu,
    Drop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::SetEgressPort(p) => write!(f, "egress {p}"),
            Action::SendToCpu => f.write_str("cpu"),
            Action::Drop => f.write_str("drop"),
        }
    }
}

impl FromStr for Action {
    type Err = PipelineError;

    /// `egress <port>`, `cpu`, or `drop`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut words = s.split_whitespace();
        match (words.next(), words.next(), words.next()) {
            (Some("egress"), Some(p), None) => Ok(Action::SetEgressPort(p.parse()?)),
            (Some("cpu"), None, None) => Ok(Action::SendToCpu),
            (Some("drop"), None, None) => Ok(Action::Drop),
            _ => Err(PipelineError::Port(format!("unknown action {s:?}"))),
        }
    }
}

/// Exact match on ingress port. Misses drop.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardingTable {
    entries: BTreeMap<PortId, Action>,
}

impl ForwardingTable {
    pub fn insert(&mut self, ingress: PortId, action: Action) -> Result<(), PipelineError> {
        if !ingress.is_front_panel() {
            return Err(PipelineError::Port(format!(
                "entries match front-panel ports only, got {ingress}"
            )));
        }
        if let Action::SetEgressPort(p) = action {
            if !p.is_front_panel() {
                return Err(PipelineError::Port(format!("cannot egress on {p}")));
            }
        }
        self.entries.insert(ingress, action);
        Ok(())
    }

    pub fn remove(&mut self, ingress: PortId) -> Option<Action> {
        self.entries.remove(&ingress)
    }

    pub fn lookup(&self, ingress: PortId) -> Option<Action> {
        self.entries.get(&ingress).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (PortId, Action)> + '_ {
        self.entries.iter().map(|(p, a)| (*p, *a))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoMatch,
    ActionDrop,
    ParseError,
    OverMaxBlocks,
    CapacityExceeded,
    NoKey,
}

impl DropReason {
    pub const ALL: [DropReason; 6] = [
        DropReason::NoMatch,
        DropReason::ActionDrop,
        DropReason::ParseError,
        DropReason::OverMaxBlocks,
        DropReason::CapacityExceeded,
        DropReason::NoKey,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NoMatch => "no_match",
            DropReason::ActionDrop => "action_drop",
            DropReason::ParseError => "parse_error",
            DropReason::OverMaxBlocks => "over_max_blocks",
            DropReason::CapacityExceeded => "capacity_exceeded",
            DropReason::NoKey => "no_key",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PortCounters {
    pub rx_packets: u64,
    pub rx_octets: u64,
    pub tx_packets: u64,
    pub tx_octets: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    pub ports: BTreeMap<PortId, PortCounters>,
    pub ingress_packets: u64,
    pub egress_packets: u64,
    pub cpu_packets: u64,
    /// Egressed packets whose payload was encrypted.
    pub encrypted_packets: u64,
    /// Total recirculation passes.
    pub recirculations: u64,
    pub drops: BTreeMap<DropReason, u64>,
}

impl PipelineStats {
    pub fn dropped(&self, reason: DropReason) -> u64 {
        self.drops.get(&reason).copied().unwrap_or(0)
    }

    pub fn total_drops(&self) -> u64 {
        self.drops.values().sum()
    }

    /// Every ingress packet egressed, went to the CPU, or dropped.
    pub fn is_conserved(&self) -> bool {
        self.ingress_packets == self.egress_packets + self.cpu_packets + self.total_drops()
    }
}

/// A packet looping through the recirculation ports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    pub packet: Packet,
    pub ingress: PortId,
    /// Latched at first ingress; not re-looked-up on later passes.
    pub egress: PortId,
    pub recirc_port: PortId,
    pub passes: u32,
    /// Passes still covered by the admission reservation. `None` when the
    /// recirculation path is unlimited.
    pub reserved_passes: Option<u32>,
}

impl InFlight {
    pub fn progress(&self) -> Option<RecircHeader> {
        self.packet.recirc
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgressReady {
    pub packet: Packet,
    pub port: PortId,
    pub passes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    InFlight(InFlight),
    EgressReady(EgressReady),
    Dropped(DropReason),
}

/// What ingress decided.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PipelineEvent {
    /// Left unmodified on a front-panel port.
    Forwarded {
        port: PortId,
    },
    ToCpu,
    Dropped(DropReason),
    /// Entered the encryption path.
    Encrypting(InFlight),
}

/// One frame arriving on a port at a simulated time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrival {
    pub time_ns: u64,
    pub port: PortId,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgressRecord {
    pub time_ns: u64,
    pub port: PortId,
    pub frame: Vec<u8>,
}

impl EgressRecord {
    pub fn to_frame(&self) -> Frame {
        Frame::at_nanos(self.time_ns, self.frame.clone())
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    forwarding: ForwardingTable,
    tables: Option<Arc<ScrambledTables>>,
    stats: PipelineStats,
    now_ns: u64,
    source: Option<TokenBucket>,
    recirc: Option<TokenBucket>,
    next_recirc: bool,
    capture_egress: bool,
    egress_log: Vec<EgressRecord>,
    cpu_log: Vec<EgressRecord>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("forwarding", &self.forwarding)
            .field("key_id", &self.tables.as_ref().map(|t| t.key_id().clone()))
            .field("now_ns", &self.now_ns)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(config: PipelineConfig, forwarding: ForwardingTable) -> Result<Self, PipelineError> {
        validate_config(&config)?;
        let source = config
            .source_pps_cap
            .map(|rate| TokenBucket::new(rate, config.source_burst));
        let recirc = config
            .recirc_pass_rate
            .map(|rate| TokenBucket::new(rate, config.recirc_burst));
        Ok(Self {
            config,
            forwarding,
            tables: None,
            stats: PipelineStats::default(),
            now_ns: 0,
            source,
            recirc,
            next_recirc: false,
            capture_egress: true,
            egress_log: Vec::new(),
            cpu_log: Vec::new(),
        })
    }

    pub fn from_file(file: PipelineFile) -> Result<Self, PipelineError> {
        Self::new(file.config, file.forwarding)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn forwarding(&self) -> &ForwardingTable {
        &self.forwarding
    }

    pub fn forwarding_mut(&mut self) -> &mut ForwardingTable {
        &mut self.forwarding
    }

    /// Replaces the active tables in one step.
    pub fn install_tables(&mut self, tables: Arc<ScrambledTables>) {
        self.tables = Some(tables);
    }

    pub fn tables(&self) -> Option<&Arc<ScrambledTables>> {
        self.tables.as_ref()
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    pub fn now_ns(&self) -> u64 {
        self.now_ns
    }

    /// Moves the simulated clock forward. Earlier times are ignored.
    pub fn advance_to(&mut self, time_ns: u64) {
        self.now_ns = self.now_ns.max(time_ns);
    }

    /// Whether egressed frames are kept in memory. On by default.
    pub fn set_capture(&mut self, on: bool) {
        self.capture_egress = on;
    }

    pub fn egress_log(&self) -> &[EgressRecord] {
        &self.egress_log
    }

    pub fn cpu_log(&self) -> &[EgressRecord] {
        &self.cpu_log
    }

    pub fn take_egress_log(&mut self) -> Vec<EgressRecord> {
        std::mem::take(&mut self.egress_log)
    }

    fn drop_packet(&mut self, reason: DropReason) -> PipelineEvent {
        *self.stats.drops.entry(reason).or_default() += 1;
        PipelineEvent::Dropped(reason)
    }

    fn count_tx(&mut self, port: PortId, octets: usize) {
        let c = self.stats.ports.entry(port).or_default();
        c.tx_packets += 1;
        c.tx_octets += octets as u64;
    }

    fn pick_recirc_port(&mut self) -> PortId {
        self.next_recirc = !self.next_recirc;
        if self.next_recirc {
            PortId::RECIRC_0
        } else {
            PortId::RECIRC_1
        }
    }

    /// Parser and ingress match-action stage for one wire frame.
    pub fn ingress(&mut self, frame: &[u8], port: PortId) -> PipelineEvent {
        self.stats.ingress_packets += 1;
        let c = self.stats.ports.entry(port).or_default();
        c.rx_packets += 1;
        c.rx_octets += frame.len() as u64;

        if let Some(bucket) = self.source.as_mut() {
            if !bucket.try_take(self.now_ns, 1) {
                return self.drop_packet(DropReason::CapacityExceeded);
            }
        }
        let pkt = match packet::parse(frame) {
            Ok(p) => p,
            Err(_) => return self.drop_packet(DropReason::ParseError),
        };
        let egress = match self.forwarding.lookup(port) {
            None => return self.drop_packet(DropReason::NoMatch),
            Some(Action::Drop) => return self.drop_packet(DropReason::ActionDrop),
            Some(Action::SendToCpu) => {
                self.stats.cpu_packets += 1;
                self.count_tx(PortId::CPU, frame.len());
                self.cpu_log.push(EgressRecord {
                    time_ns: self.now_ns,
                    port: PortId::CPU,
                    frame: frame.to_vec(),
                });
                return PipelineEvent::ToCpu;
            }
            Some(Action::SetEgressPort(p)) => p,
        };

        if !matches!(pkt.kind(), PacketKind::Udp | PacketKind::Roce) || !pkt.is_encryptable() {
            self.emit_unmodified(frame, egress);
            return PipelineEvent::Forwarded { port: egress };
        }
        let blocks = pkt.block_count() as u32;
        if blocks > self.config.max_blocks {
            return self.drop_packet(DropReason::OverMaxBlocks);
        }
        if self.tables.is_none() {
            return self.drop_packet(DropReason::NoKey);
        }
        let passes = self.config.passes_for(blocks);
        let reserved_passes = match self.recirc.as_mut() {
            Some(bucket) => {
                if !bucket.try_take(self.now_ns, passes as u64) {
                    return self.drop_packet(DropReason::CapacityExceeded);
                }
                Some(passes)
            }
            None => None,
        };

        let mut pkt = pkt;
        pkt.recirc = Some(RecircHeader::start(blocks as u8));
        pkt.sync_lengths();
        let recirc_port = self.pick_recirc_port();
        PipelineEvent::Encrypting(InFlight {
            packet: pkt,
            ingress: port,
            egress,
            recirc_port,
            passes: 0,
            reserved_passes,
        })
    }

    fn emit_unmodified(&mut self, frame: &[u8], port: PortId) {
        self.stats.egress_packets += 1;
        self.count_tx(port, frame.len());
        if self.capture_egress {
            self.egress_log.push(EgressRecord {
                time_ns: self.now_ns,
                port,
                frame: frame.to_vec(),
            });
        }
    }

    /// One trip around a recirculation port: deparse, re-parse as a
    /// recirculated frame, run up to `rounds_per_pass` rounds on the current
    /// block. The last pass strips the progress header and refreshes the
    /// ICRC.
    pub fn recirculate_step(&mut self, mut flight: InFlight) -> Result<Step, PipelineError> {
        let header = flight.packet.recirc.ok_or(PipelineError::NotInFlight)?;
        if !header.in_progress() {
            return Err(PipelineError::NotInFlight);
        }
        if let Some(left) = flight.reserved_passes.as_mut() {
            if *left == 0 {
                *self
                    .stats
                    .drops
                    .entry(DropReason::CapacityExceeded)
                    .or_default() += 1;
                return Ok(Step::Dropped(DropReason::CapacityExceeded));
            }
            *left -= 1;
        }
        let Some(tables) = self.tables.clone() else {
            *self.stats.drops.entry(DropReason::NoKey).or_default() += 1;
            return Ok(Step::Dropped(DropReason::NoKey));
        };

        let wire = packet::serialize(&flight.packet)?;
        let mut pkt = packet::parse_recirculated(&wire)?;
        self.stats.recirculations += 1;
        flight.passes += 1;

        let mut hdr = pkt.recirc.expect("recirculated parse yields a header");
        let offset = hdr.block as usize * BLOCK_LEN;
        let block =
            StateBlock::from_slice(&pkt.payload[offset..offset + BLOCK_LEN]).expect("whole block");
        let mut state = RoundState {
            block,
            round_index: hdr.round,
        };
        for _ in 0..self.config.rounds_per_pass {
            if state.is_complete() {
                break;
            }
            state = apply_round(state, &tables)?;
        }
        pkt.payload[offset..offset + BLOCK_LEN].copy_from_slice(&state.block.0);
        hdr.round = state.round_index;
        if hdr.round as usize == ROUNDS {
            hdr.round = 0;
            hdr.block += 1;
        }

        if hdr.block < hdr.total_blocks {
            pkt.recirc = Some(hdr);
            flight.packet = pkt;
            return Ok(Step::InFlight(flight));
        }

        pkt.recirc = None;
        if let Some(udp) = pkt.udp.as_mut() {
            // The old checksum covered plaintext.
            udp.checksum = 0;
        }
        pkt.sync_lengths();
        if let Some(mut roce) = pkt.roce {
            roce.icrc = packet::compute_icrc(&pkt)?;
            pkt.roce = Some(roce);
        }
        Ok(Step::EgressReady(EgressReady {
            packet: pkt,
            port: flight.egress,
            passes: flight.passes,
        }))
    }

    /// Deparser and egress port.
    pub fn emit(&mut self, ready: EgressReady) -> Result<(), PipelineError> {
        let frame = packet::serialize(&ready.packet)?;
        self.stats.egress_packets += 1;
        self.stats.encrypted_packets += 1;
        self.count_tx(ready.port, frame.len());
        if self.capture_egress {
            self.egress_log.push(EgressRecord {
                time_ns: self.now_ns,
                port: ready.port,
                frame,
            });
        }
        Ok(())
    }

    /// Ingress, every recirculation pass, and egress for one frame at the
    /// current simulated time.
    pub fn process(&mut self, frame: &[u8], port: PortId) -> Result<PipelineEvent, PipelineError> {
        let event = self.ingress(frame, port);
        let PipelineEvent::Encrypting(mut flight) = event else {
            return Ok(event);
        };
        loop {
            match self.recirculate_step(flight)? {
                Step::InFlight(f) => flight = f,
                Step::EgressReady(ready) => {
                    let port = ready.port;
                    self.emit(ready)?;
                    return Ok(PipelineEvent::Forwarded { port });
                }
                Step::Dropped(reason) => return Ok(PipelineEvent::Dropped(reason)),
            }
        }
    }

    /// Feeds a time-ordered workload through the pipeline. Overload shows
    /// up as drops.
    pub fn run(&mut self, workload: &[Arrival]) -> Result<&PipelineStats, PipelineError> {
        for a in workload {
            self.advance_to(a.time_ns);
            self.process(&a.frame, a.port)?;
        }
        Ok(&self.stats)
    }
}
