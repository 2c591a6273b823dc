//! Workload generation and the benchmark methodology.
//!
//! Throughput counts payload bits only:
//! `throughput_bps = payload_bits_rx / elapsed_s`. Loss is
//! `1 - rx_packets / tx_packets`. The maximum sustainable throughput is the
//! highest offered rate whose loss stays at or below a cap (1e-5 by
//! default), found by bisection and averaged over several seeds. Frame
//! check sequences are not modeled and never counted.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aes_core::{self, Aes128Key, BLOCK_LEN};
use crate::packet::{
    build_udp_packet, serialize, PacketError, PacketTemplate, RoceSequence, ROCE_HEADERS_LEN,
    UDP_HEADERS_LEN,
};
use crate::pipeline::{
    validate_config, Action, Arrival, ConfigError, EgressRecord, ForwardingTable, Pipeline,
    PipelineConfig, PipelineError, PipelineStats, PortId,
};
use crate::ttables::ScrambledTables;

pub const DEFAULT_LOSS_CAP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("offered rate must be positive")]
    ZeroRate,
    #[error("burst must be at least 1 packet")]
    ZeroBurst,
    #[error("packet count must be at least 1")]
    Empty,
    #[error("invalid rate {0:?}")]
    BadRate(String),
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficKind {
    Udp,
    Roce,
}

impl TrafficKind {
    pub fn header_len(self) -> usize {
        match self {
            TrafficKind::Udp => UDP_HEADERS_LEN,
            TrafficKind::Roce => ROCE_HEADERS_LEN,
        }
    }
}

impl fmt::Display for TrafficKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrafficKind::Udp => "udp",
            TrafficKind::Roce => "roce",
        })
    }
}

impl FromStr for TrafficKind {
    type Err = TrafficError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "udp" => Ok(TrafficKind::Udp),
            "roce" | "rocev2" => Ok(TrafficKind::Roce),
            _ => Err(TrafficError::BadRate(format!("unknown traffic kind {s}"))),
        }
    }
}

/// Offered load. Bit rates are on-wire bits (headers included, FCS
/// excluded), the way a traffic generator is usually configured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Pps(f64),
    WireBps(f64),
}

impl Rate {
    pub fn pps(self, wire_len: usize) -> f64 {
        match self {
            Rate::Pps(p) => p,
            Rate::WireBps(b) => b / (wire_len as f64 * 8.0),
        }
    }
}

impl FromStr for Rate {
    type Err = TrafficError;

    /// A number with a unit: `pps`, `kpps`, `mpps`, `bps`, `kbps`, `mbps`,
    /// `gbps` (case-insensitive). A bare number is packets per second.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|_| TrafficError::BadRate(s.to_string()))?;
        let rate = match unit.to_ascii_lowercase().as_str() {
            "" | "pps" => Rate::Pps(v),
            "kpps" => Rate::Pps(v * 1e3),
            "mpps" => Rate::Pps(v * 1e6),
            "bps" => Rate::WireBps(v),
            "kbps" => Rate::WireBps(v * 1e3),
            "mbps" => Rate::WireBps(v * 1e6),
            "gbps" => Rate::WireBps(v * 1e9),
            _ => return Err(TrafficError::BadRate(s.to_string())),
        };
        Ok(rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    pub kind: TrafficKind,
    pub payload_bytes: usize,
    pub rate: Rate,
    /// Packets sent back to back at each burst instant.
    pub burst: u32,
    pub count: u64,
    pub seed: u64,
    pub ingress: PortId,
}

impl TrafficSpec {
    pub fn new(kind: TrafficKind, payload_bytes: usize, rate: Rate) -> Self {
        Self {
            kind,
            payload_bytes,
            rate,
            burst: 1,
            count: 20_000,
            seed: 1,
            ingress: PortId::front(0).expect("port 0"),
        }
    }

    /// Sets the packet count from a duration at the offered rate.
    pub fn with_duration(mut self, seconds: f64) -> Self {
        self.count = (self.pps() * seconds).round().max(1.0) as u64;
        self
    }

    pub fn wire_len(&self) -> usize {
        self.kind.header_len() + self.payload_bytes
    }

    pub fn pps(&self) -> f64 {
        self.rate.pps(self.wire_len())
    }

    pub fn blocks(&self) -> u32 {
        (self.payload_bytes / BLOCK_LEN) as u32
    }

    /// Offered payload bits per second.
    pub fn offered_payload_bps(&self) -> f64 {
        self.pps() * self.payload_bytes as f64 * 8.0
    }
}

/// Arrivals plus what was sent, for later comparison.
#[derive(Debug, Clone)]
pub struct Workload {
    pub arrivals: Vec<Arrival>,
    pub payloads: Vec<Vec<u8>>,
    /// Length of the transmit window: `count / pps`.
    pub elapsed_s: f64,
}

/// Bursts of `burst` packets spaced to realize the offered rate. Payload
/// bytes come from a ChaCha stream seeded with `spec.seed`.
pub fn generate(spec: &TrafficSpec) -> Result<Workload, TrafficError> {
    let pps = spec.pps();
    if !(pps.is_finite() && pps > 0.0) {
        return Err(TrafficError::ZeroRate);
    }
    if spec.burst == 0 {
        return Err(TrafficError::ZeroBurst);
    }
    if spec.count == 0 {
        return Err(TrafficError::Empty);
    }
    if spec.payload_bytes == 0 || !spec.payload_bytes.is_multiple_of(BLOCK_LEN) {
        return Err(PacketError::PayloadSize(spec.payload_bytes).into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let template = PacketTemplate::default();
    let mut roce = RoceSequence::new(template.clone(), 0);
    let burst_gap_ns = spec.burst as f64 * 1e9 / pps;

    let mut arrivals = Vec::with_capacity(spec.count as usize);
    let mut payloads = Vec::with_capacity(spec.count as usize);
    for i in 0..spec.count {
        let mut payload = vec![0u8; spec.payload_bytes];
        rng.fill_bytes(&mut payload);
        let pkt = match spec.kind {
            TrafficKind::Udp => build_udp_packet(&template, &payload)?,
            TrafficKind::Roce => roce.next_packet(&payload)?,
        };
        let burst_index = i / spec.burst as u64;
        arrivals.push(Arrival {
            time_ns: (burst_index as f64 * burst_gap_ns).round() as u64,
            port: spec.ingress,
            frame: serialize(&pkt)?,
        });
        payloads.push(payload);
    }
    Ok(Workload {
        arrivals,
        payloads,
        elapsed_s: spec.count as f64 / pps,
    })
}

/// A reusable switch setup: every measurement gets a fresh pipeline.
#[derive(Debug, Clone)]
pub struct Testbed {
    pub config: PipelineConfig,
    pub forwarding: ForwardingTable,
    tables: Arc<ScrambledTables>,
}

impl Testbed {
    /// Forwards front-panel port 0 to port 1.
    pub fn new(config: PipelineConfig, key: &Aes128Key) -> Self {
        let mut forwarding = ForwardingTable::default();
        forwarding
            .insert(
                PortId::front(0).expect("port 0"),
                Action::SetEgressPort(PortId::front(1).expect("port 1")),
            )
            .expect("front-panel entry");
        Self::with_forwarding(config, forwarding, key)
    }

    pub fn with_forwarding(
        config: PipelineConfig,
        forwarding: ForwardingTable,
        key: &Aes128Key,
    ) -> Self {
        Self {
            config,
            forwarding,
            tables: Arc::new(ScrambledTables::from_key(key)),
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline, PipelineError> {
        let mut p = Pipeline::new(self.config.clone(), self.forwarding.clone())?;
        p.install_tables(self.tables.clone());
        Ok(p)
    }
}

/// Runs a workload on a fresh pipeline.
pub fn run_workload(
    testbed: &Testbed,
    workload: &Workload,
    capture: bool,
) -> Result<(PipelineStats, Vec<EgressRecord>), TrafficError> {
    let mut p = testbed.pipeline()?;
    p.set_capture(capture);
    p.run(&workload.arrivals)?;
    let stats = p.stats().clone();
    Ok((stats, p.take_egress_log()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub kind: TrafficKind,
    pub payload_bytes: usize,
    pub offered_pps: f64,
    pub offered_payload_bps: f64,
    pub tx_packets: u64,
    pub rx_packets: u64,
    pub payload_bits_rx: u64,
    pub elapsed_s: f64,
    pub throughput_bps: f64,
    pub loss_fraction: f64,
    pub recirculations: u64,
    pub drops_by_reason: BTreeMap<String, u64>,
    pub seed: u64,
    pub config_digest: String,
}

impl BenchmarkReport {
    pub fn from_stats(
        spec: &TrafficSpec,
        elapsed_s: f64,
        stats: &PipelineStats,
        config_digest: String,
    ) -> Self {
        let tx = stats.ingress_packets;
        let rx = stats.egress_packets;
        let payload_bits_rx = rx * spec.payload_bytes as u64 * 8;
        Self {
            kind: spec.kind,
            payload_bytes: spec.payload_bytes,
            offered_pps: spec.pps(),
            offered_payload_bps: spec.offered_payload_bps(),
            tx_packets: tx,
            rx_packets: rx,
            payload_bits_rx,
            elapsed_s,
            throughput_bps: payload_bits_rx as f64 / elapsed_s,
            loss_fraction: if tx == 0 {
                0.0
            } else {
                1.0 - rx as f64 / tx as f64
            },
            recirculations: stats.recirculations,
            drops_by_reason: stats
                .drops
                .iter()
                .map(|(r, n)| (r.as_str().to_string(), *n))
                .collect(),
            seed: spec.seed,
            config_digest,
        }
    }
}

/// Generates the workload, runs it, and applies the throughput and loss
/// formulas to the egress counters.
pub fn measure(testbed: &Testbed, spec: &TrafficSpec) -> Result<BenchmarkReport, TrafficError> {
    let declared = testbed
        .config
        .for_traffic(spec.blocks().max(testbed.config.declared_blocks()));
    validate_config(&declared)?;
    let workload = generate(spec)?;
    let (stats, _) = run_workload(testbed, &workload, false)?;
    Ok(BenchmarkReport::from_stats(
        spec,
        workload.elapsed_s,
        &stats,
        testbed.config.digest(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub loss_cap: f64,
    pub min_pps: f64,
    pub max_pps: f64,
    /// Bisection stops once `hi / lo <= 1 + rel_tol`.
    pub rel_tol: f64,
    pub seeds: Vec<u64>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            loss_cap: DEFAULT_LOSS_CAP,
            min_pps: 1_000.0,
            max_pps: 50_000_000.0,
            rel_tol: 0.01,
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub offered_pps: f64,
    pub throughput_bps: f64,
    pub loss_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sustainable {
    pub payload_bytes: usize,
    /// Mean over seeds of the highest passing offered rate.
    pub offered_pps: f64,
    /// Mean over seeds of the measured throughput at that rate.
    pub throughput_bps: f64,
    pub offered_payload_bps: f64,
    pub loss_fraction: f64,
    pub per_seed: Vec<SeedResult>,
    /// The search maximum already met the cap.
    pub range_limited: bool,
    pub diagnostic: Option<String>,
}

fn search_one(
    testbed: &Testbed,
    template: &TrafficSpec,
    opts: &SearchOptions,
    seed: u64,
) -> Result<(SeedResult, bool, Option<String>), TrafficError> {
    let at = |pps: f64| -> Result<BenchmarkReport, TrafficError> {
        let spec = TrafficSpec {
            rate: Rate::Pps(pps),
            seed,
            ..template.clone()
        };
        measure(testbed, &spec)
    };
    let result = |r: &BenchmarkReport| SeedResult {
        seed,
        offered_pps: r.offered_pps,
        throughput_bps: r.throughput_bps,
        loss_fraction: r.loss_fraction,
    };

    let top = at(opts.max_pps)?;
    if top.loss_fraction <= opts.loss_cap {
        return Ok((result(&top), true, None));
    }
    let bottom = at(opts.min_pps)?;
    if bottom.loss_fraction > opts.loss_cap {
        let diag = format!(
            "loss {:.6} exceeds cap {} even at {} pps",
            bottom.loss_fraction, opts.loss_cap, opts.min_pps
        );
        return Ok((
            SeedResult {
                seed,
                offered_pps: 0.0,
                throughput_bps: 0.0,
                loss_fraction: bottom.loss_fraction,
            },
            false,
            Some(diag),
        ));
    }

    let (mut lo, mut hi) = (bottom, opts.max_pps);
    while hi / lo.offered_pps > 1.0 + opts.rel_tol {
        let mid = (lo.offered_pps * hi).sqrt();
        let r = at(mid)?;
        if r.loss_fraction <= opts.loss_cap {
            lo = r;
        } else {
            hi = mid;
        }
    }
    Ok((result(&lo), false, None))
}

/// Bisects the offered rate for each seed (in parallel) and averages.
pub fn find_max_sustainable(
    testbed: &Testbed,
    template: &TrafficSpec,
    opts: &SearchOptions,
) -> Result<Sustainable, TrafficError> {
    if opts.seeds.is_empty() {
        return Err(TrafficError::Empty);
    }
    let outcomes: Vec<Result<_, TrafficError>> = std::thread::scope(|s| {
        let handles: Vec<_> = opts
            .seeds
            .iter()
            .map(|&seed| s.spawn(move || search_one(testbed, template, opts, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("search thread panicked"))
            .collect()
    });

    let mut per_seed = Vec::with_capacity(outcomes.len());
    let mut range_limited = true;
    let mut diagnostic = None;
    for o in outcomes {
        let (r, limited, diag) = o?;
        range_limited &= limited;
        diagnostic = diagnostic.or(diag);
        per_seed.push(r);
    }
    let n = per_seed.len() as f64;
    let mean = |f: fn(&SeedResult) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
    let offered_pps = mean(|r| r.offered_pps);
    Ok(Sustainable {
        payload_bytes: template.payload_bytes,
        offered_pps,
        throughput_bps: mean(|r| r.throughput_bps),
        offered_payload_bps: offered_pps * template.payload_bytes as f64 * 8.0,
        loss_fraction: mean(|r| r.loss_fraction),
        per_seed,
        range_limited,
        diagnostic,
    })
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub payload_bytes: usize,
    /// Offered payload bits per second.
    pub offered_bps: f64,
    /// Received payload bits per second.
    pub rx_bps: f64,
    pub loss: f64,
    /// Seeds used, `;`-separated.
    pub seeds: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuComparisonRow {
    pub payload_bytes: usize,
    pub switch_bps: f64,
    pub cpu_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RxTxRow {
    pub payload_bytes: usize,
    pub tx_bps: f64,
    pub rx_bps: f64,
    pub loss: f64,
}

pub fn seeds_label(seeds: &[u64]) -> String {
    seeds
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), TrafficError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub search: SearchOptions,
    /// Multiples of the sustainable rate for the RX-versus-TX curve.
    pub rx_tx_multipliers: Vec<f64>,
    /// Time the reference cipher on this host as the CPU arm. The timing
    /// file is not reproducible run to run.
    pub cpu_comparison: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            search: SearchOptions::default(),
            rx_tx_multipliers: vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0],
            cpu_comparison: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub throughput: Vec<ResultRow>,
    pub rx_vs_tx: Vec<RxTxRow>,
    pub cpu: Vec<CpuComparisonRow>,
    pub files: Vec<PathBuf>,
}

/// Payload bits per second the reference cipher sustains on this host.
pub fn cpu_encrypt_bps(key: &Aes128Key, payload_bytes: usize, packets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0u8; payload_bytes * packets];
    rng.fill_bytes(&mut buf);
    let start = Instant::now();
    let mut sink = 0u8;
    for chunk in buf.chunks(payload_bytes) {
        let ct = aes_core::encrypt_ecb(key, chunk).expect("whole blocks");
        sink ^= ct[0];
    }
    std::hint::black_box(sink);
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    (payload_bytes * packets * 8) as f64 / secs
}

/// Runs the payload sweep and writes `throughput.csv`, `rx_vs_tx.csv`, and
/// (optionally) `cpu_comparison.csv` into `out_dir`.
pub fn sweep_report(
    testbed: &Testbed,
    template: &TrafficSpec,
    payloads: &[usize],
    out_dir: impl AsRef<Path>,
    opts: &SweepOptions,
    key_for_cpu: Option<&Aes128Key>,
) -> Result<SweepReport, TrafficError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let digest = testbed.config.digest();

    let mut throughput = Vec::new();
    let mut rx_vs_tx = Vec::new();
    let mut cpu = Vec::new();
    for &payload in payloads {
        let spec = TrafficSpec {
            payload_bytes: payload,
            ..template.clone()
        };
        let s = find_max_sustainable(testbed, &spec, &opts.search)?;
        throughput.push(ResultRow {
            payload_bytes: payload,
            offered_bps: s.offered_payload_bps,
            rx_bps: s.throughput_bps,
            loss: s.loss_fraction,
            seeds: seeds_label(&opts.search.seeds),
            config_digest: digest.clone(),
        });

        let base_pps = if s.offered_pps > 0.0 {
            s.offered_pps
        } else {
            opts.search.min_pps
        };
        for m in &opts.rx_tx_multipliers {
            let r = measure(
                testbed,
                &TrafficSpec {
                    rate: Rate::Pps(base_pps * m),
                    ..spec.clone()
                },
            )?;
            rx_vs_tx.push(RxTxRow {
                payload_bytes: payload,
                tx_bps: r.offered_payload_bps,
                rx_bps: r.throughput_bps,
                loss: r.loss_fraction,
            });
        }

        if opts.cpu_comparison {
            if let Some(key) = key_for_cpu {
                cpu.push(CpuComparisonRow {
                    payload_bytes: payload,
                    switch_bps: s.throughput_bps,
                    cpu_bps: cpu_encrypt_bps(key, payload, 20_000, template.seed),
                });
            }
        }
    }

    let mut files = vec![out_dir.join("throughput.csv"), out_dir.join("rx_vs_tx.csv")];
    write_csv(&files[0], &throughput)?;
    write_csv(&files[1], &rx_vs_tx)?;
    if !cpu.is_empty() {
        files.push(out_dir.join("cpu_comparison.csv"));
        write_csv(&files[2], &cpu)?;
    }
    Ok(SweepReport {
        throughput,
        rx_vs_tx,
        cpu,
        files,
    })
}
