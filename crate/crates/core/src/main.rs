//! `switchcrypt` command line.
//!
//! Exit codes: 0 success, 1 verification mismatch, 2 usage error,
//! 3 configuration rejected, 4 I/O, key, or packet error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use switchcrypt::aes_core::{encrypt_ecb, Aes128Key};
use switchcrypt::control_plane::{serve, DEFAULT_ENDPOINT};
use switchcrypt::packet::{self, pcap};
use switchcrypt::pipeline::{
    validate_config, Action, ConfigError, ForwardingTable, Pipeline, PipelineConfig, PipelineFile,
    PortId,
};
use switchcrypt::traffic::{
    self, measure, seeds_label, sweep_report, Rate, ResultRow, SearchOptions, SweepOptions,
    Testbed, TrafficError, TrafficKind, TrafficSpec,
};
use switchcrypt::ttables::ScrambledTables;

#[derive(Parser)]
#[command(
    name = "switchcrypt",
    version,
    about = "AES-128 on a modeled switch data plane"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encrypt the payloads of a capture through the pipeline.
    Encrypt {
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Pipeline TOML. Without it, port 0 forwards to port 1.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        ingress_port: u16,
    },
    /// Check that every ciphertext payload matches the reference cipher.
    Verify {
        #[arg(long)]
        key: PathBuf,
        /// Plaintext capture.
        #[arg(long = "in")]
        input: PathBuf,
        /// Ciphertext capture.
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Measure throughput and loss at one offered rate.
    Bench {
        #[arg(long)]
        payload: usize,
        /// For example `2mpps`, `1.5gbps` (wire bits), or a bare pps value.
        #[arg(long)]
        rate: String,
        #[arg(long, default_value_t = 20_000)]
        count: u64,
        #[arg(long, default_value_t = 1)]
        burst: u32,
        #[arg(long, default_value = "roce")]
        kind: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        key: Option<PathBuf>,
        /// Pipeline TOML. Defaults to the calibrated model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Maximum sustainable throughput across payload sizes.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        payloads: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 20_000)]
        count: u64,
        #[arg(long, default_value = "roce")]
        kind: String,
        #[arg(long, default_value_t = traffic::DEFAULT_LOSS_CAP)]
        loss_cap: f64,
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "out")]
        out_dir: PathBuf,
        /// Skip the CPU timing comparison.
        #[arg(long)]
        no_cpu: bool,
    },
    /// Run the pipeline behind the control endpoint until interrupted.
    Serve {
        #[arg(long, default_value = DEFAULT_ENDPOINT)]
        endpoint: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Write a random 128-bit key as hex.
    Keygen {
        #[arg(long = "out")]
        output: Option<PathBuf>,
        /// Derive the key from a seed instead of OS randomness.
        #[arg(long)]
        seed: Option<u64>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
    fn usage(m: impl ToString) -> Self {
        Self::new(2, m)
    }
    fn config(m: impl ToString) -> Self {
        Self::new(3, m)
    }
    fn io(m: impl ToString) -> Self {
        Self::new(4, m)
    }
}

impl From<TrafficError> for Failure {
    fn from(e: TrafficError) -> Self {
        match e {
            TrafficError::Config(_) => Failure::config(e),
            TrafficError::ZeroRate
            | TrafficError::ZeroBurst
            | TrafficError::Empty
            | TrafficError::BadRate(_) => Failure::usage(e),
            _ => Failure::io(e),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e)
    }
}

type CmdResult = Result<(), Failure>;

fn read_key(path: &Path) -> Result<Aes128Key, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    Aes128Key::from_hex(text.trim()).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// A key from a file, or a fixed seed-derived one for repeatable runs.
fn key_or_seeded(path: Option<&PathBuf>, seed: u64) -> Result<Aes128Key, Failure> {
    match path {
        Some(p) => read_key(p),
        None => Ok(seeded_key(seed)),
    }
}

fn seeded_key(seed: u64) -> Aes128Key {
    let mut bytes = [0u8; 16];
    ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
    Aes128Key::new(bytes)
}

fn default_forwarding() -> ForwardingTable {
    let mut f = ForwardingTable::default();
    f.insert(
        PortId::front(0).expect("port 0"),
        Action::SetEgressPort(PortId::front(1).expect("port 1")),
    )
    .expect("front-panel entry");
    f
}

fn load_setup(config: Option<&PathBuf>, base: PipelineConfig) -> Result<PipelineFile, Failure> {
    let file = match config {
        Some(p) => PipelineFile::load(p)?,
        None => PipelineFile {
            config: base,
            forwarding: default_forwarding(),
        },
    };
    validate_config(&file.config)?;
    Ok(file)
}

fn parse_kind(s: &str) -> Result<TrafficKind, Failure> {
    s.parse()
        .map_err(|_| Failure::usage(format!("unknown traffic kind {s:?}")))
}

fn cmd_encrypt(
    key: &Path,
    input: &Path,
    output: &Path,
    config: Option<&PathBuf>,
    ingress_port: u16,
) -> CmdResult {
    let key = read_key(key)?;
    let setup = load_setup(config, PipelineConfig::default())?;
    let port = PortId::front(ingress_port).map_err(Failure::usage)?;
    let mut pipeline = Pipeline::new(setup.config, setup.forwarding).map_err(Failure::config)?;
    pipeline.install_tables(Arc::new(ScrambledTables::from_key(&key)));

    let frames = pcap::read_file(input).map_err(Failure::io)?;
    for f in &frames {
        pipeline.advance_to(f.ts_sec as u64 * 1_000_000_000 + f.ts_usec as u64 * 1000);
        pipeline.process(&f.data, port).map_err(Failure::io)?;
    }
    let out: Vec<_> = pipeline.egress_log().iter().map(|r| r.to_frame()).collect();
    pcap::write_file(output, &out).map_err(Failure::io)?;

    let s = pipeline.stats();
    println!(
        "read {} frames, wrote {}, encrypted {}, dropped {}",
        frames.len(),
        out.len(),
        s.encrypted_packets,
        s.total_drops()
    );
    for (reason, n) in s.drops.iter().filter(|(_, n)| **n > 0) {
        println!("  {}: {n}", reason.as_str());
    }
    Ok(())
}

fn cmd_verify(key: &Path, input: &Path, output: &Path) -> CmdResult {
    let key = read_key(key)?;
    let plain = pcap::pcap_read(input).map_err(Failure::io)?;
    let cipher = pcap::pcap_read(output).map_err(Failure::io)?;
    if plain.is_empty() {
        eprintln!("warning: {} contains no packets", input.display());
    }
    if plain.len() != cipher.len() {
        return Err(Failure::new(
            1,
            format!(
                "{} plaintext packets but {} ciphertext packets",
                plain.len(),
                cipher.len()
            ),
        ));
    }
    let mut mismatches = 0usize;
    for (i, (p, c)) in plain.iter().zip(&cipher).enumerate() {
        let ok = match encrypt_ecb(&key, &p.payload) {
            Ok(expected) => expected == c.payload,
            Err(_) => p.payload == c.payload,
        };
        let icrc_ok = c.roce.is_none() || packet::verify_icrc(c).unwrap_or(false);
        if !ok || !icrc_ok {
            mismatches += 1;
            eprintln!(
                "packet {i}: {}",
                if ok { "bad ICRC" } else { "payload mismatch" }
            );
        }
    }
    if mismatches > 0 {
        return Err(Failure::new(
            1,
            format!("{mismatches} of {} packets differ", plain.len()),
        ));
    }
    println!("{} packets match", plain.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    payload: usize,
    rate: &str,
    count: u64,
    burst: u32,
    kind: &str,
    seed: u64,
    key: Option<&PathBuf>,
    config: Option<&PathBuf>,
    csv_out: Option<&PathBuf>,
    json: bool,
) -> CmdResult {
    let rate: Rate = rate.parse()?;
    let kind = parse_kind(kind)?;
    let key = key_or_seeded(key, seed)?;
    let setup = load_setup(config, PipelineConfig::calibrated())?;
    let bed = Testbed::with_forwarding(setup.config, setup.forwarding, &key);
    let spec = TrafficSpec {
        count,
        burst,
        seed,
        ..TrafficSpec::new(kind, payload, rate)
    };
    let r = measure(&bed, &spec)?;

    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&r).expect("report serializes")
        );
    } else {
        println!(
            "{} B {}: offered {:.0} pps, tx {} rx {}, throughput {:.4} Gbps, loss {:.3e}",
            r.payload_bytes,
            r.kind,
            r.offered_pps,
            r.tx_packets,
            r.rx_packets,
            r.throughput_bps / 1e9,
            r.loss_fraction
        );
        for (reason, n) in r.drops_by_reason.iter().filter(|(_, n)| **n > 0) {
            println!("  {reason}: {n}");
        }
    }
    if let Some(path) = csv_out {
        let row = ResultRow {
            payload_bytes: r.payload_bytes,
            offered_bps: r.offered_payload_bps,
            rx_bps: r.throughput_bps,
            loss: r.loss_fraction,
            seeds: seeds_label(&[seed]),
            config_digest: r.config_digest.clone(),
        };
        traffic::write_csv(path, &[row])?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    payloads: &[usize],
    seeds: &[u64],
    count: u64,
    kind: &str,
    loss_cap: f64,
    key: Option<&PathBuf>,
    config: Option<&PathBuf>,
    out_dir: &Path,
    no_cpu: bool,
) -> CmdResult {
    if seeds.is_empty() || payloads.is_empty() {
        return Err(Failure::usage("need at least one payload and one seed"));
    }
    let kind = parse_kind(kind)?;
    let key = key_or_seeded(key, seeds[0])?;
    let setup = load_setup(config, PipelineConfig::calibrated())?;
    let bed = Testbed::with_forwarding(setup.config, setup.forwarding, &key);
    let template = TrafficSpec {
        count,
        seed: seeds[0],
        ..TrafficSpec::new(kind, 16, Rate::Pps(1.0))
    };
    let opts = SweepOptions {
        search: SearchOptions {
            loss_cap,
            seeds: seeds.to_vec(),
            ..SearchOptions::default()
        },
        cpu_comparison: !no_cpu,
        ..SweepOptions::default()
    };
    let report = sweep_report(&bed, &template, payloads, out_dir, &opts, Some(&key))?;
    for row in &report.throughput {
        println!(
            "{:>5} B  {:>8.4} Gbps  loss {:.1e}",
            row.payload_bytes,
            row.rx_bps / 1e9,
            row.loss
        );
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_serve(endpoint: &str, config: Option<&PathBuf>, key: Option<&PathBuf>) -> CmdResult {
    let setup = load_setup(config, PipelineConfig::default())?;
    let mut pipeline = Pipeline::new(setup.config, setup.forwarding).map_err(Failure::config)?;
    if let Some(k) = key {
        let key = read_key(k)?;
        println!(
            "key {}",
            switchcrypt::control_plane::install_key(&mut pipeline, &key)
        );
    }
    println!("listening on {endpoint}");
    serve(endpoint, pipeline).map_err(Failure::io)?;
    Ok(())
}

fn cmd_keygen(output: Option<&PathBuf>, seed: Option<u64>) -> CmdResult {
    let key = match seed {
        Some(s) => seeded_key(s),
        None => {
            let mut bytes = [0u8; 16];
            rand::rngs::OsRng.fill_bytes(&mut bytes);
            Aes128Key::new(bytes)
        }
    };
    match output {
        Some(p) => std::fs::write(p, format!("{}\n", key.to_hex()))
            .map_err(|e| Failure::io(format!("{}: {e}", p.display())))?,
        None => println!("{}", key.to_hex()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Encrypt {
            key,
            input,
            output,
            config,
            ingress_port,
        } => cmd_encrypt(key, input, output, config.as_ref(), *ingress_port),
        Cmd::Verify { key, input, output } => cmd_verify(key, input, output),
        Cmd::Bench {
            payload,
            rate,
            count,
            burst,
            kind,
            seed,
            key,
            config,
            csv,
            json,
        } => cmd_bench(
            *payload,
            rate,
            *count,
            *burst,
            kind,
            *seed,
            key.as_ref(),
            config.as_ref(),
            csv.as_ref(),
            *json,
        ),
        Cmd::Sweep {
            payloads,
            seeds,
            count,
            kind,
            loss_cap,
            key,
            config,
            out_dir,
            no_cpu,
        } => cmd_sweep(
            payloads,
            seeds,
            *count,
            kind,
            *loss_cap,
            key.as_ref(),
            config.as_ref(),
            out_dir,
            *no_cpu,
        ),
        Cmd::Serve {
            endpoint,
            config,
            key,
        } => cmd_serve(endpoint, config.as_ref(), key.as_ref()),
        Cmd::Keygen { output, seed } => cmd_keygen(output.as_ref(), *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
