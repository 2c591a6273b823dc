//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use switchcrypt::aes_core::{encrypt_block, encrypt_ecb, Aes128Key, StateBlock};
use switchcrypt::packet::{
    self, build_roce_packet, build_udp_packet, hexdump::from_hex_dump, serialize, PacketTemplate,
    ROCE_HEADERS_LEN, UDP_HEADERS_LEN,
};
use switchcrypt::pipeline::{
    validate_config, Action, ConfigError, DropReason, ForwardingTable, Pipeline, PipelineConfig,
    PipelineEvent, PortId, Step,
};
use switchcrypt::traffic::{
    find_max_sustainable, generate, measure, run_workload, sweep_report, Rate, SearchOptions,
    SweepOptions, Testbed, TrafficKind, TrafficSpec, DEFAULT_LOSS_CAP,
};
use switchcrypt::ttables::{encrypt_block_tabular, ScrambledTables};

const KNOWN_ANSWER_LIMIT: Duration = Duration::from_secs(1);
const ORACLE_CASES: usize = 10_000;
const ORACLE_LIMIT: Duration = Duration::from_secs(30);
const SWEEP_LIMIT: Duration = Duration::from_secs(120);
const TREND_RATIO: (f64, f64) = (3.0, 7.0);
/// Bisection resolution; adjacent plateau points may differ by this much.
const SEARCH_REL_TOL: f64 = 0.01;
const OVER_LOSS_FACTOR: f64 = 1.02;
const SWEEP_PAYLOADS: [usize; 4] = [16, 32, 64, 128];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    from_hex_dump(&std::fs::read_to_string(&path).expect("fixture")).expect("fixture hex")
}

fn fips_key() -> Aes128Key {
    Aes128Key::from_hex("000102030405060708090a0b0c0d0e0f").unwrap()
}

fn port(n: u16) -> PortId {
    PortId::front(n).unwrap()
}

fn forward_0_to_1() -> ForwardingTable {
    let mut f = ForwardingTable::default();
    f.insert(port(0), Action::SetEgressPort(port(1))).unwrap();
    f
}

fn keyed_pipeline(cfg: PipelineConfig, fwd: ForwardingTable, key: &Aes128Key) -> Pipeline {
    let mut p = Pipeline::new(cfg, fwd).unwrap();
    p.install_tables(Arc::new(ScrambledTables::from_key(key)));
    p
}

fn known_answer() -> Outcome {
    let start = Instant::now();
    let pt = StateBlock::from_hex("00112233445566778899aabbccddeeff").unwrap();
    let key = fips_key();
    let reference = encrypt_block(&key, pt).to_hex();
    let tabular = encrypt_block_tabular(&ScrambledTables::from_key(&key), pt).to_hex();
    let elapsed = start.elapsed();
    let want = "69c4e0d86a7b0430d8cdb78070b4c55a";
    ensure!(reference == want, "reference path gave {reference}");
    ensure!(tabular == want, "table path gave {tabular}");
    ensure!(elapsed < KNOWN_ANSWER_LIMIT, "took {elapsed:?}");
    Ok(format!("both paths = {want} in {elapsed:?}"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0;
    let template = PacketTemplate::default();
    for i in 0..ORACLE_CASES {
        let mut k = [0u8; 16];
        rng.fill_bytes(&mut k);
        let key = Aes128Key::new(k);
        let mut payload = vec![0u8; 16 * rng.gen_range(1..=8)];
        rng.fill_bytes(&mut payload);
        let frame = serialize(&build_roce_packet(&template, i as u32, &payload).unwrap()).unwrap();
        let mut p = keyed_pipeline(PipelineConfig::default(), forward_0_to_1(), &key);
        p.process(&frame, port(0)).unwrap();
        let out = packet::parse(&p.egress_log()[0].frame).unwrap();
        if out.payload != encrypt_ecb(&key, &payload).unwrap() {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(mismatches == 0, "{mismatches} mismatches");
    ensure!(elapsed < ORACLE_LIMIT, "took {elapsed:?}");
    Ok(format!(
        "{ORACLE_CASES} cases through the pipeline, 0 mismatches in {elapsed:.1?}"
    ))
}

fn recirculation_accounting() -> Outcome {
    let mut seen = Vec::new();
    for n in [1usize, 2, 4, 8] {
        let mut p = keyed_pipeline(PipelineConfig::default(), forward_0_to_1(), &fips_key());
        let frame =
            serialize(&build_udp_packet(&PacketTemplate::default(), &vec![9; 16 * n]).unwrap())
                .unwrap();
        let mut flight = match p.ingress(&frame, port(0)) {
            PipelineEvent::Encrypting(f) => f,
            other => return Err(format!("{n} blocks: {other:?}")),
        };
        let ready = loop {
            match p.recirculate_step(flight).map_err(|e| e.to_string())? {
                Step::InFlight(f) => flight = f,
                Step::EgressReady(r) => break r,
                Step::Dropped(r) => return Err(format!("{n} blocks dropped: {}", r.as_str())),
            }
        };
        let passes = ready.passes;
        p.emit(ready).map_err(|e| e.to_string())?;
        ensure!(passes as usize == 10 * n, "{n} blocks took {passes} passes");
        ensure!(
            p.stats().recirculations as usize == 10 * n,
            "{n} blocks counted {} recirculations",
            p.stats().recirculations
        );
        seen.push(format!("{n}->{passes}"));
    }
    Ok(format!("passes {}", seen.join(" ")))
}

fn header_ledger() -> Outcome {
    ensure!(
        UDP_HEADERS_LEN == 42,
        "UDP stack is {UDP_HEADERS_LEN} bytes"
    );
    ensure!(
        ROCE_HEADERS_LEN == 58,
        "RoCEv2 stack is {ROCE_HEADERS_LEN} bytes"
    );
    let mut count = 0;
    for (name, header) in [
        ("roce_plain_16.hex", 58),
        ("roce_cipher_128.hex", 58),
        ("udp_plain_32.hex", 42),
    ] {
        let bytes = fixture(name);
        let pkt = packet::parse(&bytes).map_err(|e| format!("{name}: {e}"))?;
        ensure!(
            pkt.header_len() == header,
            "{name}: header {} bytes",
            pkt.header_len()
        );
        ensure!(
            serialize(&pkt).unwrap() == bytes,
            "{name} does not round-trip"
        );
        count += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut seq = packet::RoceSequence::new(PacketTemplate::default(), 0);
    for _ in 0..1000 {
        let mut payload = vec![0u8; 16 * rng.gen_range(1..=16)];
        rng.fill_bytes(&mut payload);
        let pkt = if rng.gen() {
            seq.next_packet(&payload).unwrap()
        } else {
            build_udp_packet(&PacketTemplate::default(), &payload).unwrap()
        };
        let bytes = serialize(&pkt).unwrap();
        ensure!(
            bytes.len() == pkt.header_len() + payload.len(),
            "length ledger off"
        );
        ensure!(
            serialize(&packet::parse(&bytes).unwrap()).unwrap() == bytes,
            "round trip differs"
        );
        count += 1;
    }
    Ok(format!(
        "42/58 B stacks, {count} frames round-trip byte-exact"
    ))
}

fn forwarding_semantics() -> Outcome {
    let mut fwd = ForwardingTable::default();
    fwd.insert(port(0), Action::SetEgressPort(port(7))).unwrap();
    let mut p = keyed_pipeline(PipelineConfig::default(), fwd, &fips_key());

    let plain = fixture("roce_plain_16.hex");
    for n in 1..=20u16 {
        p.process(&plain, port(n)).unwrap();
    }
    ensure!(
        p.stats().dropped(DropReason::NoMatch) == 20,
        "unmatched not all dropped"
    );
    ensure!(p.stats().egress_packets == 0, "unmatched packet egressed");

    let mut checked = 0;
    for (src, want) in [
        ("roce_plain_16.hex", "roce_cipher_16.hex"),
        ("roce_plain_128.hex", "roce_cipher_128.hex"),
        ("udp_plain_32.hex", "udp_cipher_32.hex"),
    ] {
        p.process(&fixture(src), port(0)).unwrap();
        let rec = p.egress_log().last().unwrap().clone();
        ensure!(rec.port == port(7), "{src} left on {}", rec.port);
        ensure!(
            rec.frame == fixture(want),
            "{src} egress differs from {want}"
        );
        ensure!(
            packet::parse(&rec.frame).unwrap().recirc.is_none(),
            "recirc header on egress"
        );
        checked += 1;
    }
    ensure!(p.stats().is_conserved(), "counters not conserved");
    Ok(format!(
        "20/20 unmatched dropped; {checked} golden frames egress on port 7 byte-exact"
    ))
}

fn sweep_template(count: u64) -> TrafficSpec {
    TrafficSpec {
        count,
        ..TrafficSpec::new(TrafficKind::Roce, 16, Rate::Pps(1.0))
    }
}

fn sweep_points(cfg: PipelineConfig, count: u64) -> Result<Vec<f64>, String> {
    let bed = Testbed::new(cfg, &fips_key());
    SWEEP_PAYLOADS
        .iter()
        .map(|&payload| {
            let spec = TrafficSpec {
                payload_bytes: payload,
                ..sweep_template(count)
            };
            find_max_sustainable(&bed, &spec, &SearchOptions::default())
                .map(|s| s.throughput_bps)
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn non_decreasing(points: &[f64]) -> bool {
    points
        .windows(2)
        .all(|w| w[1] >= w[0] * (1.0 - SEARCH_REL_TOL))
}

fn throughput_trend() -> Outcome {
    let start = Instant::now();
    let default = sweep_points(PipelineConfig::calibrated(), 20_000)?;
    let elapsed = start.elapsed();
    let gbps: Vec<String> = default.iter().map(|t| format!("{:.3}", t / 1e9)).collect();
    ensure!(
        non_decreasing(&default),
        "default calibration decreases: {gbps:?}"
    );
    let ratio = default[3] / default[0];
    ensure!(
        (TREND_RATIO.0..=TREND_RATIO.1).contains(&ratio),
        "128/16 ratio {ratio:.2} outside {TREND_RATIO:?}"
    );
    ensure!(elapsed < SWEEP_LIMIT, "default sweep took {elapsed:?}");

    for (src, recirc) in [
        (5_000_000, 100_000_000),
        (1_000_000, 1_000_000_000),
        (20_000_000, 50_000_000),
    ] {
        let cfg = PipelineConfig {
            source_pps_cap: Some(src),
            recirc_pass_rate: Some(recirc),
            ..PipelineConfig::calibrated()
        };
        let pts = sweep_points(cfg, 10_000)?;
        ensure!(
            non_decreasing(&pts),
            "calibration ({src}, {recirc}) decreases: {pts:?}"
        );
    }
    Ok(format!(
        "default Gbps {} ratio {ratio:.2} in {elapsed:.1?}; 3 other calibrations non-decreasing",
        gbps.join("/")
    ))
}

fn payload_limits() -> Outcome {
    let bed = Testbed::new(PipelineConfig::default(), &fips_key());
    let spec = TrafficSpec {
        count: 1000,
        ..TrafficSpec::new(TrafficKind::Roce, 256, Rate::Pps(10_000.0))
    };
    let r = measure(&bed, &spec).map_err(|e| e.to_string())?;
    let over = r
        .drops_by_reason
        .get(DropReason::OverMaxBlocks.as_str())
        .copied()
        .unwrap_or(0);
    ensure!(
        over == 1000 && r.rx_packets == 0,
        "256 B: {over} over_max_blocks, {} rx",
        r.rx_packets
    );

    let err = validate_config(&PipelineConfig::default().for_traffic(24))
        .err()
        .ok_or("24 blocks validated")?;
    ensure!(
        matches!(err, ConfigError::ExceedsResources { .. }),
        "wrong error {err:?}"
    );
    ensure!(
        err.to_string().contains("exceeds pipeline resources"),
        "message: {err}"
    );
    let cfg24 = PipelineConfig {
        max_blocks: 24,
        ..PipelineConfig::default()
    };
    ensure!(
        validate_config(&cfg24).is_err(),
        "max_blocks = 24 validated"
    );
    let bench = measure(
        &bed,
        &TrafficSpec {
            payload_bytes: 384,
            ..spec
        },
    );
    ensure!(bench.is_err(), "384 B benchmark ran");
    Ok(format!(
        "256 B: 1000/1000 over_max_blocks; 24 blocks: \"{err}\""
    ))
}

fn loss_cap_bracketing() -> Outcome {
    let bed = Testbed::new(PipelineConfig::calibrated(), &fips_key());
    let opts = SearchOptions::default();
    let mut checked = 0;
    for payload in SWEEP_PAYLOADS {
        let template = TrafficSpec {
            payload_bytes: payload,
            ..sweep_template(20_000)
        };
        let s = find_max_sustainable(&bed, &template, &opts).map_err(|e| e.to_string())?;
        ensure!(!s.range_limited, "{payload} B range-limited");
        for r in &s.per_seed {
            let at = |pps: f64| {
                measure(
                    &bed,
                    &TrafficSpec {
                        rate: Rate::Pps(pps),
                        seed: r.seed,
                        ..template.clone()
                    },
                )
                .map(|m| m.loss_fraction)
                .map_err(|e| e.to_string())
            };
            let at_rate = at(r.offered_pps)?;
            let above = at(r.offered_pps * OVER_LOSS_FACTOR)?;
            ensure!(
                at_rate <= DEFAULT_LOSS_CAP,
                "{payload} B seed {}: loss {at_rate}",
                r.seed
            );
            ensure!(
                above > DEFAULT_LOSS_CAP,
                "{payload} B seed {}: loss above {above}",
                r.seed
            );
            checked += 1;
        }
    }
    Ok(format!("{checked} (payload, seed) searches bracketed"))
}

fn conservation_and_determinism() -> Outcome {
    let bed = Testbed::new(PipelineConfig::calibrated(), &fips_key());
    let mut runs = 0;
    for payload in [16, 48, 128, 256] {
        for pps in [1e5, 2.9e6, 6e6, 2e7] {
            for burst in [1, 16] {
                let spec = TrafficSpec {
                    count: 3000,
                    burst,
                    ..TrafficSpec::new(TrafficKind::Roce, payload, Rate::Pps(pps))
                };
                let (stats, _) = run_workload(&bed, &generate(&spec).unwrap(), false).unwrap();
                ensure!(
                    stats.is_conserved(),
                    "{payload} B at {pps} pps not conserved: {stats:?}"
                );
                ensure!(
                    stats.ingress_packets == 3000,
                    "tx count {}",
                    stats.ingress_packets
                );
                runs += 1;
            }
        }
    }
    let unrouted = Testbed::with_forwarding(
        PipelineConfig::calibrated(),
        ForwardingTable::default(),
        &fips_key(),
    );
    let (stats, _) =
        run_workload(&unrouted, &generate(&sweep_template(500)).unwrap(), false).unwrap();
    ensure!(stats.is_conserved(), "unrouted run not conserved");

    let opts = SweepOptions {
        rx_tx_multipliers: vec![0.5, 1.0, 2.0],
        cpu_comparison: false,
        ..SweepOptions::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for d in &dirs {
        let r = sweep_report(
            &bed,
            &sweep_template(5000),
            &[16, 128],
            d.path(),
            &opts,
            None,
        )
        .map_err(|e| e.to_string())?;
        outputs.push(
            r.files
                .iter()
                .map(|f| std::fs::read(f).unwrap())
                .collect::<Vec<_>>(),
        );
    }
    ensure!(
        outputs[0] == outputs[1],
        "CSV outputs differ between identical runs"
    );
    Ok(format!(
        "{} runs conserved; {} CSVs bit-identical",
        runs + 1,
        outputs[0].len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("known-answer", known_answer),
        ("oracle-equivalence", oracle_equivalence),
        ("recirculation-accounting", recirculation_accounting),
        ("header-ledger", header_ledger),
        ("forwarding-semantics", forwarding_semantics),
        ("throughput-trend", throughput_trend),
        ("payload-limits", payload_limits),
        ("loss-cap-search", loss_cap_bracketing),
        ("conservation-determinism", conservation_and_determinism),
    ];
    // Timed criteria run first and alone; the rest share the machine.
    let outcomes: Vec<Outcome> = std::thread::scope(|s| {
        let timed: Vec<Outcome> = criteria[..2].iter().map(|(_, f)| f()).collect();
        let handles: Vec<_> = criteria[2..].iter().map(|(_, f)| s.spawn(f)).collect();
        timed
            .into_iter()
            .chain(
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err("panicked".to_string()))),
            )
            .collect()
    });

    let mut failed = 0;
    for (i, ((name, _), outcome)) in criteria.iter().zip(&outcomes).enumerate() {
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
