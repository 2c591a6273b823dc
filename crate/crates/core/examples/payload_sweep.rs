// Maximum sustainable throughput for 16 to 128 byte payloads under the
// default calibration, written as CSV to a temporary directory.

use switchcrypt::aes_core::Aes128Key;
use switchcrypt::pipeline::PipelineConfig;
use switchcrypt::traffic::{sweep_report, Rate, SweepOptions, Testbed, TrafficKind, TrafficSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let key = Aes128Key::from_hex("2b7e151628aed2a6abf7158809cf4f3c")?;
    let bed = Testbed::new(PipelineConfig::calibrated(), &key);
    let template = TrafficSpec {
        count: 20_000,
        ..TrafficSpec::new(TrafficKind::Roce, 16, Rate::Pps(1.0))
    };
    let opts = SweepOptions {
        rx_tx_multipliers: vec![0.5, 1.0, 2.0],
        cpu_comparison: false,
        ..SweepOptions::default()
    };
    let out = tempfile::tempdir()?;
    let report = sweep_report(&bed, &template, &[16, 32, 64, 128], out.path(), &opts, None)?;

    println!("payload  sustainable");
    for row in &report.throughput {
        println!("{:>5} B  {:>7.3} Gbps", row.payload_bytes, row.rx_bps / 1e9);
    }
    let first = report.throughput.first().map(|r| r.rx_bps).unwrap_or(0.0);
    let last = report.throughput.last().map(|r| r.rx_bps).unwrap_or(0.0);
    println!("128 B / 16 B = {:.2}", last / first);
    print!("{}", std::fs::read_to_string(&report.files[0])?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
