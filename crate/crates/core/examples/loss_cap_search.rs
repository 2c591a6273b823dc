// Bisects the highest offered rate with loss at or below 1e-5 for 64-byte
// payloads, then probes just above it.

use switchcrypt::aes_core::Aes128Key;
use switchcrypt::pipeline::PipelineConfig;
use switchcrypt::traffic::{
    find_max_sustainable, measure, Rate, SearchOptions, Testbed, TrafficKind, TrafficSpec,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let bed = Testbed::new(PipelineConfig::calibrated(), &Aes128Key::new([1; 16]));
    let template = TrafficSpec {
        count: 20_000,
        ..TrafficSpec::new(TrafficKind::Roce, 64, Rate::Pps(1.0))
    };
    let opts = SearchOptions::default();
    let s = find_max_sustainable(&bed, &template, &opts)?;
    for r in &s.per_seed {
        println!(
            "seed {}  {:.0} pps  loss {:.2e}",
            r.seed, r.offered_pps, r.loss_fraction
        );
    }
    println!("sustainable {:.3} Gbps payload", s.throughput_bps / 1e9);

    let above = measure(
        &bed,
        &TrafficSpec {
            rate: Rate::Pps(s.offered_pps * 1.02),
            ..template
        },
    )?;
    println!(
        "at 1.02x: loss {:.2e}, drops {:?}",
        above.loss_fraction, above.drops_by_reason
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
