// Writes a small RoCEv2 capture, pushes it through the pipeline, and checks
// every egress payload against the reference cipher.

use std::sync::Arc;

use switchcrypt::aes_core::{encrypt_ecb, Aes128Key};
use switchcrypt::packet::{self, pcap, verify_icrc, PacketTemplate, RoceSequence};
use switchcrypt::pipeline::{Action, ForwardingTable, Pipeline, PipelineConfig, PortId};
use switchcrypt::ttables::ScrambledTables;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("plain.pcap");
    let output = dir.path().join("cipher.pcap");

    let mut seq = RoceSequence::new(PacketTemplate::default(), 100);
    let packets = (1..=8usize)
        .map(|blocks| seq.next_packet(&vec![blocks as u8; blocks * 16]))
        .collect::<Result<Vec<_>, _>>()?;
    pcap::pcap_write(&input, &packets)?;

    let key = Aes128Key::from_hex("2b7e151628aed2a6abf7158809cf4f3c")?;
    let mut fwd = ForwardingTable::default();
    fwd.insert(PortId::front(0)?, Action::SetEgressPort(PortId::front(1)?))?;
    let mut pipeline = Pipeline::new(PipelineConfig::default(), fwd)?;
    pipeline.install_tables(Arc::new(ScrambledTables::from_key(&key)));

    for frame in pcap::read_file(&input)? {
        pipeline.process(&frame.data, PortId::front(0)?)?;
    }
    let out: Vec<_> = pipeline.egress_log().iter().map(|r| r.to_frame()).collect();
    pcap::write_file(&output, &out)?;

    for (plain, frame) in packets.iter().zip(pcap::read_file(&output)?) {
        let enc = packet::parse(&frame.data)?;
        let expected = encrypt_ecb(&key, &plain.payload)?;
        if enc.payload != expected || !verify_icrc(&enc)? {
            return Err(format!("psn {} mismatch", enc.roce.unwrap().bth.psn).into());
        }
        println!(
            "psn {:>3}  {:>3} B  {}..",
            enc.roce.unwrap().bth.psn,
            enc.payload.len(),
            hex::encode(&enc.payload[..8])
        );
    }
    let s = pipeline.stats();
    println!(
        "{} in, {} out, {} recirculations",
        s.ingress_packets, s.egress_packets, s.recirculations
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
