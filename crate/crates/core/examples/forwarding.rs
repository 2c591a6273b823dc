// Static forwarding: egress, CPU, explicit drop, table miss, and traffic
// that bypasses encryption.

use switchcrypt::aes_core::Aes128Key;
use switchcrypt::control_plane::install_key;
use switchcrypt::packet::{build_udp_packet, serialize, PacketTemplate};
use switchcrypt::pipeline::{Action, ForwardingTable, Pipeline, PipelineConfig, PortId};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut fwd = ForwardingTable::default();
    fwd.insert(PortId::front(0)?, Action::SetEgressPort(PortId::front(1)?))?;
    fwd.insert(PortId::front(2)?, Action::SendToCpu)?;
    fwd.insert(PortId::front(3)?, Action::Drop)?;
    let mut p = Pipeline::new(PipelineConfig::default(), fwd)?;
    install_key(&mut p, &Aes128Key::new([7; 16]));

    let frame = serialize(&build_udp_packet(&PacketTemplate::default(), &[0u8; 32])?)?;
    let mut arp = vec![0xffu8; 6];
    arp.extend_from_slice(&[0x02, 0, 0, 0, 0, 1, 0x08, 0x06]);
    arp.extend_from_slice(&[0u8; 28]);

    for (label, bytes, port) in [
        ("udp on 0", &frame, 0u16),
        ("udp on 2", &frame, 2),
        ("udp on 3", &frame, 3),
        ("udp on 5", &frame, 5),
        ("arp on 0", &arp, 0),
    ] {
        let event = p.process(bytes, PortId::front(port)?)?;
        println!("{label:<10} {event:?}");
    }
    let s = p.stats();
    println!(
        "egress {}, cpu {}, dropped {}, conserved {}",
        s.egress_packets,
        s.cpu_packets,
        s.total_drops(),
        s.is_conserved()
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
