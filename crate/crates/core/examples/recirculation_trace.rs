// Steps one two-block packet through its recirculation passes and prints
// the progress header after each.

use switchcrypt::aes_core::{encrypt_ecb, Aes128Key};
use switchcrypt::control_plane::install_key;
use switchcrypt::packet::{build_roce_packet, serialize, PacketTemplate};
use switchcrypt::pipeline::{
    Action, ForwardingTable, Pipeline, PipelineConfig, PipelineEvent, PortId, Step,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let key = Aes128Key::new([0x42; 16]);
    let mut fwd = ForwardingTable::default();
    fwd.insert(PortId::front(0)?, Action::SetEgressPort(PortId::front(1)?))?;
    let mut p = Pipeline::new(PipelineConfig::default(), fwd)?;
    install_key(&mut p, &key);

    let payload: Vec<u8> = (0..32).collect();
    let frame = serialize(&build_roce_packet(&PacketTemplate::default(), 1, &payload)?)?;
    let mut flight = match p.ingress(&frame, PortId::front(0)?) {
        PipelineEvent::Encrypting(f) => f,
        other => return Err(format!("unexpected {other:?}").into()),
    };
    println!("ingress   {:?}", flight.progress());
    let ready = loop {
        match p.recirculate_step(flight)? {
            Step::InFlight(next) => {
                let h = next.progress().expect("header while in flight");
                println!(
                    "pass {:>2} via {}  block {} round {}",
                    next.passes, next.recirc_port, h.block, h.round
                );
                flight = next;
            }
            Step::EgressReady(ready) => break ready,
            Step::Dropped(reason) => return Err(reason.as_str().into()),
        }
    };
    println!("egress on {} after {} passes", ready.port, ready.passes);
    assert_eq!(ready.packet.payload, encrypt_ecb(&key, &payload)?);
    p.emit(ready)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
