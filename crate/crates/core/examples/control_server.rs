// Starts the control endpoint on an ephemeral port and drives it the way
// an external client would.

use switchcrypt::control_plane::{ControlClient, ControlRequest, ControlServer};
use switchcrypt::pipeline::{ForwardingTable, Pipeline, PipelineConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let pipeline = Pipeline::new(PipelineConfig::default(), ForwardingTable::default())?;
    let server = ControlServer::bind("127.0.0.1:0", pipeline)?;
    let mut client = ControlClient::connect(server.local_addr())?;

    let requests = [
        ControlRequest::Ping,
        ControlRequest::GetKeyId,
        ControlRequest::SetKey {
            key: "000102030405060708090a0b0c0d0e0f".into(),
        },
        ControlRequest::GetKeyId,
        ControlRequest::GetTableDigest { round: 1 },
        ControlRequest::AddForwardingEntry {
            port: "0".into(),
            action: "egress 1".into(),
        },
    ];
    for req in &requests {
        println!("> {}", req.to_line());
        println!("< {}", client.request(req)?.to_line());
    }
    println!("< {}", client.send_line("{\"op\":\"reboot\"}")?.to_line());

    let pipeline = server.shutdown()?;
    println!(
        "forwarding entries after shutdown: {}",
        pipeline.forwarding().len()
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
