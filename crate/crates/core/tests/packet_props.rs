use std::net::Ipv4Addr;

use proptest::prelude::*;
use switchcrypt::packet::{
    self, build_roce_packet, build_udp_packet, hexdump::from_hex_dump, pcap, serialize,
    verify_icrc, MacAddr, PacketKind, PacketTemplate,
};

fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    from_hex_dump(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn golden_roce_fields() {
    let pkt = packet::parse(&fixture("roce_plain_16.hex")).unwrap();
    assert_eq!(pkt.kind(), PacketKind::Roce);
    let roce = pkt.roce.unwrap();
    assert_eq!(roce.bth.psn, 0x123);
    assert_eq!(roce.bth.dest_qp, 0x11);
    assert_eq!(roce.icrc, 0x4b45_1c32);
    assert!(verify_icrc(&pkt).unwrap());
    assert_eq!(pkt.payload, (0..16).collect::<Vec<u8>>());
    assert_eq!(pkt.wire_len(), 74);
}

#[test]
fn builder_matches_golden_frames() {
    let t = PacketTemplate::default();
    let roce = build_roce_packet(&t, 0x123, &(0..128).collect::<Vec<u8>>()).unwrap();
    assert_eq!(serialize(&roce).unwrap(), fixture("roce_plain_128.hex"));
    let udp = build_udp_packet(&t, &(0..32).collect::<Vec<u8>>()).unwrap();
    assert_eq!(serialize(&udp).unwrap(), fixture("udp_plain_32.hex"));
}

#[test]
fn golden_frames_survive_pcap() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("golden.pcap");
    let names = [
        "roce_plain_16.hex",
        "roce_cipher_128.hex",
        "udp_cipher_32.hex",
    ];
    let frames: Vec<_> = names.iter().map(|n| pcap::Frame::new(fixture(n))).collect();
    pcap::write_file(&path, &frames).unwrap();
    let packets = pcap::pcap_read(&path).unwrap();
    for (pkt, name) in packets.iter().zip(names) {
        assert_eq!(serialize(pkt).unwrap(), fixture(name));
    }
}

#[test]
fn corrupt_icrc_detected_on_golden_frame() {
    let mut bytes = fixture("roce_cipher_16.hex");
    assert!(verify_icrc(&packet::parse(&bytes).unwrap()).unwrap());
    bytes[60] ^= 0x01;
    assert!(!verify_icrc(&packet::parse(&bytes).unwrap()).unwrap());
}

fn template() -> impl Strategy<Value = PacketTemplate> {
    (
        any::<[u8; 6]>(),
        any::<[u8; 6]>(),
        any::<u32>(),
        any::<u32>(),
        1u8..=255,
        any::<u16>(),
        any::<u16>(),
        any::<u16>(),
        0u32..1 << 24,
    )
        .prop_map(|(s, d, si, di, ttl, sp, dp, pkey, qp)| PacketTemplate {
            src_mac: MacAddr(s),
            dst_mac: MacAddr(d),
            src_ip: Ipv4Addr::from(si),
            dst_ip: Ipv4Addr::from(di),
            ttl,
            src_port: sp,
            dst_port: dp,
            pkey,
            dest_qp: qp,
        })
}

proptest! {
    #[test]
    fn built_frames_round_trip(
        t in template(),
        roce in any::<bool>(),
        psn in any::<u32>(),
        payload in (1usize..=24).prop_flat_map(|b| proptest::collection::vec(any::<u8>(), b * 16)),
    ) {
        let pkt = if roce {
            build_roce_packet(&t, psn, &payload).unwrap()
        } else {
            build_udp_packet(&t, &payload).unwrap()
        };
        let bytes = serialize(&pkt).unwrap();
        let parsed = packet::parse(&bytes).unwrap();
        prop_assert_eq!(&parsed, &pkt);
        prop_assert_eq!(serialize(&parsed).unwrap(), bytes);
        if roce {
            prop_assert!(verify_icrc(&parsed).unwrap());
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        if let Ok(p) = packet::parse(&bytes) {
            prop_assert!(p.header_len() <= bytes.len());
        }
    }
}
