//! Encodes a flow_mod and a packet_in, feeds the bytes through a frame
//! buffer in awkward chunks, and decodes them back.

use std::net::Ipv4Addr;

use ledgernet::ofwire::{decode, encode, Action, FlowMod, FrameBuffer, Ipv4Prefix, MatchFields, OfBody, OfMessage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let matches = MatchFields { ipv4_src: Some(Ipv4Prefix::host(Ipv4Addr::new(172, 16, 0, 9))), ..Default::default() };
    let drop = FlowMod::add(matches, 300, Vec::new()).with_idle_timeout(10);
    let fwd = FlowMod::add(MatchFields { in_port: Some(1), ..Default::default() }, 10, vec![Action::Output(2)]);
    let msgs = [OfMessage::hello(1), OfMessage::new(2, OfBody::FlowMod(drop)), OfMessage::new(3, OfBody::FlowMod(fwd))];

    let mut wire = Vec::new();
    for m in &msgs {
        let bytes = encode(m)?;
        println!("xid {} type {} -> {} bytes", m.xid, m.msg_type(), bytes.len());
        wire.extend(bytes);
    }

    let mut buf = FrameBuffer::new();
    let mut decoded = Vec::new();
    for chunk in wire.chunks(7) {
        buf.push(chunk);
        while let Some(frame) = buf.next_frame()? {
            let (msg, rest) = decode(&frame)?;
            assert!(rest.is_empty());
            decoded.push(msg);
        }
    }
    for (a, b) in msgs.iter().zip(&decoded) {
        println!("xid {} round-trips: {}", a.xid, a == b);
    }
    if let OfBody::FlowMod(fm) = &decoded[1].body {
        println!("decoded drop rule: priority={} is_drop={}", fm.priority, fm.is_drop());
    }
    Ok(())
}
