use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::ofwire::MacAddr;

pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);
pub const ENCODED_LEN: usize = 32;

/// A data-plane frame reduced to the fields anything here inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub id: u64,
    pub eth_src: MacAddr,
    pub eth_dst: MacAddr,
    pub ipv4_src: Ipv4Addr,
    pub ipv4_dst: Ipv4Addr,
    pub size: u32,
}

impl Frame {
    pub fn is_broadcast(&self) -> bool {
        self.eth_dst == BROADCAST
    }

    /// Fixed 32-byte layout: id, MACs, addresses, size, padding.
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(ENCODED_LEN);
        b.extend_from_slice(&self.id.to_be_bytes());
        b.extend_from_slice(&self.eth_dst.0);
        b.extend_from_slice(&self.eth_src.0);
        b.extend_from_slice(&self.ipv4_src.octets());
        b.extend_from_slice(&self.ipv4_dst.octets());
        b.extend_from_slice(&self.size.to_be_bytes());
        b.resize(ENCODED_LEN, 0);
        b
    }

    pub fn decode(b: &[u8]) -> Option<Frame> {
        if b.len() < 32 {
            return None;
        }
        let mac = |o: usize| MacAddr(b[o..o + 6].try_into().expect("6 bytes"));
        let ip = |o: usize| Ipv4Addr::new(b[o], b[o + 1], b[o + 2], b[o + 3]);
        Some(Frame {
            id: u64::from_be_bytes(b[0..8].try_into().expect("8 bytes")),
            eth_dst: mac(8),
            eth_src: mac(14),
            ipv4_src: ip(20),
            ipv4_dst: ip(24),
            size: u32::from_be_bytes(b[28..32].try_into().expect("4 bytes")),
        })
    }
}
