use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::sched::Micros;

/// Name of the digest the chain uses for transaction and block hashes.
pub const HASH_ALG: &str = "sha256";

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub const ZERO: Hash32 = Hash32([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Hash32> {
        let v = hex::decode(s).ok()?;
        let a: [u8; 32] = v.try_into().ok()?;
        Some(Hash32(a))
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Hash32::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

/// Stable identity of a controller, switch or middleware instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn new(s: impl Into<String>) -> Self {
        ElementId(s.into())
    }

    /// Switches are named after their datapath id.
    pub fn switch(dpid: u64) -> Self {
        ElementId(format!("S{dpid}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        ElementId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxKind {
    Register,
    Snapshot,
    Intent,
    Policy,
    FlowTable,
}

impl TxKind {
    fn code(self) -> u8 {
        match self {
            TxKind::Register => 1,
            TxKind::Snapshot => 2,
            TxKind::Intent => 3,
            TxKind::Policy => 4,
            TxKind::FlowTable => 5,
        }
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

pub(crate) use hex_bytes as serde_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_hash: Hash32,
    pub kind: TxKind,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub submitter: ElementId,
    pub seq: u64,
    pub timestamp_us: Micros,
}

impl Transaction {
    pub fn new(kind: TxKind, payload: Vec<u8>, submitter: ElementId, seq: u64, timestamp_us: Micros) -> Self {
        let tx_hash = Self::digest(kind, &payload, &submitter, seq);
        Transaction { tx_hash, kind, payload, submitter, seq, timestamp_us }
    }

    /// Length-prefixed so field boundaries cannot shift between inputs.
    pub fn digest(kind: TxKind, payload: &[u8], submitter: &ElementId, seq: u64) -> Hash32 {
        let mut h = Sha256::new();
        h.update([kind.code()]);
        h.update((payload.len() as u64).to_be_bytes());
        h.update(payload);
        h.update((submitter.0.len() as u64).to_be_bytes());
        h.update(submitter.0.as_bytes());
        h.update(seq.to_be_bytes());
        Hash32(h.finalize().into())
    }

    pub fn verify(&self) -> bool {
        Self::digest(self.kind, &self.payload, &self.submitter, self.seq) == self.tx_hash
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Controller,
    Switch,
    Middleware,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegStatus {
    Registered,
    Evicted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub element_id: ElementId,
    pub role: Role,
    pub status: RegStatus,
}

/// Block header summary: switch count plus the element descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct HeaderMeta {
    pub switch_count: u32,
    pub device_info: Vec<DeviceDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub view: u64,
    pub prev_hash: Hash32,
    pub header_meta: HeaderMeta,
    #[serde(rename = "txs")]
    pub body: Vec<Transaction>,
    pub block_hash: Hash32,
}

impl Block {
    pub fn genesis() -> Block {
        Block::new(0, 0, Hash32::ZERO, HeaderMeta::default(), Vec::new())
    }

    pub fn new(height: u64, view: u64, prev_hash: Hash32, header_meta: HeaderMeta, body: Vec<Transaction>) -> Block {
        let block_hash = Self::compute_hash(height, &prev_hash, &header_meta, &body);
        Block { height, view, prev_hash, header_meta, body, block_hash }
    }

    /// Covers height, parent, header and every transaction hash. The view a
    /// block was proposed in is bookkeeping and stays outside the digest, so
    /// a re-proposal in a later view keeps its hash.
    pub fn compute_hash(height: u64, prev_hash: &Hash32, meta: &HeaderMeta, body: &[Transaction]) -> Hash32 {
        let mut h = Sha256::new();
        h.update(b"block");
        h.update(height.to_be_bytes());
        h.update(prev_hash.0);
        let meta_bytes = serde_json::to_vec(meta).expect("header meta serializes");
        h.update((meta_bytes.len() as u64).to_be_bytes());
        h.update(&meta_bytes);
        h.update((body.len() as u64).to_be_bytes());
        for tx in body {
            h.update(tx.tx_hash.0);
        }
        Hash32(h.finalize().into())
    }

    /// Recomputes every transaction hash and the block hash.
    pub fn verify_self(&self) -> bool {
        self.body.iter().all(Transaction::verify)
            && Self::compute_hash(self.height, &self.prev_hash, &self.header_meta, &self.body) == self.block_hash
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("chain is empty")]
    Empty,
    #[error("genesis block is malformed")]
    BadGenesis,
    #[error("block at index {0} has height {1}")]
    HeightGap(usize, u64),
    #[error("block {0} does not link to its parent")]
    BrokenLink(u64),
    #[error("block {0} fails hash recomputation")]
    BadHash(u64),
}

/// Full re-verification of a chain starting at genesis.
pub fn verify_chain<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> Result<(), VerifyError> {
    let mut prev: Option<&Block> = None;
    for (i, b) in blocks.into_iter().enumerate() {
        if b.height != i as u64 {
            return Err(VerifyError::HeightGap(i, b.height));
        }
        if !b.verify_self() {
            return Err(VerifyError::BadHash(b.height));
        }
        match prev {
            None => {
                if b.prev_hash != Hash32::ZERO || !b.body.is_empty() {
                    return Err(VerifyError::BadGenesis);
                }
            }
            Some(p) => {
                if b.prev_hash != p.block_hash {
                    return Err(VerifyError::BrokenLink(b.height));
                }
            }
        }
        prev = Some(b);
    }
    if prev.is_none() {
        return Err(VerifyError::Empty);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(seq: u64) -> Transaction {
        Transaction::new(TxKind::Snapshot, b"same".to_vec(), ElementId::new("C1"), seq, 0)
    }

    #[test]
    fn seq_separates_identical_payloads() {
        assert_ne!(tx(1).tx_hash, tx(2).tx_hash);
    }

    #[test]
    fn chain_links_and_detects_tamper() {
        let g = Block::genesis();
        let b1 = Block::new(1, 0, g.block_hash, HeaderMeta::default(), vec![tx(1), tx(2)]);
        assert_eq!(b1.prev_hash, g.block_hash);
        let mut chain = vec![g, b1];
        verify_chain(&chain).unwrap();
        chain[1].body[0].payload[0] ^= 1;
        assert_eq!(verify_chain(&chain), Err(VerifyError::BadHash(1)));
    }

    #[test]
    fn hash_hex_round_trip() {
        let h = tx(3).tx_hash;
        assert_eq!(Hash32::from_hex(&h.to_hex()), Some(h));
        assert!(Hash32::from_hex("zz").is_none());
    }
}
