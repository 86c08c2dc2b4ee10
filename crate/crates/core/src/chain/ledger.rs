//! Client-side view of the replicated chain: admission checks, receipts,
//! queries against one observer replica, and NDJSON export.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cluster::Cluster;
use super::contract::{RegisterOp, RegistrationRecord};
use super::replica::{ConfigError, ConsensusConfig, Fault, NodeId};
use super::types::{verify_chain, Block, ElementId, Hash32, Transaction, TxKind, VerifyError};
use crate::sched::Micros;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("submitter {0} is not registered")]
    NotRegistered(ElementId),
    #[error("no commit within the view-change budget")]
    ConsensusTimeout,
    #[error("not found")]
    NotFound,
    #[error("malformed transaction: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_hash: Hash32,
    pub block_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainHead {
    pub height: u64,
    pub block_hash: Hash32,
    pub total_tx_count: u64,
    pub hash_alg: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub block_height: u64,
    pub tx: Transaction,
}

pub struct Ledger {
    cluster: Cluster,
    observer: NodeId,
    next_seq: BTreeMap<ElementId, u64>,
    pending_registrations: BTreeMap<ElementId, Hash32>,
    exported_height: u64,
}

impl Ledger {
    pub fn new(cfg: ConsensusConfig, seed: u64) -> Result<Self, ConfigError> {
        Ok(Self::from_cluster(Cluster::new(cfg, seed)?))
    }

    pub fn with_faults(cfg: ConsensusConfig, seed: u64, faults: BTreeMap<NodeId, Fault>) -> Result<Self, ConfigError> {
        Ok(Self::from_cluster(Cluster::with_faults(cfg, seed, faults)?))
    }

    fn from_cluster(cluster: Cluster) -> Self {
        let observer = (0..cluster.config().n_nodes).find(|&i| cluster.replica(i).fault().is_none()).unwrap_or(0);
        Ledger { cluster, observer, next_seq: BTreeMap::new(), pending_registrations: BTreeMap::new(), exported_height: 0 }
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn now(&self) -> Micros {
        self.cluster.now()
    }

    pub fn run_until(&mut self, t: Micros) {
        if t > self.cluster.now() {
            self.cluster.run_until(t);
        }
    }

    /// Time a submitter should wait for a receipt: the batch window plus
    /// room for a few view changes.
    pub fn wait_budget(&self) -> Micros {
        let c = self.cluster.config();
        c.batch_timeout_us + 4 * c.view_timeout() + 10 * c.link_delay_us
    }

    fn observer_state(&self) -> &super::contract::ContractState {
        self.cluster.replica(self.observer).state()
    }

    /// Registered on chain, or named by a Register already submitted and not
    /// yet rejected.
    pub fn is_admitted(&self, id: &ElementId) -> bool {
        let state = self.observer_state();
        match state.record(id) {
            Some(_) => state.is_registered(id),
            None => self.pending_registrations.contains_key(id),
        }
    }

    pub fn record(&self, id: &ElementId) -> Option<&RegistrationRecord> {
        self.observer_state().record(id)
    }

    pub fn is_registered(&self, id: &ElementId) -> bool {
        self.observer_state().is_registered(id)
    }

    /// Queues a transaction for consensus and returns its hash.
    pub fn submit(&mut self, kind: TxKind, payload: Vec<u8>, submitter: &ElementId) -> Result<Hash32, ChainError> {
        if kind == TxKind::Register {
            let op = RegisterOp::from_payload(&payload)
                .ok_or_else(|| ChainError::Malformed("register payload is not a register op".into()))?;
            if let RegisterOp::Evict { .. } = op {
                if !self.is_admitted(submitter) {
                    return Err(ChainError::NotRegistered(submitter.clone()));
                }
            }
            let seq = self.bump_seq(submitter);
            let tx = Transaction::new(kind, payload, submitter.clone(), seq, self.now());
            if let RegisterOp::Register { element_id, .. } = op {
                self.pending_registrations.entry(element_id).or_insert(tx.tx_hash);
            }
            return Ok(self.enqueue(tx));
        }
        if !self.is_admitted(submitter) {
            return Err(ChainError::NotRegistered(submitter.clone()));
        }
        let seq = self.bump_seq(submitter);
        let tx = Transaction::new(kind, payload, submitter.clone(), seq, self.now());
        Ok(self.enqueue(tx))
    }

    fn bump_seq(&mut self, submitter: &ElementId) -> u64 {
        let s = self.next_seq.entry(submitter.clone()).or_insert(0);
        *s += 1;
        *s
    }

    fn enqueue(&mut self, tx: Transaction) -> Hash32 {
        let h = tx.tx_hash;
        self.cluster.submit(tx, self.observer);
        h
    }

    pub fn receipt(&self, tx_hash: &Hash32) -> Option<Receipt> {
        self.observer_state().locate(tx_hash).map(|(block_height, _)| Receipt { tx_hash: *tx_hash, block_height })
    }

    /// Advances virtual time until `tx_hash` commits at the observer.
    pub fn wait_for(&mut self, tx_hash: Hash32) -> Result<Receipt, ChainError> {
        let deadline = self.now() + self.wait_budget();
        let observer = self.observer;
        let ok = self
            .cluster
            .run_while(deadline, |c| c.replica(observer).state().locate(&tx_hash).is_some());
        if ok {
            Ok(self.receipt(&tx_hash).expect("located"))
        } else {
            Err(ChainError::ConsensusTimeout)
        }
    }

    pub fn submit_and_wait(&mut self, kind: TxKind, payload: Vec<u8>, submitter: &ElementId) -> Result<Receipt, ChainError> {
        let h = self.submit(kind, payload, submitter)?;
        self.wait_for(h)
    }

    /// Registers an element and waits for the commit.
    pub fn register(&mut self, element_id: &ElementId, role: super::types::Role, pubinfo: Vec<u8>) -> Result<Receipt, ChainError> {
        let op = RegisterOp::Register { element_id: element_id.clone(), role, pubinfo };
        self.submit_and_wait(TxKind::Register, op.to_payload(), element_id)
    }

    pub fn chain(&self) -> &[Arc<Block>] {
        self.cluster.replica(self.observer).chain()
    }

    pub fn block_by_height(&self, height: u64) -> Result<Arc<Block>, ChainError> {
        self.chain().get(height as usize).cloned().ok_or(ChainError::NotFound)
    }

    pub fn tx_by_hash(&self, tx_hash: &Hash32) -> Result<TxRecord, ChainError> {
        let (h, i) = self.observer_state().locate(tx_hash).ok_or(ChainError::NotFound)?;
        let tx = self.chain()[h as usize].body[i].clone();
        Ok(TxRecord { block_height: h, tx })
    }

    pub fn registry_view(&self) -> Vec<RegistrationRecord> {
        self.observer_state().records().to_vec()
    }

    pub fn chain_head(&self) -> ChainHead {
        let tip = self.chain().last().expect("genesis");
        ChainHead {
            height: tip.height,
            block_hash: tip.block_hash,
            total_tx_count: self.observer_state().total_tx(),
            hash_alg: super::types::HASH_ALG.to_string(),
        }
    }

    /// Blocks committed since the previous call, for event streaming.
    pub fn take_new_blocks(&mut self) -> Vec<Arc<Block>> {
        let chain = self.cluster.replica(self.observer).chain();
        let from = self.exported_height as usize + 1;
        let out: Vec<Arc<Block>> = chain.iter().skip(from).cloned().collect();
        self.exported_height = chain.len() as u64 - 1;
        out
    }

    pub fn count_committed(&self, kind: TxKind) -> usize {
        self.chain().iter().flat_map(|b| b.body.iter()).filter(|t| t.kind == kind).count()
    }

    pub fn export<W: Write>(&self, w: W) -> io::Result<()> {
        export_chain(w, self.chain().iter().map(|b| b.as_ref()))
    }
}

/// One block per line.
pub fn export_chain<'a, W: Write>(mut w: W, blocks: impl IntoIterator<Item = &'a Block>) -> io::Result<()> {
    for b in blocks {
        serde_json::to_writer(&mut w, b)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn import_chain<R: BufRead>(r: R) -> io::Result<Vec<Block>> {
    let mut blocks = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        blocks.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(blocks)
}

/// Reads an export and re-verifies every hash and link.
pub fn verify_export<R: BufRead>(r: R) -> Result<usize, VerifyError> {
    let blocks = import_chain(r).map_err(|_| VerifyError::Empty)?;
    verify_chain(&blocks)?;
    Ok(blocks.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::types::Role;
    use crate::sched::MS;

    fn ledger() -> Ledger {
        Ledger::new(ConsensusConfig::pbft(4, 10 * MS), 7).unwrap()
    }

    #[test]
    fn fresh_head_is_genesis() {
        let l = ledger();
        let head = l.chain_head();
        assert_eq!((head.height, head.total_tx_count), (0, 0));
        assert_eq!(l.block_by_height(1), Err(ChainError::NotFound));
    }

    #[test]
    fn register_then_snapshot() {
        let mut l = ledger();
        let c1 = ElementId::new("C1");
        let r1 = l.register(&c1, Role::Controller, vec![1, 2]).unwrap();
        let s = l.submit_and_wait(TxKind::Snapshot, b"ports".to_vec(), &c1).unwrap();
        assert!(s.block_height >= r1.block_height);
        assert_eq!(l.tx_by_hash(&s.tx_hash).unwrap().tx.payload, b"ports");
        assert_eq!(l.block_by_height(1).unwrap().prev_hash, l.block_by_height(0).unwrap().block_hash);
        assert_eq!(l.registry_view().len(), 1);
    }

    #[test]
    fn unregistered_submitter_rejected() {
        let mut l = ledger();
        let err = l.submit(TxKind::Snapshot, b"x".to_vec(), &"C9".into()).unwrap_err();
        assert_eq!(err, ChainError::NotRegistered("C9".into()));
    }

    #[test]
    fn identical_payloads_get_distinct_hashes() {
        let mut l = ledger();
        let c1 = ElementId::new("C1");
        l.register(&c1, Role::Controller, vec![]).unwrap();
        let a = l.submit(TxKind::Snapshot, b"same".to_vec(), &c1).unwrap();
        let b = l.submit(TxKind::Snapshot, b"same".to_vec(), &c1).unwrap();
        assert_ne!(a, b);
        l.wait_for(a).unwrap();
        l.wait_for(b).unwrap();
    }

    #[test]
    fn export_round_trips_and_detects_flip() {
        let mut l = ledger();
        let c1 = ElementId::new("C1");
        l.register(&c1, Role::Controller, vec![]).unwrap();
        l.submit_and_wait(TxKind::Snapshot, vec![0xAB; 16], &c1).unwrap();
        let mut buf = Vec::new();
        l.export(&mut buf).unwrap();
        assert_eq!(verify_export(&buf[..]).unwrap(), l.chain().len());
        let mut blocks = import_chain(&buf[..]).unwrap();
        let last = blocks.last_mut().unwrap();
        last.body[0].payload[3] ^= 0x10;
        assert!(verify_chain(&blocks).is_err());
    }
}
