//! Native "contract" handlers applied to every committed block: the
//! element registry plus a transaction index for lookups by hash.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::types::{
    serde_hex, Block, DeviceDescriptor, ElementId, Hash32, HeaderMeta, RegStatus, Role, Transaction, TxKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub element_id: ElementId,
    pub role: Role,
    #[serde(with = "serde_hex")]
    pub pubinfo: Vec<u8>,
    pub status: RegStatus,
    pub registered_at: u64,
}

/// Payload of a `Register` transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RegisterOp {
    Register {
        element_id: ElementId,
        role: Role,
        #[serde(with = "serde_hex")]
        pubinfo: Vec<u8>,
    },
    Evict {
        element_id: ElementId,
        reason: String,
    },
}

impl RegisterOp {
    pub fn to_payload(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("register op serializes")
    }

    pub fn from_payload(bytes: &[u8]) -> Option<RegisterOp> {
        serde_json::from_slice(bytes).ok()
    }

    pub fn element_id(&self) -> &ElementId {
        match self {
            RegisterOp::Register { element_id, .. } | RegisterOp::Evict { element_id, .. } => element_id,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ContractState {
    records: Vec<RegistrationRecord>,
    by_id: BTreeMap<ElementId, usize>,
    tx_index: HashMap<Hash32, (u64, usize)>,
    total_tx: u64,
}

impl ContractState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, id: &ElementId) -> Option<&RegistrationRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn is_registered(&self, id: &ElementId) -> bool {
        matches!(self.record(id), Some(r) if r.status == RegStatus::Registered)
    }

    /// Records in commit order.
    pub fn records(&self) -> &[RegistrationRecord] {
        &self.records
    }

    pub fn total_tx(&self) -> u64 {
        self.total_tx
    }

    pub fn locate(&self, tx_hash: &Hash32) -> Option<(u64, usize)> {
        self.tx_index.get(tx_hash).copied()
    }

    fn apply_register(&mut self, op: RegisterOp, height: u64) {
        match op {
            RegisterOp::Register { element_id, role, pubinfo } => {
                if self.by_id.contains_key(&element_id) {
                    // re-registration is a no-op; an evicted id stays evicted
                    return;
                }
                self.by_id.insert(element_id.clone(), self.records.len());
                self.records.push(RegistrationRecord {
                    element_id,
                    role,
                    pubinfo,
                    status: RegStatus::Registered,
                    registered_at: height,
                });
            }
            RegisterOp::Evict { element_id, .. } => {
                if let Some(&i) = self.by_id.get(&element_id) {
                    self.records[i].status = RegStatus::Evicted;
                }
            }
        }
    }

    fn apply_tx(&mut self, tx: &Transaction, height: u64, index: usize) {
        self.tx_index.insert(tx.tx_hash, (height, index));
        self.total_tx += 1;
        if tx.kind == TxKind::Register {
            if let Some(op) = RegisterOp::from_payload(&tx.payload) {
                self.apply_register(op, height);
            }
        }
    }

    pub fn apply_block(&mut self, block: &Block) {
        for (i, tx) in block.body.iter().enumerate() {
            self.apply_tx(tx, block.height, i);
        }
    }

    /// Header meta a block with `body` at `height` must carry: computed on
    /// the registry as it stands after the body is applied.
    pub fn header_meta_after(&self, height: u64, body: &[Transaction]) -> HeaderMeta {
        let mut scratch = RegistryScratch::from(self);
        for tx in body {
            if tx.kind == TxKind::Register {
                if let Some(op) = RegisterOp::from_payload(&tx.payload) {
                    scratch.apply(op, height);
                }
            }
        }
        scratch.meta()
    }
}

struct RegistryScratch {
    entries: Vec<DeviceDescriptor>,
    by_id: BTreeMap<ElementId, usize>,
}

impl From<&ContractState> for RegistryScratch {
    fn from(s: &ContractState) -> Self {
        RegistryScratch {
            entries: s
                .records
                .iter()
                .map(|r| DeviceDescriptor { element_id: r.element_id.clone(), role: r.role, status: r.status })
                .collect(),
            by_id: s.by_id.clone(),
        }
    }
}

impl RegistryScratch {
    fn apply(&mut self, op: RegisterOp, _height: u64) {
        match op {
            RegisterOp::Register { element_id, role, .. } => {
                if !self.by_id.contains_key(&element_id) {
                    self.by_id.insert(element_id.clone(), self.entries.len());
                    self.entries.push(DeviceDescriptor { element_id, role, status: RegStatus::Registered });
                }
            }
            RegisterOp::Evict { element_id, .. } => {
                if let Some(&i) = self.by_id.get(&element_id) {
                    self.entries[i].status = RegStatus::Evicted;
                }
            }
        }
    }

    fn meta(self) -> HeaderMeta {
        let switch_count = self
            .entries
            .iter()
            .filter(|d| d.role == Role::Switch && d.status == RegStatus::Registered)
            .count() as u32;
        HeaderMeta { switch_count, device_info: self.entries }
    }
}
