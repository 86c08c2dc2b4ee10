//! Hash-chained permissioned ledger replicated by PBFT or RPBFT over an
//! in-process virtual bus, with the registry and snapshot handlers.

pub mod bench;
pub mod cluster;
pub mod contract;
pub mod ledger;
pub mod replica;
pub mod types;

pub use bench::{measure_consensus_latency, LatencyStats};
pub use cluster::Cluster;
pub use contract::{ContractState, RegisterOp, RegistrationRecord};
pub use ledger::{export_chain, import_chain, verify_export, ChainError, ChainHead, Ledger, Receipt, TxRecord};
pub use replica::{Algorithm, ConsensusConfig, Fault, NodeId};
pub use types::{verify_chain, Block, ElementId, Hash32, HeaderMeta, RegStatus, Role, Transaction, TxKind, HASH_ALG};
