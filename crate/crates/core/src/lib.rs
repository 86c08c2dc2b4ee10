//! Ledger-backed OpenFlow middleware: a transparent controller/switch proxy
//! that registers network elements on a PBFT-replicated hash chain, stores
//! control-plane snapshots there, and closes an intent-driven defense loop
//! against packet_in floods on a deterministic simulated network.

pub mod chain;
pub mod cli;
pub mod gateway;
pub mod guard;
pub mod intent;
pub mod middleware;
pub mod ofwire;
pub mod sched;
pub mod simnet;
