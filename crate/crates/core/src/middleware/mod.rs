//! Transparent controller/switch proxy with registry-based admission,
//! dynamic mapping, snapshot capture and eviction.
//!
//! [`Middleware`] is sans-IO: callers feed it bytes and clock ticks and carry
//! out the returned [`MwOutput`]s. The simulated network drives it directly;
//! [`service`] drives it from TCP sockets.

mod core;
pub mod service;

use serde::{Deserialize, Serialize};

use crate::chain::ElementId;
use crate::ofwire::{Direction, MsgType};
use crate::sched::Micros;

pub use self::core::Middleware;

/// Handle for one switch-side connection, assigned by the caller.
pub type ConnId = u64;

/// One middleware-to-controller channel, opened per mapped switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CapturePolicy {
    #[default]
    All,
    /// FlowMod, FeaturesReply and Error only.
    ControlOnly,
    /// Every k-th forwarded message.
    Sampled { k: u32 },
    Off,
}

impl CapturePolicy {
    pub fn wants(&self, msg_type: MsgType, ordinal: u64) -> bool {
        match *self {
            CapturePolicy::All => true,
            CapturePolicy::ControlOnly => {
                matches!(msg_type, MsgType::FlowMod | MsgType::FeaturesReply | MsgType::Error)
            }
            CapturePolicy::Sampled { k } => k > 0 && ordinal.is_multiple_of(k as u64),
            CapturePolicy::Off => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiddlewareConfig {
    pub id: ElementId,
    /// Auto-register unknown controllers instead of rejecting them.
    pub open_enrollment: bool,
    pub capture: CapturePolicy,
    pub pending_capacity: usize,
    pub echo_interval_us: Micros,
}

impl Default for MiddlewareConfig {
    fn default() -> Self {
        MiddlewareConfig {
            id: ElementId::new("M0"),
            open_enrollment: false,
            capture: CapturePolicy::All,
            pending_capacity: 256,
            echo_interval_us: crate::ofwire::fsm::DEFAULT_ECHO_INTERVAL_US,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotRegistered,
    Evicted,
    ConsensusTimeout,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::NotRegistered => "not_registered",
            RejectReason::Evicted => "evicted",
            RejectReason::ConsensusTimeout => "consensus_timeout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    Accept,
    Reject(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MwError {
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("element {0} is evicted")]
    Evicted(ElementId),
    #[error("controller {0} has no live attachment")]
    NotAttached(ElementId),
    #[error("switch {0} is not connected")]
    NotConnected(ElementId),
    #[error("chain: {0}")]
    Chain(#[from] crate::chain::ChainError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MwEvent {
    ControllerAccepted { controller: ElementId },
    ControllerRejected { controller: ElementId, reason: RejectReason },
    SwitchConnected { switch: ElementId },
    SwitchRejected { switch: ElementId, reason: RejectReason },
    Mapped { switch: ElementId, controller: ElementId },
    Remapped { switch: ElementId, from: ElementId, to: ElementId },
    Unmapped { switch: ElementId },
    Evicted { element: ElementId, reason: String },
    SessionDisconnected { element: ElementId },
    PendingDropped { switch: ElementId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MwOutput {
    ToSwitch { conn: ConnId, bytes: Vec<u8> },
    ToController { chan: ChannelId, bytes: Vec<u8> },
    OpenChannel { chan: ChannelId, controller: ElementId, switch: ElementId },
    CloseChannel { chan: ChannelId },
    CloseSwitch { conn: ConnId },
    CloseController { controller: ElementId },
    Event(MwEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Handshake,
    PortInfo,
    FlowTable,
    LinkStatus,
    Mapping,
    Message,
}

impl SnapshotKind {
    pub fn of(msg_type: MsgType) -> Self {
        match msg_type {
            MsgType::Hello | MsgType::FeaturesRequest | MsgType::FeaturesReply => SnapshotKind::Handshake,
            MsgType::PacketIn => SnapshotKind::PortInfo,
            MsgType::FlowMod => SnapshotKind::FlowTable,
            MsgType::EchoRequest | MsgType::EchoReply => SnapshotKind::LinkStatus,
            _ => SnapshotKind::Message,
        }
    }
}

/// Payload of a Snapshot transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub switch_id: ElementId,
    pub controller_id: Option<ElementId>,
    pub direction: Direction,
    pub timestamp_us: Micros,
    pub kind: SnapshotKind,
    #[serde(with = "crate::chain::types::serde_hex")]
    pub bytes: Vec<u8>,
}

impl SnapshotRecord {
    pub fn to_payload(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("snapshot serializes")
    }

    pub fn from_payload(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MwStats {
    pub forwarded: u64,
    pub snapshots_queued: u64,
    pub snapshots_submitted: u64,
    pub pending_dropped: u64,
}

#[cfg(test)]
mod tests;
