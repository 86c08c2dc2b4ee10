use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::PlanStage;
use crate::chain::{ElementId, Hash32};
use crate::guard::{Offender, RateLimit};
use crate::ofwire::FlowMod;
use crate::sched::Micros;

pub type IntentId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verb {
    RemoveDevice,
    RecalculatePaths,
    ProtectService,
    LimitTraffic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Preference {
    MaxPerformance,
    MaxProtection,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IntentStatus {
    Received,
    Translated,
    Provisioned,
    Validated,
    Failed,
}

/// What an operator sends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentRequest {
    pub verb: Verb,
    /// Element id ("C1", "S3") or host address.
    pub target: String,
    #[serde(default)]
    pub preference: Preference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub status: IntentStatus,
    pub at: Micros,
    pub tx_hash: Option<Hash32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub intent_id: IntentId,
    pub verb: Verb,
    pub target: String,
    pub preference: Preference,
    pub issued_at: Micros,
    pub status: IntentStatus,
    pub history: Vec<Transition>,
    /// Raised by the guard rather than an operator.
    pub automatic: bool,
}

impl Intent {
    pub fn target_ip(&self) -> Option<Ipv4Addr> {
        self.target.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PolicyAction {
    Evict { element: ElementId },
    Remap { switch: ElementId, controller: ElementId },
    InstallFlow { switch: u64, flow_mod: FlowMod },
    RateLimit(RateLimit),
    Detect { scope: Ipv4Addr },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub policy_id: u64,
    pub intent_id: IntentId,
    pub stage: PlanStage,
    pub actions: Vec<PolicyAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Met,
    NotMet,
    Adjusted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// Highest 1 s victim-link byte rate in the window.
    pub max_rate: f64,
    pub mean_rate: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub intent_id: IntentId,
    pub window: (Micros, Micros),
    pub stage: PlanStage,
    pub metrics: Option<MetricsSummary>,
    pub verdict: Verdict,
    pub adjustments: Vec<String>,
    /// Flows named by a Detect action in this incident.
    pub attacker_flows: Vec<Offender>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum IntentError {
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("no feasible policy: {0}")]
    NoFeasiblePolicy(String),
    #[error("action {index} failed: {reason}")]
    PartialFailure { index: usize, reason: String },
    #[error("unknown intent {0}")]
    UnknownIntent(IntentId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineEvent {
    IntentTransition { intent_id: IntentId, status: IntentStatus, at: Micros },
    StageChanged { intent_id: IntentId, from: PlanStage, to: PlanStage, at: Micros },
    DefenseInstalled { intent_id: IntentId, stage: PlanStage, actions: usize, flow_mods: usize, at: Micros },
    ActionExecuted { intent_id: IntentId, index: usize, action: PolicyAction, at: Micros },
    ActionFailed { intent_id: IntentId, index: usize, reason: String, at: Micros },
    Report(ValidationReport),
}

/// On-chain record of one lifecycle step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub intent_id: IntentId,
    pub verb: Verb,
    pub target: String,
    pub preference: Preference,
    pub status: IntentStatus,
    pub stage: PlanStage,
    pub at: Micros,
}
