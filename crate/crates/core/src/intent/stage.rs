use std::fmt;

use serde::{Deserialize, Serialize};

/// The defense ladder. Ordered: escalation only moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlanStage {
    Stable = 1,
    AttackDetected = 2,
    LimitAbnormalLink = 3,
    LimitAbnormalIp = 4,
    IsolateAbnormalFlow = 5,
}

impl PlanStage {
    pub const ALL: [PlanStage; 5] = [
        PlanStage::Stable,
        PlanStage::AttackDetected,
        PlanStage::LimitAbnormalLink,
        PlanStage::LimitAbnormalIp,
        PlanStage::IsolateAbnormalFlow,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<PlanStage> {
        Self::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    /// The next rung, or None at the top.
    pub fn escalate(self) -> Option<PlanStage> {
        Self::from_number(self.number() + 1)
    }
}

impl fmt::Display for PlanStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PlanStage::Stable => "stable",
            PlanStage::AttackDetected => "attack_detected",
            PlanStage::LimitAbnormalLink => "limit_abnormal_link",
            PlanStage::LimitAbnormalIp => "limit_abnormal_ip",
            PlanStage::IsolateAbnormalFlow => "isolate_abnormal_flow",
        };
        write!(f, "{}({name})", self.number())
    }
}
