use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{link_id, Anomaly, Guard, LinkId};
use crate::intent::PlanStage;
use crate::ofwire::{FlowMod, Ipv4Prefix, MatchFields};
use crate::sched::Micros;

pub const DEFENSE_IDLE_TIMEOUT_S: u16 = 30;
pub const IP_DROP_PRIORITY: u16 = 1000;
pub const FLOW_DROP_PRIORITY: u16 = 2000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum RateTarget {
    /// Ingress traffic on one switch port.
    Link { switch: u64, port: u32 },
    /// Ingress traffic from one source address at one switch.
    Ip { switch: u64, src: Ipv4Addr },
}

impl RateTarget {
    pub fn switch(&self) -> u64 {
        match self {
            RateTarget::Link { switch, .. } | RateTarget::Ip { switch, .. } => *switch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLimit {
    pub target: RateTarget,
    pub bytes_per_sec: f64,
    pub idle_timeout_s: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseAction {
    RateLimit(RateLimit),
    Flow { switch: u64, flow_mod: FlowMod },
}

impl DefenseAction {
    pub fn switch(&self) -> u64 {
        match self {
            DefenseAction::RateLimit(r) => r.target.switch(),
            DefenseAction::Flow { switch, .. } => *switch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IpStage {
    Drop,
    /// Per-source rate limit at this fraction of the observed rate.
    RateLimit { fraction: f64 },
}

/// How hard each rung squeezes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseProfile {
    /// Stage ③ limit as a fraction of the link's current byte rate.
    pub link_fraction: f64,
    pub ip_stage: IpStage,
}

impl Default for DefenseProfile {
    fn default() -> Self {
        DefenseProfile { link_fraction: 0.5, ip_stage: IpStage::Drop }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DefenseError {
    #[error("anomaly has no offender")]
    NoOffender,
    #[error("stage {0} carries no defense")]
    StageTooLow(PlanStage),
}

fn drop_flow(matches: MatchFields, priority: u16) -> FlowMod {
    FlowMod::add(matches, priority, Vec::new()).with_idle_timeout(DEFENSE_IDLE_TIMEOUT_S)
}

impl Guard {
    /// Defense for `anomaly` at one ladder stage. Rates are read from the
    /// window ending at `now`.
    pub fn synthesize_defense(
        &self,
        anomaly: &Anomaly,
        stage: PlanStage,
        profile: &DefenseProfile,
        now: Micros,
    ) -> Result<Vec<DefenseAction>, DefenseError> {
        synthesize(anomaly, stage, profile, |l| self.ingress_rate(l, now))
    }
}

/// `link_rate` gives the byte rate entering a link; when unknown (0) the
/// offender byte rates stand in.
pub fn synthesize(
    anomaly: &Anomaly,
    stage: PlanStage,
    profile: &DefenseProfile,
    link_rate: impl Fn(&LinkId) -> f64,
) -> Result<Vec<DefenseAction>, DefenseError> {
    if anomaly.offenders.is_empty() {
        return Err(DefenseError::NoOffender);
    }
    match stage {
        PlanStage::Stable | PlanStage::AttackDetected => Err(DefenseError::StageTooLow(stage)),
        PlanStage::LimitAbnormalLink => {
            let (switch, port, _) = anomaly.offending_links()[0];
            let observed: f64 = anomaly
                .offenders
                .iter()
                .filter(|o| (o.switch, o.in_port) == (switch, port))
                .map(|o| o.byte_rate)
                .sum();
            let rate = link_rate(&link_id(switch, port)).max(observed);
            Ok(vec![DefenseAction::RateLimit(RateLimit {
                target: RateTarget::Link { switch, port },
                bytes_per_sec: rate * profile.link_fraction,
                idle_timeout_s: DEFENSE_IDLE_TIMEOUT_S,
            })])
        }
        PlanStage::LimitAbnormalIp => {
            let mut seen = std::collections::BTreeMap::<(u64, Ipv4Addr), f64>::new();
            for o in &anomaly.offenders {
                *seen.entry((o.switch, o.src)).or_default() += o.byte_rate;
            }
            Ok(seen
                .into_iter()
                .map(|((switch, src), byte_rate)| match profile.ip_stage {
                    IpStage::Drop => DefenseAction::Flow {
                        switch,
                        flow_mod: drop_flow(
                            MatchFields { ipv4_src: Some(Ipv4Prefix::host(src)), ..Default::default() },
                            IP_DROP_PRIORITY,
                        ),
                    },
                    IpStage::RateLimit { fraction } => DefenseAction::RateLimit(RateLimit {
                        target: RateTarget::Ip { switch, src },
                        bytes_per_sec: byte_rate * fraction,
                        idle_timeout_s: DEFENSE_IDLE_TIMEOUT_S,
                    }),
                })
                .collect())
        }
        PlanStage::IsolateAbnormalFlow => Ok(anomaly
            .offenders
            .iter()
            .map(|o| DefenseAction::Flow {
                switch: o.switch,
                flow_mod: drop_flow(
                    MatchFields {
                        in_port: Some(o.in_port),
                        ipv4_src: Some(Ipv4Prefix::host(o.src)),
                        ipv4_dst: Some(Ipv4Prefix::host(o.dst)),
                        ..Default::default()
                    },
                    FLOW_DROP_PRIORITY,
                ),
            })
            .collect()),
    }
}
