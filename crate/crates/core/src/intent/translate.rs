use std::collections::{BTreeMap, BTreeSet};

use super::types::{Intent, IntentError, Policy, PolicyAction, Preference, Verb};
use super::PlanStage;
use crate::chain::ElementId;
use crate::guard::{synthesize, Anomaly, DefenseAction, DefenseProfile, IpStage};
use crate::ofwire::{Action, FlowMod, MatchFields};
use crate::simnet::{HostSpec, TopologySpec};

pub const PATH_PRIORITY: u16 = 20;

/// What translation may look at.
#[derive(Debug, Clone)]
pub struct NetView<'a> {
    pub topology: &'a TopologySpec,
    /// Attached, non-evicted controllers.
    pub controllers: Vec<ElementId>,
    pub mapping: BTreeMap<ElementId, ElementId>,
    pub evicted: BTreeSet<ElementId>,
}

impl NetView<'_> {
    pub fn excluded_switches(&self) -> BTreeSet<u64> {
        self.topology.dpids().filter(|d| self.evicted.contains(&ElementId::switch(*d))).collect()
    }

    pub fn has_switch(&self, id: &ElementId) -> Option<u64> {
        self.topology.dpids().find(|d| &ElementId::switch(*d) == id)
    }
}

/// How a preference climbs the ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub initial: PlanStage,
    pub profile: DefenseProfile,
    /// Run Detect together with stage ④.
    pub detect: bool,
}

pub fn schedule(p: Preference) -> Schedule {
    match p {
        Preference::MaxPerformance => Schedule {
            initial: PlanStage::LimitAbnormalLink,
            profile: DefenseProfile { link_fraction: 0.05, ip_stage: IpStage::Drop },
            detect: false,
        },
        Preference::MaxProtection => Schedule {
            initial: PlanStage::LimitAbnormalLink,
            profile: DefenseProfile { link_fraction: 0.5, ip_stage: IpStage::RateLimit { fraction: 0.5 } },
            detect: true,
        },
        Preference::None => Schedule {
            initial: PlanStage::IsolateAbnormalFlow,
            profile: DefenseProfile::default(),
            detect: false,
        },
    }
}

/// Host pairs whose current shortest path crosses `excluded`, with their new
/// path. Pairs with an endpoint behind an excluded switch are skipped.
pub fn affected_paths<'t>(topo: &'t TopologySpec, already: &BTreeSet<u64>, excluded: &BTreeSet<u64>) -> Vec<(&'t HostSpec, &'t HostSpec, Vec<u64>)> {
    let all: BTreeSet<u64> = already.union(excluded).copied().collect();
    let mut out = Vec::new();
    for a in &topo.hosts {
        for b in &topo.hosts {
            if a.name == b.name || all.contains(&a.attach.dpid) || all.contains(&b.attach.dpid) {
                continue;
            }
            let Some(old) = topo.shortest_path(a.attach.dpid, b.attach.dpid, already) else { continue };
            if !old.iter().any(|s| excluded.contains(s)) {
                continue;
            }
            if let Some(new) = topo.shortest_path(a.attach.dpid, b.attach.dpid, &all) {
                out.push((a, b, new));
            }
        }
    }
    out
}

pub fn path_flows(topo: &TopologySpec, a: &HostSpec, b: &HostSpec, path: &[u64]) -> Vec<PolicyAction> {
    path.iter()
        .enumerate()
        .map(|(i, &sw)| {
            let out = match path.get(i + 1) {
                Some(&next) => topo.port_toward(sw, next).expect("path follows links"),
                None => b.attach.port,
            };
            let m = MatchFields { eth_src: Some(a.mac), eth_dst: Some(b.mac), ..Default::default() };
            PolicyAction::InstallFlow { switch: sw, flow_mod: FlowMod::add(m, PATH_PRIORITY, vec![Action::Output(out)]) }
        })
        .collect()
}

fn recalc(view: &NetView, excluded: &BTreeSet<u64>) -> Vec<PolicyAction> {
    let already = view.excluded_switches();
    affected_paths(view.topology, &already, excluded)
        .into_iter()
        .flat_map(|(a, b, p)| path_flows(view.topology, a, b, &p))
        .collect()
}

fn defense_actions(anomaly: &Anomaly, stage: PlanStage, sched: &Schedule) -> Result<Vec<PolicyAction>, IntentError> {
    let acts = synthesize(anomaly, stage, &sched.profile, |_| 0.0).map_err(|e| IntentError::NoFeasiblePolicy(e.to_string()))?;
    let mut out = Vec::new();
    if sched.detect && stage == PlanStage::LimitAbnormalIp {
        out.push(PolicyAction::Detect { scope: anomaly.victim });
    }
    out.extend(acts.into_iter().map(|a| match a {
        DefenseAction::RateLimit(r) => PolicyAction::RateLimit(r),
        DefenseAction::Flow { switch, flow_mod } => PolicyAction::InstallFlow { switch, flow_mod },
    }));
    Ok(out)
}

/// Pure mapping from an intent and a view to a policy. Defense verbs need
/// the current anomaly and the stage to build.
pub fn translate(
    intent: &Intent,
    view: &NetView,
    anomaly: Option<&Anomaly>,
    stage: PlanStage,
    policy_id: u64,
) -> Result<Policy, IntentError> {
    let target = ElementId::new(intent.target.clone());
    let actions = match intent.verb {
        Verb::RemoveDevice => {
            if let Some(dpid) = view.has_switch(&target) {
                let mut v = vec![PolicyAction::Evict { element: target.clone() }];
                v.extend(recalc(view, &BTreeSet::from([dpid])));
                v
            } else {
                let survivors: Vec<&ElementId> = view.controllers.iter().filter(|c| **c != target).collect();
                if survivors.is_empty() {
                    return Err(IntentError::NoFeasiblePolicy(format!("{target} is the only controller")));
                }
                let mut v = vec![PolicyAction::Evict { element: target.clone() }];
                let orphans = view.mapping.iter().filter(|(_, c)| **c == target).map(|(s, _)| s);
                for (i, s) in orphans.enumerate() {
                    v.push(PolicyAction::Remap { switch: s.clone(), controller: survivors[i % survivors.len()].clone() });
                }
                v
            }
        }
        Verb::RecalculatePaths => {
            let dpid = view.has_switch(&target).ok_or_else(|| IntentError::UnknownTarget(intent.target.clone()))?;
            recalc(view, &BTreeSet::from([dpid]))
        }
        Verb::ProtectService | Verb::LimitTraffic => {
            let a = anomaly.ok_or_else(|| IntentError::NoFeasiblePolicy("no active anomaly for target".into()))?;
            defense_actions(a, stage, &schedule(intent.preference))?
        }
    };
    Ok(Policy { policy_id, intent_id: intent.intent_id, stage, actions })
}
