use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::chain::{ConsensusConfig, ElementId, Ledger, TxKind};
use crate::guard::{Guard, GuardConfig};
use crate::sched::{Micros, MS, SEC};
use crate::simnet::TopologySpec;

struct MockPlant {
    topo: TopologySpec,
    controllers: Vec<ElementId>,
    mapping: BTreeMap<ElementId, ElementId>,
    evicted: BTreeSet<ElementId>,
    guard: Guard,
    ledger: Ledger,
    executed: Vec<PolicyAction>,
    fail_switch: Option<u64>,
}

impl MockPlant {
    fn new(topo: TopologySpec, controllers: &[&str]) -> MockPlant {
        let controllers: Vec<ElementId> = controllers.iter().map(|c| ElementId::new(*c)).collect();
        let mapping = topo
            .dpids()
            .enumerate()
            .map(|(i, d)| (ElementId::switch(d), controllers[i % controllers.len()].clone()))
            .collect();
        let ledger = Ledger::new(ConsensusConfig::pbft(4, 10 * MS), 1).unwrap();
        MockPlant {
            topo,
            controllers,
            mapping,
            evicted: BTreeSet::new(),
            guard: Guard::new(GuardConfig::default()),
            ledger,
            executed: Vec::new(),
            fail_switch: None,
        }
    }
}

impl Plant for MockPlant {
    fn topology(&self) -> &TopologySpec {
        &self.topo
    }
    fn live_controllers(&self) -> Vec<ElementId> {
        self.controllers.iter().filter(|c| !self.evicted.contains(*c)).cloned().collect()
    }
    fn mapping(&self) -> BTreeMap<ElementId, ElementId> {
        self.mapping.clone()
    }
    fn evicted(&self) -> BTreeSet<ElementId> {
        self.evicted.clone()
    }
    fn known_elements(&self) -> BTreeSet<ElementId> {
        self.controllers.iter().cloned().chain(self.mapping.keys().cloned()).collect()
    }
    fn guard(&self) -> &Guard {
        &self.guard
    }
    fn ledger(&mut self) -> &mut Ledger {
        &mut self.ledger
    }
    fn execute(&mut self, action: &PolicyAction) -> Result<(), String> {
        match action {
            PolicyAction::Evict { element } => {
                self.evicted.insert(element.clone());
                self.mapping.remove(element);
            }
            PolicyAction::Remap { switch, controller } => {
                self.mapping.insert(switch.clone(), controller.clone());
            }
            PolicyAction::InstallFlow { switch, .. } if Some(*switch) == self.fail_switch => {
                return Err(format!("S{switch} unreachable"));
            }
            _ => {}
        }
        self.executed.push(action.clone());
        Ok(())
    }
}

fn engine(plant: &mut MockPlant) -> IntentEngine {
    let e = IntentEngine::new(EngineConfig::default());
    e.bootstrap(&mut plant.ledger).unwrap();
    e
}

fn req(verb: Verb, target: &str) -> IntentRequest {
    IntentRequest { verb, target: target.into(), preference: Preference::None }
}

fn statuses(e: &IntentEngine, id: IntentId) -> Vec<IntentStatus> {
    e.get(id).unwrap().intent.history.iter().map(|t| t.status).collect()
}

/// Every simple path from `a` to `b` avoiding `excluded`, shortest first,
/// ties broken lexicographically.
fn brute_force_path(topo: &TopologySpec, a: u64, b: u64, excluded: &BTreeSet<u64>) -> Option<Vec<u64>> {
    fn dfs(topo: &TopologySpec, at: u64, b: u64, ex: &BTreeSet<u64>, path: &mut Vec<u64>, best: &mut Option<Vec<u64>>) {
        if at == b {
            let better = match best {
                None => true,
                Some(cur) => (path.len(), &*path) < (cur.len(), cur),
            };
            if better {
                *best = Some(path.clone());
            }
            return;
        }
        for (_, far) in topo.neighbors(at) {
            let n = far.dpid;
            if ex.contains(&n) || path.contains(&n) {
                continue;
            }
            path.push(n);
            dfs(topo, n, b, ex, path, best);
            path.pop();
        }
    }
    if excluded.contains(&a) || excluded.contains(&b) {
        return None;
    }
    let mut best = None;
    dfs(topo, a, b, excluded, &mut vec![a], &mut best);
    best
}

#[test]
fn remove_switch_runs_the_full_lifecycle() {
    let mut p = MockPlant::new(TopologySpec::default(), &["C1"]);
    let mut e = engine(&mut p);
    let id = e.submit(req(Verb::RemoveDevice, "S3"), 0, &mut p).unwrap();
    assert_eq!(statuses(&e, id), vec![IntentStatus::Received]);
    e.step(100 * MS, &mut p);
    assert_eq!(statuses(&e, id), vec![IntentStatus::Received, IntentStatus::Translated, IntentStatus::Provisioned]);
    assert_eq!(p.executed[0], PolicyAction::Evict { element: ElementId::switch(3) });
    let flows = p.executed.iter().filter(|a| matches!(a, PolicyAction::InstallFlow { .. })).count();
    assert!(flows > 0);
    assert!(p.executed.iter().all(|a| !matches!(a, PolicyAction::InstallFlow { switch: 3, .. })));
    e.step(3 * SEC, &mut p);
    assert_eq!(e.get(id).unwrap().intent.status, IntentStatus::Provisioned);
    e.step(100 * MS + 5 * SEC, &mut p);
    assert_eq!(e.get(id).unwrap().intent.status, IntentStatus::Validated);
    assert_eq!(e.report(id).unwrap().unwrap().verdict, Verdict::Met);

    let t = p.ledger.now() + 2 * SEC;
    p.ledger.run_until(t);
    assert_eq!(p.ledger.count_committed(TxKind::Intent), 4);
    assert_eq!(p.ledger.count_committed(TxKind::Policy), 1);
    assert_eq!(p.ledger.count_committed(TxKind::FlowTable), flows);
}

#[test]
fn recalculated_paths_match_brute_force() {
    for topo in [TopologySpec::default(), TopologySpec::line(4, 8), TopologySpec::ring_with_chord(8, 16)] {
        for dpid in topo.dpids() {
            let excluded = BTreeSet::from([dpid]);
            let paths = translate::affected_paths(&topo, &BTreeSet::new(), &excluded);
            for (a, b, path) in &paths {
                let oracle = brute_force_path(&topo, a.attach.dpid, b.attach.dpid, &excluded);
                assert_eq!(Some(path.clone()), oracle, "{} -> {} avoiding S{dpid}", a.name, b.name);
            }
            // Every pair whose old route crossed the switch and still has a route is covered.
            for a in &topo.hosts {
                for b in &topo.hosts {
                    if a.name == b.name || a.attach.dpid == dpid || b.attach.dpid == dpid {
                        continue;
                    }
                    let old = brute_force_path(&topo, a.attach.dpid, b.attach.dpid, &BTreeSet::new()).unwrap();
                    let crosses = old.contains(&dpid);
                    let reroutable = brute_force_path(&topo, a.attach.dpid, b.attach.dpid, &excluded).is_some();
                    let listed = paths.iter().any(|(x, y, _)| x.name == a.name && y.name == b.name);
                    assert_eq!(listed, crosses && reroutable, "{} -> {}", a.name, b.name);
                }
            }
        }
    }
}

#[test]
fn removing_the_only_controller_is_infeasible() {
    let mut p = MockPlant::new(TopologySpec::default(), &["C1"]);
    let mut e = engine(&mut p);
    let id = e.submit(req(Verb::RemoveDevice, "C1"), 0, &mut p).unwrap();
    e.step(100 * MS, &mut p);
    assert_eq!(e.get(id).unwrap().intent.status, IntentStatus::Failed);
    assert!(p.executed.is_empty());
    let r = e.report(id).unwrap().unwrap();
    assert!(r.adjustments[0].contains("no feasible policy"), "{:?}", r.adjustments);
}

#[test]
fn removing_a_controller_remaps_its_switches() {
    let mut p = MockPlant::new(TopologySpec::default(), &["C1", "C2"]);
    let mut e = engine(&mut p);
    let id = e.submit(req(Verb::RemoveDevice, "C1"), 0, &mut p).unwrap();
    e.step(100 * MS, &mut p);
    let remaps = p.executed.iter().filter(|a| matches!(a, PolicyAction::Remap { .. })).count();
    assert_eq!(remaps, 3);
    assert!(p.mapping.values().all(|c| c.as_str() == "C2"));
    e.step(6 * SEC, &mut p);
    assert_eq!(e.get(id).unwrap().intent.status, IntentStatus::Validated);
}

#[test]
fn failing_action_reports_partial_failure() {
    let mut p = MockPlant::new(TopologySpec::default(), &["C1"]);
    p.fail_switch = Some(2);
    let mut e = engine(&mut p);
    let id = e.submit(req(Verb::RecalculatePaths, "S3"), 0, &mut p).unwrap();
    let evs = e.step(100 * MS, &mut p);
    assert!(evs.iter().any(|ev| matches!(ev, EngineEvent::ActionFailed { reason, .. } if reason.contains("S2"))));
    assert_eq!(statuses(&e, id), vec![IntentStatus::Received, IntentStatus::Translated, IntentStatus::Failed]);
    let r = e.report(id).unwrap().unwrap();
    assert!(r.adjustments[0].starts_with("action "), "{:?}", r.adjustments);
}

#[test]
fn recalculating_around_an_edge_switch_is_an_empty_diff() {
    let mut p = MockPlant::new(TopologySpec::line(3, 3), &["C1"]);
    let mut e = engine(&mut p);
    let id = e.submit(req(Verb::RecalculatePaths, "S1"), 0, &mut p).unwrap();
    e.step(100 * MS, &mut p);
    assert!(p.executed.is_empty());
    assert!(e.get(id).unwrap().policies[0].actions.is_empty());
    e.step(6 * SEC, &mut p);
    assert_eq!(e.get(id).unwrap().intent.status, IntentStatus::Validated);
}

#[test]
fn unknown_targets_and_intents_are_rejected() {
    let mut p = MockPlant::new(TopologySpec::default(), &["C1"]);
    let mut e = engine(&mut p);
    assert_eq!(e.submit(req(Verb::RemoveDevice, "S99"), 0, &mut p), Err(IntentError::UnknownTarget("S99".into())));
    assert!(matches!(e.submit(req(Verb::ProtectService, "10.9.9.9"), 0, &mut p), Err(IntentError::UnknownTarget(_))));
    assert!(matches!(e.submit(req(Verb::RecalculatePaths, "C1"), 0, &mut p), Err(IntentError::UnknownTarget(_))));
    assert_eq!(e.report(42), Err(IntentError::UnknownIntent(42)));
}

#[test]
fn protect_intent_stays_armed_without_an_anomaly() {
    let mut p = MockPlant::new(TopologySpec::default(), &["C1"]);
    let mut e = engine(&mut p);
    let id = e.submit(req(Verb::ProtectService, "10.0.0.9"), 0, &mut p).unwrap();
    let mut t: Micros = 0;
    while t < 20 * SEC {
        t += 100 * MS;
        e.step(t, &mut p);
    }
    assert_eq!(statuses(&e, id), vec![IntentStatus::Received]);
    assert_eq!(e.get(id).unwrap().stage(), PlanStage::Stable);
    assert!(p.executed.is_empty());
}

#[test]
fn stages_escalate_in_order_and_stop_at_isolation() {
    let mut s = PlanStage::LimitAbnormalLink;
    let mut seen = vec![s];
    while let Some(n) = s.escalate() {
        seen.push(n);
        s = n;
    }
    assert_eq!(seen, vec![PlanStage::LimitAbnormalLink, PlanStage::LimitAbnormalIp, PlanStage::IsolateAbnormalFlow]);
    assert_eq!(PlanStage::from_number(4), Some(PlanStage::LimitAbnormalIp));
    assert_eq!(PlanStage::LimitAbnormalIp.to_string(), "4(limit_abnormal_ip)");
}

#[test]
fn schedules_differ_by_preference() {
    let prot = translate::schedule(Preference::MaxProtection);
    let perf = translate::schedule(Preference::MaxPerformance);
    let auto = translate::schedule(Preference::None);
    assert_eq!(prot.initial, PlanStage::LimitAbnormalLink);
    assert!(prot.detect);
    assert!(perf.profile.link_fraction < prot.profile.link_fraction);
    assert_eq!(auto.initial, PlanStage::IsolateAbnormalFlow);
}
