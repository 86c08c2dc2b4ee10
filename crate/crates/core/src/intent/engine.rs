use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use serde::Serialize;

use super::translate::{schedule, translate, NetView};
use super::types::*;
use super::PlanStage;
use crate::chain::{ChainError, ElementId, Ledger, Role, TxKind};
use crate::guard::{link_id, Anomaly, Guard, Offender};
use crate::sched::{Micros, MS, SEC};
use crate::simnet::TopologySpec;

/// The network as the engine drives it.
pub trait Plant {
    fn topology(&self) -> &TopologySpec;
    fn live_controllers(&self) -> Vec<ElementId>;
    fn mapping(&self) -> BTreeMap<ElementId, ElementId>;
    fn evicted(&self) -> BTreeSet<ElementId>;
    fn known_elements(&self) -> BTreeSet<ElementId>;
    fn guard(&self) -> &Guard;
    fn ledger(&mut self) -> &mut Ledger;
    /// Carries out everything but Detect, which the engine answers itself.
    fn execute(&mut self, action: &PolicyAction) -> Result<(), String>;
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineConfig {
    pub submitter: ElementId,
    pub validation_period_us: Micros,
    pub settle_us: Micros,
    pub threshold_factor: f64,
    /// Victim-link bytes/s below which the baseline is not trusted.
    pub baseline_floor: f64,
    pub baseline_span_us: Micros,
    /// Open an automatic incident for every anomaly no intent covers.
    pub auto_defense: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            submitter: ElementId::new("E0"),
            validation_period_us: 5 * SEC,
            settle_us: 500 * MS,
            threshold_factor: 1.5,
            baseline_floor: 8192.0,
            baseline_span_us: 2 * SEC,
            auto_defense: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Incident {
    pub stage: PlanStage,
    pub stages: Vec<PlanStage>,
    pub opened_at: Micros,
    pub validate_at: Micros,
    pub threshold: f64,
    pub link: String,
    pub anomaly: Anomaly,
    pub detected: Vec<Offender>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntentEntry {
    pub intent: Intent,
    pub policies: Vec<Policy>,
    pub reports: Vec<ValidationReport>,
    pub incident: Option<Incident>,
    /// Stages of every incident, in order.
    pub stage_log: Vec<PlanStage>,
    validate_at: Option<Micros>,
}

impl IntentEntry {
    pub fn stage(&self) -> PlanStage {
        self.incident.as_ref().map_or(PlanStage::Stable, |i| i.stage)
    }

    pub fn last_report(&self) -> Option<&ValidationReport> {
        self.reports.last()
    }
}

pub struct IntentEngine {
    cfg: EngineConfig,
    intents: BTreeMap<IntentId, IntentEntry>,
    next_id: IntentId,
    next_policy: u64,
    retry: VecDeque<(TxKind, Vec<u8>)>,
    events: Vec<EngineEvent>,
}

fn is_defense(v: Verb) -> bool {
    matches!(v, Verb::ProtectService | Verb::LimitTraffic)
}

impl IntentEngine {
    pub fn new(cfg: EngineConfig) -> Self {
        IntentEngine { cfg, intents: BTreeMap::new(), next_id: 1, next_policy: 1, retry: VecDeque::new(), events: Vec::new() }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn set_auto_defense(&mut self, on: bool) {
        self.cfg.auto_defense = on;
    }

    /// Registers the engine's submitter identity.
    pub fn bootstrap(&self, ledger: &mut Ledger) -> Result<(), ChainError> {
        if !ledger.is_registered(&self.cfg.submitter) {
            ledger.register(&self.cfg.submitter, Role::Middleware, b"intent-engine".to_vec())?;
        }
        Ok(())
    }

    pub fn intents(&self) -> impl Iterator<Item = &IntentEntry> {
        self.intents.values()
    }

    pub fn get(&self, id: IntentId) -> Option<&IntentEntry> {
        self.intents.get(&id)
    }

    pub fn report(&self, id: IntentId) -> Result<Option<&ValidationReport>, IntentError> {
        self.intents.get(&id).map(|e| e.last_report()).ok_or(IntentError::UnknownIntent(id))
    }

    fn chain_submit(&mut self, ledger: &mut Ledger, kind: TxKind, payload: Vec<u8>) -> Option<crate::chain::Hash32> {
        match ledger.submit(kind, payload.clone(), &self.cfg.submitter) {
            Ok(h) => Some(h),
            Err(_) => {
                self.retry.push_back((kind, payload));
                None
            }
        }
    }

    fn transition(&mut self, id: IntentId, status: IntentStatus, now: Micros, plant: &mut dyn Plant) {
        let e = self.intents.get_mut(&id).expect("known intent");
        if status <= e.intent.status && !e.intent.history.is_empty() {
            return;
        }
        e.intent.status = status;
        let rec = IntentRecord {
            intent_id: id,
            verb: e.intent.verb,
            target: e.intent.target.clone(),
            preference: e.intent.preference,
            status,
            stage: e.stage(),
            at: now,
        };
        let payload = serde_json::to_vec(&rec).expect("record serializes");
        let tx_hash = self.chain_submit(plant.ledger(), TxKind::Intent, payload);
        let e = self.intents.get_mut(&id).expect("known intent");
        e.intent.history.push(Transition { status, at: now, tx_hash });
        self.events.push(EngineEvent::IntentTransition { intent_id: id, status, at: now });
    }

    fn check_target(&self, req: &IntentRequest, plant: &dyn Plant) -> Result<(), IntentError> {
        let topo = plant.topology();
        let ok = match req.verb {
            Verb::RemoveDevice => {
                let id = ElementId::new(req.target.clone());
                plant.known_elements().contains(&id) || topo.dpids().any(|d| ElementId::switch(d) == id)
            }
            Verb::RecalculatePaths => topo.dpids().any(|d| ElementId::switch(d).as_str() == req.target),
            Verb::ProtectService | Verb::LimitTraffic => {
                req.target.parse::<Ipv4Addr>().ok().and_then(|ip| topo.host_by_ip(ip)).is_some()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(IntentError::UnknownTarget(req.target.clone()))
        }
    }

    pub fn submit(&mut self, req: IntentRequest, now: Micros, plant: &mut dyn Plant) -> Result<IntentId, IntentError> {
        self.check_target(&req, plant)?;
        Ok(self.admit(req, now, false, plant))
    }

    fn admit(&mut self, req: IntentRequest, now: Micros, automatic: bool, plant: &mut dyn Plant) -> IntentId {
        let id = self.next_id;
        self.next_id += 1;
        let intent = Intent {
            intent_id: id,
            verb: req.verb,
            target: req.target,
            preference: req.preference,
            issued_at: now,
            status: IntentStatus::Received,
            history: Vec::new(),
            automatic,
        };
        self.intents.insert(
            id,
            IntentEntry { intent, policies: Vec::new(), reports: Vec::new(), incident: None, stage_log: Vec::new(), validate_at: None },
        );
        self.transition(id, IntentStatus::Received, now, plant);
        id
    }

    /// Events produced since the previous call.
    pub fn take_events(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.events)
    }

    /// Advances every intent whose next step is due.
    pub fn step(&mut self, now: Micros, plant: &mut dyn Plant) -> Vec<EngineEvent> {
        let pending = self.retry.len();
        for _ in 0..pending {
            let (kind, payload) = self.retry.pop_front().expect("counted");
            self.chain_submit(plant.ledger(), kind, payload);
        }
        if self.cfg.auto_defense {
            let covered: BTreeSet<Ipv4Addr> = self
                .intents
                .values()
                .filter(|e| is_defense(e.intent.verb))
                .filter_map(|e| e.intent.target_ip())
                .collect();
            let fresh: Vec<Ipv4Addr> = plant.guard().active_anomalies().map(|a| a.victim).filter(|v| !covered.contains(v)).collect();
            for victim in fresh {
                if plant.topology().host_by_ip(victim).is_some() {
                    let req = IntentRequest { verb: Verb::ProtectService, target: victim.to_string(), preference: Preference::None };
                    self.admit(req, now, true, plant);
                }
            }
        }
        let ids: Vec<IntentId> = self.intents.keys().copied().collect();
        for id in ids {
            if is_defense(self.intents[&id].intent.verb) {
                self.step_defense(id, now, plant);
            } else {
                self.step_config(id, now, plant);
            }
        }
        self.take_events()
    }

    fn view<'p>(plant: &'p dyn Plant) -> NetView<'p> {
        NetView {
            topology: plant.topology(),
            controllers: plant.live_controllers(),
            mapping: plant.mapping(),
            evicted: plant.evicted(),
        }
    }

    fn record_policy(&mut self, policy: Policy, plant: &mut dyn Plant) {
        let payload = serde_json::to_vec(&policy).expect("policy serializes");
        self.chain_submit(plant.ledger(), TxKind::Policy, payload);
        self.intents.get_mut(&policy.intent_id).expect("known").policies.push(policy);
    }

    /// Runs the policy's actions in order; returns the first failure.
    fn provision(&mut self, policy: &Policy, now: Micros, plant: &mut dyn Plant) -> Result<usize, IntentError> {
        let mut flow_mods = 0;
        for (index, action) in policy.actions.iter().enumerate() {
            let result = match action {
                PolicyAction::Detect { scope } => {
                    let flows = plant.guard().offenders(*scope, now);
                    let e = self.intents.get_mut(&policy.intent_id).expect("known");
                    if let Some(inc) = e.incident.as_mut() {
                        inc.detected = if flows.is_empty() { inc.anomaly.offenders.clone() } else { flows };
                    }
                    Ok(())
                }
                other => plant.execute(other),
            };
            match result {
                Ok(()) => {
                    if let PolicyAction::InstallFlow { switch, flow_mod } = action {
                        flow_mods += 1;
                        let payload = serde_json::to_vec(&serde_json::json!({
                            "intent_id": policy.intent_id,
                            "policy_id": policy.policy_id,
                            "switch": ElementId::switch(*switch),
                            "flow_mod": flow_mod,
                        }))
                        .expect("flow record serializes");
                        self.chain_submit(plant.ledger(), TxKind::FlowTable, payload);
                    }
                    self.events.push(EngineEvent::ActionExecuted { intent_id: policy.intent_id, index, action: action.clone(), at: now });
                }
                Err(reason) => {
                    self.events.push(EngineEvent::ActionFailed { intent_id: policy.intent_id, index, reason: reason.clone(), at: now });
                    return Err(IntentError::PartialFailure { index, reason });
                }
            }
        }
        Ok(flow_mods)
    }

    fn step_config(&mut self, id: IntentId, now: Micros, plant: &mut dyn Plant) {
        let status = self.intents[&id].intent.status;
        match status {
            IntentStatus::Received => {
                let policy_id = self.next_policy;
                let result = translate(&self.intents[&id].intent, &Self::view(plant), None, PlanStage::Stable, policy_id);
                let policy = match result {
                    Ok(p) => p,
                    Err(err) => {
                        self.fail(id, now, err.to_string(), plant);
                        return;
                    }
                };
                self.next_policy += 1;
                self.record_policy(policy.clone(), plant);
                self.transition(id, IntentStatus::Translated, now, plant);
                match self.provision(&policy, now, plant) {
                    Ok(_) => {
                        self.transition(id, IntentStatus::Provisioned, now, plant);
                        self.intents.get_mut(&id).expect("known").validate_at = Some(now + self.cfg.validation_period_us);
                    }
                    Err(err) => self.fail(id, now, err.to_string(), plant),
                }
            }
            IntentStatus::Provisioned => {
                let due = self.intents[&id].validate_at.is_some_and(|t| now >= t);
                if !due {
                    return;
                }
                let e = &self.intents[&id];
                let met = match e.intent.verb {
                    Verb::RemoveDevice => {
                        let target = ElementId::new(e.intent.target.clone());
                        plant.evicted().contains(&target) && !plant.mapping().values().any(|c| *c == target)
                    }
                    _ => true,
                };
                let report = ValidationReport {
                    intent_id: id,
                    window: (now - self.cfg.validation_period_us, now),
                    stage: PlanStage::Stable,
                    metrics: None,
                    verdict: if met { Verdict::Met } else { Verdict::NotMet },
                    adjustments: Vec::new(),
                    attacker_flows: Vec::new(),
                };
                self.push_report(id, report);
                if met {
                    self.transition(id, IntentStatus::Validated, now, plant);
                } else {
                    self.transition(id, IntentStatus::Failed, now, plant);
                }
            }
            _ => {}
        }
    }

    fn fail(&mut self, id: IntentId, now: Micros, reason: String, plant: &mut dyn Plant) {
        let stage = self.intents[&id].stage();
        self.push_report(
            id,
            ValidationReport {
                intent_id: id,
                window: (now, now),
                stage,
                metrics: None,
                verdict: Verdict::NotMet,
                adjustments: vec![reason],
                attacker_flows: Vec::new(),
            },
        );
        self.transition(id, IntentStatus::Failed, now, plant);
    }

    fn push_report(&mut self, id: IntentId, report: ValidationReport) {
        self.events.push(EngineEvent::Report(report.clone()));
        self.intents.get_mut(&id).expect("known").reports.push(report);
    }

    fn set_stage(&mut self, id: IntentId, to: PlanStage, now: Micros) {
        let e = self.intents.get_mut(&id).expect("known");
        let Some(inc) = e.incident.as_mut() else { return };
        let from = inc.stage;
        inc.stage = to;
        inc.stages.push(to);
        e.stage_log.push(to);
        self.events.push(EngineEvent::StageChanged { intent_id: id, from, to, at: now });
    }

    fn step_defense(&mut self, id: IntentId, now: Micros, plant: &mut dyn Plant) {
        let e = &self.intents[&id];
        if e.intent.status == IntentStatus::Failed {
            return;
        }
        let Some(victim) = e.intent.target_ip() else { return };
        match &e.incident {
            None => {
                let Some(anomaly) = plant.guard().active(victim).cloned() else { return };
                self.open_incident(id, victim, anomaly, now, plant);
            }
            Some(inc) if now >= inc.validate_at => self.validate_incident(id, now, plant),
            Some(_) => {}
        }
    }

    fn victim_link(topo: &TopologySpec, victim: Ipv4Addr) -> String {
        let (_, h) = topo.host_by_ip(victim).expect("target checked at submit");
        link_id(h.attach.dpid, h.attach.port)
    }

    fn open_incident(&mut self, id: IntentId, victim: Ipv4Addr, anomaly: Anomaly, now: Micros, plant: &mut dyn Plant) {
        let link = Self::victim_link(plant.topology(), victim);
        let g = plant.guard().config();
        let onset = anomaly.raised_at.saturating_sub(g.sustain_us + g.window_us);
        let rates = plant.guard().link_bucket_rates(&link, onset.saturating_sub(self.cfg.baseline_span_us), onset);
        let baseline = if rates.is_empty() { 0.0 } else { rates.iter().sum::<f64>() / rates.len() as f64 };
        let threshold = self.cfg.threshold_factor * baseline.max(self.cfg.baseline_floor);
        let e = self.intents.get_mut(&id).expect("known");
        e.incident = Some(Incident {
            stage: PlanStage::Stable,
            stages: Vec::new(),
            opened_at: now,
            validate_at: now,
            threshold,
            link,
            anomaly,
            detected: Vec::new(),
        });
        self.set_stage(id, PlanStage::AttackDetected, now);
        let initial = schedule(self.intents[&id].intent.preference).initial;
        self.apply_stage(id, initial, now, plant);
    }

    /// Moves the incident to `stage`, then translates and provisions it.
    fn apply_stage(&mut self, id: IntentId, stage: PlanStage, now: Micros, plant: &mut dyn Plant) -> bool {
        self.set_stage(id, stage, now);
        let victim = self.intents[&id].intent.target_ip().expect("defense target");
        if let Some(fresh) = plant.guard().active(victim).cloned() {
            self.intents.get_mut(&id).expect("known").incident.as_mut().expect("open").anomaly = fresh;
        }
        let e = &self.intents[&id];
        let anomaly = e.incident.as_ref().expect("open").anomaly.clone();
        let policy_id = self.next_policy;
        let policy = match translate(&e.intent, &Self::view(plant), Some(&anomaly), stage, policy_id) {
            Ok(p) => p,
            Err(err) => {
                self.fail(id, now, err.to_string(), plant);
                return false;
            }
        };
        self.next_policy += 1;
        self.record_policy(policy.clone(), plant);
        self.transition(id, IntentStatus::Translated, now, plant);
        let outcome = self.provision(&policy, now, plant);
        let flow_mods = match outcome {
            Ok(n) => n,
            Err(IntentError::PartialFailure { index, .. }) => {
                policy.actions[..index].iter().filter(|a| matches!(a, PolicyAction::InstallFlow { .. })).count()
            }
            Err(_) => 0,
        };
        self.events.push(EngineEvent::DefenseInstalled { intent_id: id, stage, actions: policy.actions.len(), flow_mods, at: now });
        self.transition(id, IntentStatus::Provisioned, now, plant);
        let validate_at = now + self.cfg.settle_us + self.cfg.validation_period_us;
        self.intents.get_mut(&id).expect("known").incident.as_mut().expect("open").validate_at = validate_at;
        true
    }

    fn validate_incident(&mut self, id: IntentId, now: Micros, plant: &mut dyn Plant) {
        let inc = self.intents[&id].incident.clone().expect("open");
        let from = now - self.cfg.validation_period_us;
        let buckets = plant.guard().link_bucket_rates(&inc.link, from, now);
        let per_window = (plant.guard().config().window_us / plant.guard().config().bucket_us).max(1) as usize;
        let moving: Vec<f64> = buckets.windows(per_window.min(buckets.len()).max(1)).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
        let max_rate = moving.iter().copied().fold(0.0, f64::max);
        let mean_rate = if buckets.is_empty() { 0.0 } else { buckets.iter().sum::<f64>() / buckets.len() as f64 };
        let met = max_rate <= inc.threshold;
        let metrics = Some(MetricsSummary { max_rate, mean_rate, threshold: inc.threshold });
        if met {
            let report = ValidationReport {
                intent_id: id,
                window: (from, now),
                stage: inc.stage,
                metrics,
                verdict: Verdict::Met,
                adjustments: Vec::new(),
                attacker_flows: inc.detected.clone(),
            };
            self.push_report(id, report);
            self.set_stage(id, PlanStage::Stable, now);
            self.intents.get_mut(&id).expect("known").incident = None;
            self.transition(id, IntentStatus::Validated, now, plant);
            return;
        }
        let next = inc.stage.escalate().unwrap_or(inc.stage);
        let report = ValidationReport {
            intent_id: id,
            window: (from, now),
            stage: inc.stage,
            metrics,
            verdict: Verdict::Adjusted,
            adjustments: vec![format!("escalate {} -> {}", inc.stage, next)],
            attacker_flows: inc.detected.clone(),
        };
        self.push_report(id, report);
        self.apply_stage(id, next, now, plant);
    }
}
