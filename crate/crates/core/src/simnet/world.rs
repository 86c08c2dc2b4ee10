//! The scenario event loop. One `World` owns every simulated component and
//! advances them in virtual time; the same spec and seed always produce the
//! same trace, event log and chain.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::controller::{Job, SimController};
use super::frame::Frame;
use super::scenario::{DefenseMode, ScenarioError, ScenarioEvent, ScenarioSpec};
use super::switch::{DropReason, SimSwitch, SwitchOut};
use super::topology::{PortPeer, PortRef, TopologySpec};
use super::traffic::{self, AttackPlan};
use crate::chain::{ElementId, Ledger, RegStatus, Role};
use crate::guard::{link_id, Guard, GuardEvent, LinkId, MetricsRow, MetricsTrace};
use crate::intent::{EngineConfig, EngineEvent, IntentEngine, IntentError, IntentId, IntentRequest, Plant, PolicyAction};
use crate::middleware::{ChannelId, ConnId, Middleware, MiddlewareConfig, MwEvent, MwOutput};
use crate::sched::{EventQueue, Micros, MS, SEC};

/// One link hop for data frames.
pub const DATA_HOP_US: Micros = 100;
/// One hop on a control connection (switch to middleware, middleware to controller).
pub const CTRL_HOP_US: Micros = 500;
/// Sampling, guard and engine period.
pub const TICK_US: Micros = 100 * MS;
/// Host announcements start here, after registration and handshakes settle.
pub const ANNOUNCE_AT_US: Micros = 500 * MS;
/// Hosts re-announce at this period so controllers that missed one catch up.
pub const ANNOUNCE_PERIOD_US: Micros = 5 * SEC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    BlockCommitted,
    IntentTransition,
    AnomalyRaised,
    DefenseInstalled,
    MappingChanged,
    MetricsTick,
    AnomalyCleared,
    StageChanged,
    Report,
    ActionExecuted,
    ActionFailed,
    Middleware,
    Scenario,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub timestamp_us: Micros,
}

/// Frame accounting. `injected == delivered + dropped + pending` always.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub pending: u64,
    pub attack_injected: u64,
    pub attack_delivered: u64,
    pub drops: BTreeMap<String, u64>,
}

impl Accounting {
    pub fn balanced(&self) -> bool {
        self.injected == self.delivered + self.dropped + self.pending
    }
}

#[derive(Debug, Clone, Copy)]
struct Fate {
    copies: u32,
    delivered: bool,
    attack: bool,
    reason: Option<DropReason>,
}

#[derive(Debug, Clone)]
enum Ev {
    Scenario(usize),
    Tick,
    Announce(usize),
    Background { pair: usize, gen: u32 },
    Attack { stream: usize, gen: u32, k: u64 },
    FrameAt { port: PortRef, frame: Frame },
    FrameToHost { host: usize, frame: Frame },
    SwitchToMw { conn: ConnId, bytes: Vec<u8> },
    MwToSwitch { conn: ConnId, bytes: Vec<u8> },
    MwToCtrl { chan: ChannelId, bytes: Vec<u8> },
    CtrlToMw { chan: ChannelId, bytes: Vec<u8> },
    CtrlJob { controller: ElementId, job: Job },
}

/// Everything the intent engine acts on. Kept apart from the engine so the
/// engine can borrow it as its `Plant`.
pub struct Net {
    topo: Arc<TopologySpec>,
    ports: BTreeMap<PortRef, PortPeer>,
    q: EventQueue<Ev>,
    now: Micros,
    rng: ChaCha8Rng,
    ledger: Ledger,
    mw: Middleware,
    guard: Guard,
    switches: BTreeMap<u64, SimSwitch>,
    conns: BTreeMap<ConnId, u64>,
    controllers: BTreeMap<ElementId, SimController>,
    chan_owner: BTreeMap<ChannelId, ElementId>,
    evicted: BTreeSet<ElementId>,
    fates: HashMap<u64, Fate>,
    acct: Accounting,
    next_frame: u64,
    pairs: Vec<(usize, usize, Micros, u32)>,
    bg_gen: u32,
    attack: Option<AttackPlan>,
    attack_gen: u32,
    watched: BTreeSet<LinkId>,
    trace: MetricsTrace,
    log: Vec<LogRecord>,
}

fn reason_key(r: Option<DropReason>) -> String {
    match r {
        Some(r) => serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
        None => "unreachable".into(),
    }
}

impl Net {
    fn log(&mut self, kind: EventKind, payload: impl Serialize) {
        let payload = serde_json::to_value(payload).unwrap_or(serde_json::Value::Null);
        let seq = self.log.len() as u64;
        self.log.push(LogRecord { seq, kind, payload, timestamp_us: self.now });
    }

    fn frame_id(&mut self) -> u64 {
        self.next_frame += 1;
        self.next_frame
    }

    fn inject(&mut self, host: usize, frame: Frame, attack: bool) {
        self.fates.insert(frame.id, Fate { copies: 1, delivered: false, attack, reason: None });
        self.acct.injected += 1;
        self.acct.pending += 1;
        if attack {
            self.acct.attack_injected += 1;
        }
        let port = self.topo.hosts[host].attach;
        self.q.schedule(self.now + DATA_HOP_US, Ev::FrameAt { port, frame });
    }

    fn deliver(&mut self, id: u64) {
        let Some(f) = self.fates.get_mut(&id) else { return };
        if !f.delivered {
            f.delivered = true;
            self.acct.delivered += 1;
            self.acct.pending -= 1;
            if f.attack {
                self.acct.attack_delivered += 1;
            }
        }
    }

    fn adjust(&mut self, id: u64, delta: i64, reason: Option<DropReason>) {
        let Some(f) = self.fates.get_mut(&id) else { return };
        if reason.is_some() {
            f.reason = reason;
        }
        f.copies = (i64::from(f.copies) + delta).max(0) as u32;
        if f.copies == 0 {
            let f = self.fates.remove(&id).expect("present");
            if !f.delivered {
                self.acct.pending -= 1;
                self.acct.dropped += 1;
                *self.acct.drops.entry(reason_key(f.reason)).or_default() += 1;
            }
        }
    }

    /// Puts a frame on the wire leaving `from`; false if nothing is attached.
    fn forward(&mut self, from: PortRef, frame: Frame) -> bool {
        let at = self.now + DATA_HOP_US;
        match self.ports.get(&from) {
            Some(PortPeer::Host(h)) => self.q.schedule(at, Ev::FrameToHost { host: *h, frame }),
            Some(PortPeer::Switch(p)) => self.q.schedule(at, Ev::FrameAt { port: *p, frame }),
            None => return false,
        }
        true
    }

    /// Applies one switch step. `consumed` is the frame copy the step used up.
    fn apply_switch(&mut self, dpid: u64, outs: Vec<SwitchOut>, consumed: Option<u64>) {
        let mut delta: BTreeMap<u64, (i64, Option<DropReason>)> = BTreeMap::new();
        if let Some(id) = consumed {
            delta.entry(id).or_default().0 -= 1;
        }
        for o in outs {
            match o {
                SwitchOut::Emit { port, frame } => {
                    if self.forward(PortRef { dpid, port }, frame) {
                        delta.entry(frame.id).or_default().0 += 1;
                    } else {
                        delta.entry(frame.id).or_default().1 = Some(DropReason::NoPort);
                    }
                }
                SwitchOut::Buffered { frame } => delta.entry(frame.id).or_default().0 += 1,
                SwitchOut::Unbuffered { frame, reason } => {
                    let d = delta.entry(frame.id).or_default();
                    d.0 -= 1;
                    if reason.is_some() {
                        d.1 = reason;
                    }
                }
                SwitchOut::Dropped { frame, reason } => delta.entry(frame.id).or_default().1 = Some(reason),
                SwitchOut::Control(bytes) => {
                    if self.conns.contains_key(&dpid) {
                        self.q.schedule(self.now + CTRL_HOP_US, Ev::SwitchToMw { conn: dpid, bytes });
                    }
                }
            }
        }
        for (id, (d, reason)) in delta {
            self.adjust(id, d, reason);
        }
    }

    fn apply_mw(&mut self, outs: Vec<MwOutput>) {
        for o in outs {
            match o {
                MwOutput::ToSwitch { conn, bytes } => self.q.schedule(self.now + CTRL_HOP_US, Ev::MwToSwitch { conn, bytes }),
                MwOutput::ToController { chan, bytes } => {
                    self.q.schedule(self.now + CTRL_HOP_US, Ev::MwToCtrl { chan, bytes })
                }
                MwOutput::OpenChannel { chan, controller, .. } => {
                    if let Some(c) = self.controllers.get_mut(&controller) {
                        c.open(chan);
                        self.chan_owner.insert(chan, controller);
                    }
                }
                MwOutput::CloseChannel { chan } => {
                    if let Some(owner) = self.chan_owner.remove(&chan) {
                        if let Some(c) = self.controllers.get_mut(&owner) {
                            c.close(chan);
                        }
                    }
                }
                MwOutput::CloseSwitch { conn } => {
                    if let Some(dpid) = self.conns.remove(&conn) {
                        let outs = self.switches.get_mut(&dpid).map(|s| s.disconnect()).unwrap_or_default();
                        self.apply_switch(dpid, outs, None);
                    }
                }
                MwOutput::CloseController { controller } => {
                    self.log(EventKind::Middleware, serde_json::json!({ "type": "controller_closed", "controller": controller }));
                }
                MwOutput::Event(ev) => {
                    let kind = match ev {
                        MwEvent::Mapped { .. } | MwEvent::Remapped { .. } | MwEvent::Unmapped { .. } => EventKind::MappingChanged,
                        _ => EventKind::Middleware,
                    };
                    self.log(kind, ev);
                }
            }
        }
    }

    fn on_event(&mut self, ev: Ev) {
        match ev {
            Ev::Scenario(_) | Ev::Tick => unreachable!("handled by World"),
            Ev::Announce(h) => {
                let id = self.frame_id();
                let f = traffic::announce_frame(&self.topo, h, id);
                self.inject(h, f, false);
                self.q.schedule(self.now + ANNOUNCE_PERIOD_US, Ev::Announce(h));
            }
            Ev::Background { pair, gen } => {
                if gen != self.bg_gen {
                    return;
                }
                let (a, b, period, size) = self.pairs[pair];
                let id = self.frame_id();
                let f = traffic::host_frame(&self.topo, a, b, size, id);
                self.inject(a, f, false);
                self.q.schedule(self.now + period, Ev::Background { pair, gen });
            }
            Ev::Attack { stream, gen, k } => {
                if gen != self.attack_gen {
                    return;
                }
                let Some(plan) = self.attack.as_ref() else { return };
                let id = self.next_frame + 1;
                let f = plan.frame(&self.topo, stream, k, id);
                let (from, period) = (plan.streams[stream].attacker, plan.streams[stream].period_us);
                self.next_frame = id;
                self.inject(from, f, true);
                self.q.schedule(self.now + period, Ev::Attack { stream, gen, k: k + 1 });
            }
            Ev::FrameAt { port, frame } => {
                let Some(sw) = self.switches.get_mut(&port.dpid) else {
                    self.adjust(frame.id, -1, Some(DropReason::NoPort));
                    return;
                };
                let outs = sw.receive(port.port, frame, self.now);
                self.apply_switch(port.dpid, outs, Some(frame.id));
            }
            Ev::FrameToHost { host, frame } => {
                if frame.is_broadcast() || self.topo.hosts[host].mac == frame.eth_dst {
                    self.deliver(frame.id);
                }
                self.adjust(frame.id, -1, None);
            }
            Ev::SwitchToMw { conn, bytes } => {
                let outs = self.mw.on_switch_bytes(conn, &bytes, self.now, &mut self.ledger);
                self.apply_mw(outs);
            }
            Ev::MwToSwitch { conn, bytes } => {
                let Some(&dpid) = self.conns.get(&conn) else { return };
                let outs = self.switches.get_mut(&dpid).map(|s| s.on_control(&bytes, self.now)).unwrap_or_default();
                self.apply_switch(dpid, outs, None);
            }
            Ev::MwToCtrl { chan, bytes } => {
                let Some(owner) = self.chan_owner.get(&chan).cloned() else { return };
                let Some(c) = self.controllers.get_mut(&owner) else { return };
                let out = c.on_bytes(chan, &bytes, self.now);
                for (chan, bytes) in out.send {
                    self.q.schedule(self.now + CTRL_HOP_US, Ev::CtrlToMw { chan, bytes });
                }
                for job in out.jobs {
                    self.q.schedule(job.done_at, Ev::CtrlJob { controller: owner.clone(), job });
                }
            }
            Ev::CtrlToMw { chan, bytes } => {
                if !self.chan_owner.contains_key(&chan) {
                    return;
                }
                let outs = self.mw.on_channel_bytes(chan, &bytes, self.now, &mut self.ledger);
                self.apply_mw(outs);
            }
            Ev::CtrlJob { controller, job } => {
                let Some(c) = self.controllers.get_mut(&controller) else { return };
                for (chan, bytes) in c.on_job(&job) {
                    self.q.schedule(self.now + CTRL_HOP_US, Ev::CtrlToMw { chan, bytes });
                }
            }
        }
    }

    fn start_traffic(&mut self, pairs: usize, fps: f64, size: u32) {
        self.bg_gen += 1;
        let Some(period) = traffic::period_us(fps) else {
            self.pairs.clear();
            return;
        };
        let chosen = traffic::background_pairs(&self.topo, pairs, &mut self.rng);
        self.pairs = chosen.into_iter().map(|(a, b)| (a, b, period, size)).collect();
        for i in 0..self.pairs.len() {
            let phase = self.rng.gen_range(0..period);
            self.q.schedule(self.now + phase, Ev::Background { pair: i, gen: self.bg_gen });
        }
    }

    fn start_attack(&mut self, plan: AttackPlan) {
        self.attack_gen += 1;
        for (i, s) in plan.streams.iter().enumerate() {
            let v = &self.topo.hosts[s.victim];
            self.watched.insert(link_id(v.attach.dpid, v.attach.port));
            let phase = self.rng.gen_range(0..s.period_us);
            self.q.schedule(self.now + phase, Ev::Attack { stream: i, gen: self.attack_gen, k: 0 });
        }
        self.attack = Some(plan);
    }

    fn stop_attack(&mut self) {
        self.attack_gen += 1;
        self.attack = None;
    }

    fn evict(&mut self, element: &ElementId, reason: &str) -> Result<(), String> {
        let outs = self.mw.evict(element, reason, self.now, &mut self.ledger).map_err(|e| e.to_string())?;
        self.evicted.insert(element.clone());
        self.apply_mw(outs);
        Ok(())
    }

    fn remap(&mut self, switch: &ElementId, controller: &ElementId) -> Result<(), String> {
        let outs = self.mw.remap(switch, controller, self.now, &mut self.ledger).map_err(|e| e.to_string())?;
        self.apply_mw(outs);
        Ok(())
    }
}

impl Plant for Net {
    fn topology(&self) -> &TopologySpec {
        &self.topo
    }

    fn live_controllers(&self) -> Vec<ElementId> {
        self.mw.attached_controllers().filter(|c| !self.evicted.contains(*c)).cloned().collect()
    }

    fn mapping(&self) -> BTreeMap<ElementId, ElementId> {
        self.mw.mapping().clone()
    }

    fn evicted(&self) -> BTreeSet<ElementId> {
        let mut out = self.evicted.clone();
        out.extend(self.ledger.registry_view().into_iter().filter(|r| r.status == RegStatus::Evicted).map(|r| r.element_id));
        out
    }

    fn known_elements(&self) -> BTreeSet<ElementId> {
        self.ledger.registry_view().into_iter().map(|r| r.element_id).collect()
    }

    fn guard(&self) -> &Guard {
        &self.guard
    }

    fn ledger(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    fn execute(&mut self, action: &PolicyAction) -> Result<(), String> {
        match action {
            PolicyAction::Evict { element } => self.evict(element, "intent"),
            PolicyAction::Remap { switch, controller } => self.remap(switch, controller),
            PolicyAction::InstallFlow { switch, flow_mod } => {
                let outs = self.mw.install_flow(&ElementId::switch(*switch), flow_mod.clone()).map_err(|e| e.to_string())?;
                self.apply_mw(outs);
                Ok(())
            }
            PolicyAction::RateLimit(rl) => {
                let dpid = rl.target.switch();
                if self.evicted.contains(&ElementId::switch(dpid)) {
                    return Err(format!("switch {dpid} is evicted"));
                }
                let sw = self.switches.get_mut(&dpid).ok_or_else(|| format!("unknown switch {dpid}"))?;
                sw.install_rate_limit(rl, self.now);
                Ok(())
            }
            PolicyAction::Detect { .. } => Ok(()),
        }
    }
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub name: String,
    pub seed: u64,
    pub trace: MetricsTrace,
    pub log: Vec<LogRecord>,
    pub accounting: Accounting,
    pub ledger: Ledger,
    pub intents: Vec<crate::intent::IntentEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub accounting: Accounting,
    pub chain: crate::chain::ChainHead,
    pub intents: Vec<crate::intent::IntentEntry>,
}

impl RunOutput {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            name: self.name.clone(),
            seed: self.seed,
            accounting: self.accounting.clone(),
            chain: self.ledger.chain_head(),
            intents: self.intents.clone(),
        }
    }

    pub fn metrics_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.trace.write_csv(&mut buf).expect("in-memory csv");
        buf
    }

    pub fn chain_export(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.ledger.export(&mut buf).expect("in-memory export");
        buf
    }

    pub fn events_ndjson(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for r in &self.log {
            serde_json::to_writer(&mut buf, r).expect("log records serialize");
            buf.push(b'\n');
        }
        buf
    }

    /// Writes metrics.csv, chain.ndjson, events.ndjson and summary.json.
    pub fn write_to(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        std::fs::write(dir.join("chain.ndjson"), self.chain_export())?;
        std::fs::write(dir.join("events.ndjson"), self.events_ndjson())?;
        std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&self.summary())?)?;
        Ok(())
    }
}

pub struct World {
    spec: ScenarioSpec,
    end: Micros,
    net: Net,
    engine: IntentEngine,
}

fn ledger_err(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Ledger(e.to_string())
}

impl World {
    pub fn new(spec: ScenarioSpec) -> Result<World, ScenarioError> {
        spec.validate()?;
        let topo = Arc::new(spec.topology.clone());
        let mut ledger = Ledger::new(spec.blockchain.clone(), spec.seed).map_err(ledger_err)?;
        let mut mw = Middleware::new(MiddlewareConfig { capture: spec.capture, ..Default::default() });
        mw.bootstrap(&mut ledger).map_err(ledger_err)?;
        let engine = IntentEngine::new(EngineConfig { auto_defense: spec.defense == DefenseMode::Auto, ..Default::default() });
        engine.bootstrap(&mut ledger).map_err(ledger_err)?;
        for c in &spec.controllers {
            ledger.register(&ElementId::new(c.as_str()), Role::Controller, Vec::new()).map_err(ledger_err)?;
        }
        let switches = topo.dpids().map(|d| (d, SimSwitch::new(d, topo.edge_ports(d)))).collect();
        let controllers = spec
            .controllers
            .iter()
            .map(|c| (ElementId::new(c.as_str()), SimController::new(ElementId::new(c.as_str()), topo.clone(), &spec.controller)))
            .collect();
        let net = Net {
            ports: topo.port_map(),
            topo,
            q: EventQueue::new(),
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            ledger,
            mw,
            guard: Guard::new(spec.guard.clone()),
            switches,
            conns: BTreeMap::new(),
            controllers,
            chan_owner: BTreeMap::new(),
            evicted: BTreeSet::new(),
            fates: HashMap::new(),
            acct: Accounting::default(),
            next_frame: 0,
            pairs: Vec::new(),
            bg_gen: 0,
            attack: None,
            attack_gen: 0,
            watched: BTreeSet::new(),
            trace: MetricsTrace::default(),
            log: Vec::new(),
        };
        let mut w = World { end: spec.duration_us(), spec, net, engine };
        w.boot();
        Ok(w)
    }

    fn boot(&mut self) {
        let n = &mut self.net;
        let ids: Vec<ElementId> = n.controllers.keys().cloned().collect();
        for id in ids {
            let (_, outs) = n.mw.on_controller_connect(&id, 0, &mut n.ledger);
            n.apply_mw(outs);
        }
        let dpids: Vec<u64> = n.switches.keys().copied().collect();
        for dpid in dpids {
            n.conns.insert(dpid, dpid);
            let outs = n.mw.on_switch_connect(dpid, 0);
            n.apply_mw(outs);
            let hello = n.switches.get_mut(&dpid).expect("listed").connect();
            n.q.schedule(CTRL_HOP_US, Ev::SwitchToMw { conn: dpid, bytes: hello });
        }
        for h in 0..n.topo.hosts.len() {
            n.q.schedule(ANNOUNCE_AT_US + h as Micros * 10 * MS, Ev::Announce(h));
        }
        for (i, e) in self.spec.events.iter().enumerate() {
            n.q.schedule(e.at_ms * MS, Ev::Scenario(i));
        }
        n.q.schedule(TICK_US, Ev::Tick);
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn now(&self) -> Micros {
        self.net.now
    }

    pub fn end(&self) -> Micros {
        self.end
    }

    pub fn is_finished(&self) -> bool {
        self.net.now >= self.end
    }

    pub fn topology(&self) -> &TopologySpec {
        &self.net.topo
    }

    pub fn ledger(&self) -> &Ledger {
        &self.net.ledger
    }

    pub fn middleware(&self) -> &Middleware {
        &self.net.mw
    }

    pub fn guard(&self) -> &Guard {
        &self.net.guard
    }

    pub fn engine(&self) -> &IntentEngine {
        &self.engine
    }

    pub fn trace(&self) -> &MetricsTrace {
        &self.net.trace
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.net.log
    }

    pub fn accounting(&self) -> &Accounting {
        &self.net.acct
    }

    pub fn switch(&self, dpid: u64) -> Option<&SimSwitch> {
        self.net.switches.get(&dpid)
    }

    pub fn controller(&self, id: &ElementId) -> Option<&SimController> {
        self.net.controllers.get(id)
    }

    /// Runs every event up to and including `t` (capped at the end).
    pub fn run_until(&mut self, t: Micros) {
        let t = t.min(self.end);
        while let Some((at, ev)) = self.net.q.pop_until(t) {
            self.net.now = at;
            match ev {
                Ev::Tick => self.tick(),
                Ev::Scenario(i) => self.scenario(i),
                ev => self.net.on_event(ev),
            }
        }
        self.net.now = self.net.now.max(t);
    }

    pub fn run(mut self) -> RunOutput {
        self.run_until(self.end);
        self.finish()
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            name: self.spec.name,
            seed: self.spec.seed,
            trace: self.net.trace,
            log: self.net.log,
            accounting: self.net.acct,
            ledger: self.net.ledger,
            intents: self.engine.intents().cloned().collect(),
        }
    }

    pub fn submit_intent(&mut self, req: IntentRequest) -> Result<IntentId, IntentError> {
        let r = self.engine.submit(req, self.net.now, &mut self.net);
        self.drain_engine();
        r
    }

    pub fn evict(&mut self, element: &ElementId) -> Result<(), String> {
        self.net.evict(element, "operator")
    }

    pub fn remap(&mut self, switch: &ElementId, controller: &ElementId) -> Result<(), String> {
        self.net.remap(switch, controller)
    }

    fn drain_engine(&mut self) {
        let evs = self.engine.take_events();
        self.log_engine(evs);
    }

    fn log_engine(&mut self, evs: Vec<EngineEvent>) {
        let n = &mut self.net;
        for ev in evs {
            let kind = match &ev {
                EngineEvent::IntentTransition { .. } => EventKind::IntentTransition,
                EngineEvent::StageChanged { to, at, .. } => {
                    n.trace.annotate(*at, format!("stage {to}"));
                    EventKind::StageChanged
                }
                EngineEvent::DefenseInstalled { stage, at, .. } => {
                    n.trace.annotate(*at, format!("defense_installed {stage}"));
                    EventKind::DefenseInstalled
                }
                EngineEvent::ActionExecuted { .. } => EventKind::ActionExecuted,
                EngineEvent::ActionFailed { .. } => EventKind::ActionFailed,
                EngineEvent::Report(_) => EventKind::Report,
            };
            n.log(kind, ev);
        }
    }

    fn tick(&mut self) {
        let t = self.net.now;
        let n = &mut self.net;
        n.ledger.run_until(t);
        let outs = n.mw.tick(t, &mut n.ledger);
        n.apply_mw(outs);
        let dpids: Vec<u64> = n.switches.keys().copied().collect();
        if t.is_multiple_of(SEC) {
            for &d in &dpids {
                let outs = n.switches.get_mut(&d).expect("listed").expire(t);
                n.apply_switch(d, outs, None);
            }
        }
        for &d in &dpids {
            for s in n.switches.get_mut(&d).expect("listed").take_samples(t - TICK_US) {
                n.guard.ingest(&s);
            }
        }
        for ev in n.guard.evaluate(t) {
            match ev {
                GuardEvent::AnomalyRaised(a) => {
                    n.trace.annotate(t, format!("anomaly {}", a.victim));
                    n.log(EventKind::AnomalyRaised, a);
                }
                GuardEvent::AnomalyCleared { victim, at } => {
                    n.log(EventKind::AnomalyCleared, serde_json::json!({ "victim": victim, "at": at }));
                }
            }
        }
        let evs = self.engine.step(t, &mut self.net);
        self.log_engine(evs);
        self.drain_engine();
        if t.is_multiple_of(SEC) {
            self.metrics(t);
        }
        let n = &mut self.net;
        for b in n.ledger.take_new_blocks() {
            let payload = serde_json::json!({
                "height": b.height,
                "tx_count": b.body.len(),
                "block_hash": b.block_hash.to_string(),
            });
            n.log(EventKind::BlockCommitted, payload);
        }
        if t + TICK_US <= self.end {
            n.q.schedule(t + TICK_US, Ev::Tick);
        }
    }

    fn metrics(&mut self, t: Micros) {
        let n = &mut self.net;
        let from = t.saturating_sub(SEC);
        let packet_ins: u64 = n.controllers.values_mut().map(|c| c.take_received()).sum();
        let load = n.controllers.values().map(|c| c.load().busy_fraction(from, t)).fold(0.0, f64::max);
        for c in n.controllers.values_mut() {
            c.load_mut().prune(from);
        }
        let link_rates = n.watched.iter().map(|l| (l.clone(), n.guard.link_rate(l, t))).collect();
        let row = MetricsRow {
            t_s: t as f64 / SEC as f64,
            packet_in_rate: packet_ins as f64 * SEC as f64 / (t - from).max(1) as f64,
            controller_load: load,
            link_rates,
        };
        n.log(EventKind::MetricsTick, &row);
        n.trace.push(row);
    }

    fn scenario(&mut self, i: usize) {
        let ev = self.spec.events[i].event.clone();
        let t = self.net.now;
        self.net.log(EventKind::Scenario, &ev);
        let failure = match ev {
            ScenarioEvent::StartTraffic { pairs, fps, frame_size } => {
                self.net.start_traffic(pairs, fps, frame_size);
                None
            }
            ScenarioEvent::StartDdos { victims, attackers, spoofed_source_count, rate, frame_size } => {
                let n = &mut self.net;
                match AttackPlan::new(&n.topo, &victims, &attackers, spoofed_source_count, rate, frame_size, &mut n.rng) {
                    Ok(plan) => {
                        n.trace.annotate(t, "attack_start");
                        n.start_attack(plan);
                        None
                    }
                    Err(e) => Some(e.to_string()),
                }
            }
            ScenarioEvent::StopAttack => {
                self.net.trace.annotate(t, "attack_stop");
                self.net.stop_attack();
                None
            }
            ScenarioEvent::SubmitIntent(req) => self.submit_intent(req).err().map(|e| format!("{e:?}")),
            ScenarioEvent::Evict { element } => self.evict(&ElementId::new(element)).err(),
            ScenarioEvent::Remap { switch, controller } => {
                self.remap(&ElementId::new(switch), &ElementId::new(controller)).err()
            }
        };
        if let Some(error) = failure {
            self.net.log(EventKind::Scenario, serde_json::json!({ "type": "failed", "event": i, "error": error }));
        }
    }
}

/// Runs a scenario start to finish.
pub fn run(spec: ScenarioSpec) -> Result<RunOutput, ScenarioError> {
    Ok(World::new(spec)?.run())
}

/// Victim-link monitoring key for a host.
pub fn host_link(topo: &TopologySpec, host: &str) -> Option<LinkId> {
    topo.host(host).map(|(_, h)| link_id(h.attach.dpid, h.attach.port))
}

