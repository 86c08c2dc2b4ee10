use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{
    Admission, ChannelId, ConnId, MiddlewareConfig, MwError, MwEvent, MwOutput, MwStats, RejectReason, SnapshotKind,
    SnapshotRecord,
};
use crate::chain::{ElementId, Ledger, RegStatus, RegisterOp, Role, TxKind};
use crate::ofwire::{
    decode, encode, is_reserved_xid, Direction, FlowMod, FrameBuffer, FsmAction, FsmEvent, MsgType, OfBody,
    OfHeader, OfMessage, PeerRole, SessionFsm, SessionState,
};
use crate::sched::Micros;

struct SwitchSession {
    fsm: SessionFsm,
    rx: FrameBuffer,
    hello: Option<Vec<u8>>,
    element: Option<ElementId>,
    channel: Option<ChannelId>,
    pending: VecDeque<Vec<u8>>,
}

struct Channel {
    switch_conn: ConnId,
    switch: ElementId,
    controller: ElementId,
    fsm: SessionFsm,
    rx: FrameBuffer,
}

/// Payload of the Snapshot transaction written on a mapping change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingChange {
    pub kind: SnapshotKind,
    pub switch_id: ElementId,
    pub from: Option<ElementId>,
    pub to: ElementId,
    pub timestamp_us: Micros,
}

pub struct Middleware {
    cfg: MiddlewareConfig,
    now: Micros,
    attached: BTreeSet<ElementId>,
    evicted: BTreeSet<ElementId>,
    switches: BTreeMap<ConnId, SwitchSession>,
    conn_of: BTreeMap<ElementId, ConnId>,
    mapping: BTreeMap<ElementId, ElementId>,
    channels: BTreeMap<ChannelId, Channel>,
    next_chan: u64,
    snapshot_queue: VecDeque<Vec<u8>>,
    capture_ordinal: u64,
    stats: MwStats,
    forwarded_from: BTreeMap<ElementId, u64>,
}

fn send_all(out: &mut Vec<MwOutput>, actions: &[FsmAction], to: impl Fn(Vec<u8>) -> MwOutput) -> bool {
    let mut disconnect = false;
    for a in actions {
        match a {
            FsmAction::Send(m) => {
                if let Ok(bytes) = encode(m) {
                    out.push(to(bytes));
                }
            }
            FsmAction::Disconnect => disconnect = true,
            FsmAction::Deliver(_) => {}
        }
    }
    disconnect
}

impl Middleware {
    pub fn new(cfg: MiddlewareConfig) -> Self {
        Middleware {
            cfg,
            now: 0,
            attached: BTreeSet::new(),
            evicted: BTreeSet::new(),
            switches: BTreeMap::new(),
            conn_of: BTreeMap::new(),
            mapping: BTreeMap::new(),
            channels: BTreeMap::new(),
            next_chan: 1,
            snapshot_queue: VecDeque::new(),
            capture_ordinal: 0,
            stats: MwStats::default(),
            forwarded_from: BTreeMap::new(),
        }
    }

    /// Registers the middleware itself so it can submit snapshots and
    /// evictions.
    pub fn bootstrap(&mut self, ledger: &mut Ledger) -> Result<(), MwError> {
        if !ledger.is_admitted(&self.cfg.id) {
            ledger.register(&self.cfg.id, Role::Middleware, Vec::new())?;
        }
        Ok(())
    }

    pub fn id(&self) -> &ElementId {
        &self.cfg.id
    }

    pub fn config(&self) -> &MiddlewareConfig {
        &self.cfg
    }

    pub fn set_capture(&mut self, policy: super::CapturePolicy) {
        self.cfg.capture = policy;
    }

    pub fn set_open_enrollment(&mut self, open: bool) {
        self.cfg.open_enrollment = open;
    }

    pub fn mapping(&self) -> &BTreeMap<ElementId, ElementId> {
        &self.mapping
    }

    pub fn stats(&self) -> &MwStats {
        &self.stats
    }

    /// Messages forwarded that originated at `element`.
    pub fn forwarded_from(&self, element: &ElementId) -> u64 {
        self.forwarded_from.get(element).copied().unwrap_or(0)
    }

    pub fn snapshot_backlog(&self) -> usize {
        self.snapshot_queue.len()
    }

    pub fn attached_controllers(&self) -> impl Iterator<Item = &ElementId> {
        self.attached.iter()
    }

    pub fn is_attached(&self, controller: &ElementId) -> bool {
        self.attached.contains(controller)
    }

    pub fn connected_switches(&self) -> impl Iterator<Item = &ElementId> {
        self.conn_of.keys()
    }

    /// Connected switches with no controller mapping.
    pub fn pending_switches(&self) -> Vec<ElementId> {
        self.conn_of.keys().filter(|s| !self.mapping.contains_key(*s)).cloned().collect()
    }

    pub fn pending_len(&self, switch: &ElementId) -> usize {
        self.conn_of.get(switch).and_then(|c| self.switches.get(c)).map_or(0, |s| s.pending.len())
    }

    pub fn switch_conn(&self, switch: &ElementId) -> Option<ConnId> {
        self.conn_of.get(switch).copied()
    }

    pub fn switch_state(&self, conn: ConnId) -> Option<SessionState> {
        self.switches.get(&conn).map(|s| s.fsm.state())
    }

    /// (switch, controller) served by a channel.
    pub fn channel_ends(&self, chan: ChannelId) -> Option<(&ElementId, &ElementId)> {
        self.channels.get(&chan).map(|c| (&c.switch, &c.controller))
    }

    pub fn channel_of(&self, switch: &ElementId) -> Option<ChannelId> {
        self.conn_of.get(switch).and_then(|c| self.switches.get(c)).and_then(|s| s.channel)
    }

    pub fn is_evicted(&self, element: &ElementId, ledger: &Ledger) -> bool {
        self.evicted.contains(element) || ledger.record(element).is_some_and(|r| r.status == RegStatus::Evicted)
    }

    pub fn on_controller_connect(
        &mut self,
        id: &ElementId,
        now: Micros,
        ledger: &mut Ledger,
    ) -> (Admission, Vec<MwOutput>) {
        self.now = self.now.max(now);
        let mut out = Vec::new();
        let verdict = if self.is_evicted(id, ledger) {
            Some(RejectReason::Evicted)
        } else if ledger.is_registered(id) {
            None
        } else if self.cfg.open_enrollment {
            match ledger.register(id, Role::Controller, Vec::new()) {
                Ok(_) => None,
                Err(crate::chain::ChainError::ConsensusTimeout) => Some(RejectReason::ConsensusTimeout),
                Err(_) => Some(RejectReason::NotRegistered),
            }
        } else {
            Some(RejectReason::NotRegistered)
        };
        if let Some(reason) = verdict {
            out.push(MwOutput::Event(MwEvent::ControllerRejected { controller: id.clone(), reason }));
            return (Admission::Reject(reason), out);
        }
        self.attached.insert(id.clone());
        out.push(MwOutput::Event(MwEvent::ControllerAccepted { controller: id.clone() }));
        self.assign_pending(ledger, &mut out);
        (Admission::Accept, out)
    }

    /// The controller's attachment went away: close its channels and move
    /// its switches elsewhere.
    pub fn on_controller_disconnect(&mut self, id: &ElementId, now: Micros, ledger: &mut Ledger) -> Vec<MwOutput> {
        self.now = self.now.max(now);
        let mut out = Vec::new();
        self.detach_controller(id, &mut out);
        self.assign_pending(ledger, &mut out);
        out
    }

    pub fn on_switch_connect(&mut self, conn: ConnId, now: Micros) -> Vec<MwOutput> {
        self.now = self.now.max(now);
        let fsm = SessionFsm::with_interval(PeerRole::Switch, self.cfg.echo_interval_us).at(self.now);
        self.switches.insert(
            conn,
            SwitchSession { fsm, rx: FrameBuffer::default(), hello: None, element: None, channel: None, pending: VecDeque::new() },
        );
        Vec::new()
    }

    pub fn on_switch_disconnect(&mut self, conn: ConnId, now: Micros) -> Vec<MwOutput> {
        self.now = self.now.max(now);
        let mut out = Vec::new();
        self.drop_switch(conn, false, &mut out);
        out
    }

    pub fn on_switch_bytes(&mut self, conn: ConnId, bytes: &[u8], now: Micros, ledger: &mut Ledger) -> Vec<MwOutput> {
        self.now = self.now.max(now);
        let mut out = Vec::new();
        let Some(s) = self.switches.get_mut(&conn) else { return out };
        s.rx.push(bytes);
        loop {
            let Some(s) = self.switches.get_mut(&conn) else { break };
            match s.rx.next_frame() {
                Ok(Some(frame)) => self.switch_frame(conn, frame, ledger, &mut out),
                Ok(None) => break,
                Err(_) => {
                    self.drop_switch(conn, true, &mut out);
                    break;
                }
            }
        }
        out
    }

    fn switch_frame(&mut self, conn: ConnId, frame: Vec<u8>, ledger: &mut Ledger, out: &mut Vec<MwOutput>) {
        let Some(header) = OfHeader::peek(&frame) else { return };
        let msg = decode(&frame).ok().map(|(m, _)| m);
        let s = self.switches.get_mut(&conn).expect("session exists");
        let state = s.fsm.state();

        if state != SessionState::Established {
            let Some(msg) = msg else {
                self.drop_switch(conn, true, out);
                return;
            };
            if state == SessionState::AwaitHello && matches!(msg.body, OfBody::Hello(_)) {
                s.hello = Some(frame.clone());
            }
            let is_features = matches!(msg.body, OfBody::FeaturesReply(_));
            let actions = s.fsm.step(FsmEvent::Received(msg));
            if send_all(out, &actions, |bytes| MwOutput::ToSwitch { conn, bytes }) {
                self.drop_switch(conn, true, out);
                return;
            }
            if is_features && s.fsm.is_established() {
                self.switch_established(conn, frame, ledger, out);
            }
            return;
        }

        let has_live_channel = s.channel.and_then(|c| self.channels.get(&c)).is_some_and(|c| c.fsm.is_established());
        if is_reserved_xid(header.xid) || (header.msg_type == MsgType::EchoRequest as u8 && !has_live_channel) {
            if let Some(msg) = msg {
                let actions = s.fsm.step(FsmEvent::Received(msg));
                send_all(out, &actions, |bytes| MwOutput::ToSwitch { conn, bytes });
            }
            return;
        }
        self.forward_up(conn, frame, header.msg_type, out);
    }

    fn switch_established(&mut self, conn: ConnId, features_frame: Vec<u8>, ledger: &mut Ledger, out: &mut Vec<MwOutput>) {
        let dpid = self.switches[&conn].fsm.features().expect("established switch has features").datapath_id;
        let element = ElementId::switch(dpid);
        if self.is_evicted(&element, ledger) {
            out.push(MwOutput::Event(MwEvent::SwitchRejected { switch: element, reason: RejectReason::Evicted }));
            self.drop_switch(conn, true, out);
            return;
        }
        let s = self.switches.get_mut(&conn).expect("session exists");
        s.element = Some(element.clone());
        let hello = s.hello.clone();
        if let Some(old) = self.conn_of.insert(element.clone(), conn) {
            if old != conn {
                self.drop_switch(old, true, out);
                self.conn_of.insert(element.clone(), conn);
            }
        }
        out.push(MwOutput::Event(MwEvent::SwitchConnected { switch: element.clone() }));
        if !ledger.is_admitted(&element) {
            let op = RegisterOp::Register { element_id: element.clone(), role: Role::Switch, pubinfo: dpid.to_be_bytes().to_vec() };
            let _ = ledger.submit(TxKind::Register, op.to_payload(), &element);
        }
        if let Some(h) = hello {
            self.capture(&element, None, Direction::SwitchToCtrl, MsgType::Hello as u8, h);
        }
        self.capture(&element, None, Direction::SwitchToCtrl, MsgType::FeaturesReply as u8, features_frame);
        self.assign_pending(ledger, out);
    }

    fn capture(&mut self, switch: &ElementId, controller: Option<&ElementId>, direction: Direction, msg_type: u8, bytes: Vec<u8>) {
        let ordinal = self.capture_ordinal;
        self.capture_ordinal += 1;
        let kind = MsgType::from_code(msg_type);
        let wanted = match kind {
            Some(k) => self.cfg.capture.wants(k, ordinal),
            None => matches!(self.cfg.capture, super::CapturePolicy::All)
                || matches!(self.cfg.capture, super::CapturePolicy::Sampled { k } if k > 0 && ordinal.is_multiple_of(k as u64)),
        };
        if !wanted {
            return;
        }
        let rec = SnapshotRecord {
            switch_id: switch.clone(),
            controller_id: controller.cloned(),
            direction,
            timestamp_us: self.now,
            kind: kind.map_or(SnapshotKind::Message, SnapshotKind::of),
            bytes,
        };
        self.snapshot_queue.push_back(rec.to_payload());
        self.stats.snapshots_queued += 1;
    }

    fn forward_up(&mut self, conn: ConnId, frame: Vec<u8>, msg_type: u8, out: &mut Vec<MwOutput>) {
        let s = &self.switches[&conn];
        let Some(element) = s.element.clone() else { return };
        if self.evicted.contains(&element) {
            return;
        }
        let live = s.channel.filter(|c| self.channels.get(c).is_some_and(|ch| ch.fsm.is_established()));
        let s = self.switches.get_mut(&conn).expect("session exists");
        match live {
            Some(chan) if s.pending.is_empty() => {
                let controller = self.channels[&chan].controller.clone();
                self.emit_up(&element, &controller, chan, frame, msg_type, out);
            }
            _ => {
                if s.pending.len() >= self.cfg.pending_capacity {
                    s.pending.pop_front();
                    self.stats.pending_dropped += 1;
                    out.push(MwOutput::Event(MwEvent::PendingDropped { switch: element.clone() }));
                }
                s.pending.push_back(frame);
                if let Some(chan) = live {
                    self.flush_pending(chan, out);
                }
            }
        }
    }

    fn emit_up(&mut self, switch: &ElementId, controller: &ElementId, chan: ChannelId, frame: Vec<u8>, msg_type: u8, out: &mut Vec<MwOutput>) {
        self.stats.forwarded += 1;
        *self.forwarded_from.entry(switch.clone()).or_default() += 1;
        self.capture(switch, Some(controller), Direction::SwitchToCtrl, msg_type, frame.clone());
        out.push(MwOutput::ToController { chan, bytes: frame });
    }

    fn flush_pending(&mut self, chan: ChannelId, out: &mut Vec<MwOutput>) {
        let Some(ch) = self.channels.get(&chan) else { return };
        let (conn, switch, controller) = (ch.switch_conn, ch.switch.clone(), ch.controller.clone());
        let Some(s) = self.switches.get_mut(&conn) else { return };
        let frames: Vec<Vec<u8>> = s.pending.drain(..).collect();
        for frame in frames {
            let t = OfHeader::peek(&frame).map_or(0, |h| h.msg_type);
            self.emit_up(&switch, &controller, chan, frame, t, out);
        }
    }

    pub fn on_channel_bytes(&mut self, chan: ChannelId, bytes: &[u8], now: Micros, ledger: &mut Ledger) -> Vec<MwOutput> {
        self.now = self.now.max(now);
        let mut out = Vec::new();
        let Some(ch) = self.channels.get_mut(&chan) else { return out };
        ch.rx.push(bytes);
        loop {
            let Some(ch) = self.channels.get_mut(&chan) else { break };
            match ch.rx.next_frame() {
                Ok(Some(frame)) => self.channel_frame(chan, frame, &mut out),
                Ok(None) => break,
                Err(_) => {
                    let controller = ch.controller.clone();
                    self.detach_controller(&controller, &mut out);
                    self.assign_pending(ledger, &mut out);
                    break;
                }
            }
        }
        out
    }

    fn channel_frame(&mut self, chan: ChannelId, frame: Vec<u8>, out: &mut Vec<MwOutput>) {
        let Some(header) = OfHeader::peek(&frame) else { return };
        let ch = self.channels.get_mut(&chan).expect("channel exists");
        let controller = ch.controller.clone();
        if self.evicted.contains(&controller) {
            return;
        }
        if ch.fsm.state() == SessionState::AwaitHello {
            let Ok((msg, _)) = decode(&frame) else { return };
            let is_hello = matches!(msg.body, OfBody::Hello(_));
            let actions = ch.fsm.step(FsmEvent::Received(msg));
            if send_all(out, &actions, |bytes| MwOutput::ToController { chan, bytes }) {
                self.close_channel(chan, out);
                return;
            }
            if is_hello {
                self.emit_down(chan, frame, header.msg_type, out);
                self.flush_pending(chan, out);
            }
            return;
        }
        if is_reserved_xid(header.xid) {
            if let Ok((msg, _)) = decode(&frame) {
                let actions = ch.fsm.step(FsmEvent::Received(msg));
                send_all(out, &actions, |bytes| MwOutput::ToController { chan, bytes });
            }
            return;
        }
        self.emit_down(chan, frame, header.msg_type, out);
    }

    fn emit_down(&mut self, chan: ChannelId, frame: Vec<u8>, msg_type: u8, out: &mut Vec<MwOutput>) {
        let ch = &self.channels[&chan];
        let (conn, switch, controller) = (ch.switch_conn, ch.switch.clone(), ch.controller.clone());
        if self.mapping.get(&switch) != Some(&controller) || !self.switches.contains_key(&conn) {
            return;
        }
        self.stats.forwarded += 1;
        *self.forwarded_from.entry(controller.clone()).or_default() += 1;
        self.capture(&switch, Some(&controller), Direction::CtrlToSwitch, msg_type, frame.clone());
        out.push(MwOutput::ToSwitch { conn, bytes: frame });
    }

    /// Keepalive timers, deferred mappings and the snapshot drain.
    pub fn tick(&mut self, now: Micros, ledger: &mut Ledger) -> Vec<MwOutput> {
        self.now = self.now.max(now);
        let mut out = Vec::new();
        let conns: Vec<ConnId> = self.switches.keys().copied().collect();
        for conn in conns {
            let s = self.switches.get_mut(&conn).expect("listed");
            let actions = s.fsm.step(FsmEvent::TimerTick(self.now));
            if send_all(&mut out, &actions, |bytes| MwOutput::ToSwitch { conn, bytes }) {
                self.drop_switch(conn, true, &mut out);
            }
        }
        let chans: Vec<ChannelId> = self.channels.keys().copied().collect();
        for chan in chans {
            let Some(ch) = self.channels.get_mut(&chan) else { continue };
            let actions = ch.fsm.step(FsmEvent::TimerTick(self.now));
            if send_all(&mut out, &actions, |bytes| MwOutput::ToController { chan, bytes }) {
                let controller = ch.controller.clone();
                self.detach_controller(&controller, &mut out);
            }
        }
        self.assign_pending(ledger, &mut out);
        self.drain_snapshots(ledger);
        out
    }

    /// Submits every queued snapshot. Forwarding never waits on this.
    pub fn drain_snapshots(&mut self, ledger: &mut Ledger) {
        while let Some(payload) = self.snapshot_queue.pop_front() {
            match ledger.submit(TxKind::Snapshot, payload.clone(), &self.cfg.id) {
                Ok(_) => self.stats.snapshots_submitted += 1,
                Err(_) => {
                    self.snapshot_queue.push_front(payload);
                    break;
                }
            }
        }
    }

    fn choose_controller(&self, ledger: &Ledger) -> Option<ElementId> {
        let mut load: BTreeMap<&ElementId, usize> = BTreeMap::new();
        for c in &self.attached {
            if !self.evicted.contains(c) && ledger.is_registered(c) {
                load.insert(c, 0);
            }
        }
        for c in self.mapping.values() {
            if let Some(n) = load.get_mut(c) {
                *n += 1;
            }
        }
        load.into_iter().min_by_key(|&(c, n)| (n, c)).map(|(c, _)| c.clone())
    }

    fn assign_pending(&mut self, ledger: &Ledger, out: &mut Vec<MwOutput>) {
        for switch in self.pending_switches() {
            if !ledger.is_registered(&switch) || self.evicted.contains(&switch) {
                continue;
            }
            let Some(controller) = self.choose_controller(ledger) else { return };
            self.map_switch(&switch, &controller, out);
            out.push(MwOutput::Event(MwEvent::Mapped { switch, controller }));
        }
    }

    fn map_switch(&mut self, switch: &ElementId, controller: &ElementId, out: &mut Vec<MwOutput>) {
        let conn = self.conn_of[switch];
        let chan = ChannelId(self.next_chan);
        self.next_chan += 1;
        let fsm = SessionFsm::with_interval(PeerRole::Controller, self.cfg.echo_interval_us).at(self.now);
        self.channels.insert(
            chan,
            Channel { switch_conn: conn, switch: switch.clone(), controller: controller.clone(), fsm, rx: FrameBuffer::default() },
        );
        let s = self.switches.get_mut(&conn).expect("connected");
        s.channel = Some(chan);
        let hello = s.hello.clone().unwrap_or_else(|| encode(&OfMessage::hello(0)).expect("hello encodes"));
        self.mapping.insert(switch.clone(), controller.clone());
        out.push(MwOutput::OpenChannel { chan, controller: controller.clone(), switch: switch.clone() });
        out.push(MwOutput::ToController { chan, bytes: hello });
    }

    fn close_channel(&mut self, chan: ChannelId, out: &mut Vec<MwOutput>) {
        if let Some(ch) = self.channels.remove(&chan) {
            if let Some(s) = self.switches.get_mut(&ch.switch_conn) {
                if s.channel == Some(chan) {
                    s.channel = None;
                }
            }
            if self.mapping.get(&ch.switch) == Some(&ch.controller) {
                self.mapping.remove(&ch.switch);
            }
            out.push(MwOutput::CloseChannel { chan });
        }
    }

    fn detach_controller(&mut self, controller: &ElementId, out: &mut Vec<MwOutput>) {
        let was_attached = self.attached.remove(controller);
        let chans: Vec<ChannelId> =
            self.channels.iter().filter(|(_, c)| &c.controller == controller).map(|(&id, _)| id).collect();
        for chan in chans {
            let switch = self.channels[&chan].switch.clone();
            self.close_channel(chan, out);
            out.push(MwOutput::Event(MwEvent::Unmapped { switch }));
        }
        if was_attached {
            out.push(MwOutput::CloseController { controller: controller.clone() });
            out.push(MwOutput::Event(MwEvent::SessionDisconnected { element: controller.clone() }));
        }
    }

    fn drop_switch(&mut self, conn: ConnId, close: bool, out: &mut Vec<MwOutput>) {
        let Some(s) = self.switches.remove(&conn) else { return };
        if let Some(chan) = s.channel {
            self.close_channel(chan, out);
        }
        if let Some(e) = &s.element {
            if self.conn_of.get(e) == Some(&conn) {
                self.conn_of.remove(e);
                self.mapping.remove(e);
            }
            out.push(MwOutput::Event(MwEvent::SessionDisconnected { element: e.clone() }));
        }
        if close {
            out.push(MwOutput::CloseSwitch { conn });
        }
    }

    /// Moves a switch to another attached controller.
    pub fn remap(&mut self, switch: &ElementId, controller: &ElementId, now: Micros, ledger: &mut Ledger) -> Result<Vec<MwOutput>, MwError> {
        self.now = self.now.max(now);
        if ledger.record(switch).is_none() && !self.conn_of.contains_key(switch) {
            return Err(MwError::UnknownElement(switch.clone()));
        }
        if ledger.record(controller).is_none() {
            return Err(MwError::UnknownElement(controller.clone()));
        }
        if self.is_evicted(controller, ledger) {
            return Err(MwError::Evicted(controller.clone()));
        }
        if !self.attached.contains(controller) {
            return Err(MwError::NotAttached(controller.clone()));
        }
        if !self.conn_of.contains_key(switch) {
            return Err(MwError::NotConnected(switch.clone()));
        }
        let from = self.mapping.get(switch).cloned();
        if from.as_ref() == Some(controller) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        if let Some(chan) = self.channel_of(switch) {
            self.close_channel(chan, &mut out);
        }
        self.map_switch(switch, controller, &mut out);
        let change = MappingChange {
            kind: SnapshotKind::Mapping,
            switch_id: switch.clone(),
            from: from.clone(),
            to: controller.clone(),
            timestamp_us: self.now,
        };
        self.snapshot_queue.push_back(serde_json::to_vec(&change).expect("mapping change serializes"));
        self.stats.snapshots_queued += 1;
        out.push(MwOutput::Event(match from {
            Some(from) => MwEvent::Remapped { switch: switch.clone(), from, to: controller.clone() },
            None => MwEvent::Mapped { switch: switch.clone(), controller: controller.clone() },
        }));
        Ok(out)
    }

    /// Revokes an element on chain and cuts its sessions at once.
    pub fn evict(&mut self, element: &ElementId, reason: &str, now: Micros, ledger: &mut Ledger) -> Result<Vec<MwOutput>, MwError> {
        self.now = self.now.max(now);
        let Some(record) = ledger.record(element).cloned() else {
            if self.conn_of.contains_key(element) || self.attached.contains(element) {
                return self.evict_local(element, reason, Role::Switch, ledger);
            }
            return Err(MwError::UnknownElement(element.clone()));
        };
        if self.is_evicted(element, ledger) {
            return Err(MwError::Evicted(element.clone()));
        }
        self.evict_local(element, reason, record.role, ledger)
    }

    fn evict_local(&mut self, element: &ElementId, reason: &str, role: Role, ledger: &mut Ledger) -> Result<Vec<MwOutput>, MwError> {
        let op = RegisterOp::Evict { element_id: element.clone(), reason: reason.to_string() };
        ledger.submit(TxKind::Register, op.to_payload(), &self.cfg.id)?;
        self.evicted.insert(element.clone());
        let mut out = Vec::new();
        match role {
            Role::Controller => self.detach_controller(element, &mut out),
            Role::Switch => {
                if let Some(conn) = self.conn_of.get(element).copied() {
                    self.drop_switch(conn, true, &mut out);
                }
            }
            Role::Middleware => {}
        }
        out.push(MwOutput::Event(MwEvent::Evicted { element: element.clone(), reason: reason.to_string() }));
        self.assign_pending(ledger, &mut out);
        Ok(out)
    }

    /// Sends a middleware-originated FlowMod straight to a switch.
    pub fn install_flow(&mut self, switch: &ElementId, flow: FlowMod) -> Result<Vec<MwOutput>, MwError> {
        let conn = *self.conn_of.get(switch).ok_or_else(|| MwError::NotConnected(switch.clone()))?;
        let s = self.switches.get_mut(&conn).expect("connected");
        let xid = s.fsm.alloc_xid();
        let bytes = encode(&OfMessage::new(xid, OfBody::FlowMod(flow))).map_err(|_| MwError::UnknownElement(switch.clone()))?;
        Ok(vec![MwOutput::ToSwitch { conn, bytes }])
    }
}
