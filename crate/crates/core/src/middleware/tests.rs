use super::*;
use crate::chain::{ConsensusConfig, Ledger, Role, TxKind};
use crate::ofwire::{
    encode, Action, FlowMod, MatchFields, OfBody, OfMessage, PacketIn, SwitchFeatures, RESERVED_XID_BASE,
};
use crate::sched::MS;

fn ledger() -> Ledger {
    Ledger::new(ConsensusConfig::pbft(4, MS), 3).unwrap()
}

fn bytes(m: OfMessage) -> Vec<u8> {
    encode(&m).unwrap()
}

fn features_reply(dpid: u64) -> Vec<u8> {
    bytes(OfMessage::new(
        RESERVED_XID_BASE + 1,
        OfBody::FeaturesReply(SwitchFeatures { datapath_id: dpid, n_buffers: 0, n_tables: 1, auxiliary_id: 0, capabilities: 0 }),
    ))
}

fn packet_in(xid: u32, port: u32) -> Vec<u8> {
    bytes(OfMessage::new(
        xid,
        OfBody::PacketIn(PacketIn { buffer_id: u32::MAX, reason: 0, table_id: 0, cookie: 0, in_port: port, frame: vec![1, 2, 3] }),
    ))
}

struct Rig {
    mw: Middleware,
    ledger: Ledger,
    now: u64,
}

impl Rig {
    fn new(controllers: &[&str]) -> Rig {
        let mut ledger = ledger();
        let mut mw = Middleware::new(MiddlewareConfig::default());
        mw.bootstrap(&mut ledger).unwrap();
        for c in controllers {
            ledger.register(&ElementId::new(*c), Role::Controller, vec![]).unwrap();
        }
        let now = ledger.now();
        Rig { mw, ledger, now }
    }

    fn attach(&mut self, c: &str) -> (Admission, Vec<MwOutput>) {
        self.mw.on_controller_connect(&ElementId::new(c), self.now, &mut self.ledger)
    }

    /// Handshakes switch `dpid` on connection `conn` and lets its Register
    /// commit.
    fn connect_switch(&mut self, conn: ConnId, dpid: u64) -> Vec<MwOutput> {
        let mut out = self.mw.on_switch_connect(conn, self.now);
        out.extend(self.mw.on_switch_bytes(conn, &bytes(OfMessage::hello(7)), self.now, &mut self.ledger));
        out.extend(self.mw.on_switch_bytes(conn, &features_reply(dpid), self.now, &mut self.ledger));
        self.settle(&mut out);
        out
    }

    fn settle(&mut self, out: &mut Vec<MwOutput>) {
        for _ in 0..20 {
            self.now += 100 * MS;
            self.ledger.run_until(self.now);
            out.extend(self.mw.tick(self.now, &mut self.ledger));
        }
    }

    fn controller_hello(&mut self, chan: ChannelId) -> Vec<MwOutput> {
        self.mw.on_channel_bytes(chan, &bytes(OfMessage::hello(1)), self.now, &mut self.ledger)
    }
}

fn reserved(frame: &[u8]) -> bool {
    crate::ofwire::OfHeader::peek(frame).is_some_and(|h| crate::ofwire::is_reserved_xid(h.xid))
}

fn opened(out: &[MwOutput]) -> Vec<(ChannelId, ElementId)> {
    out.iter()
        .filter_map(|o| match o {
            MwOutput::OpenChannel { chan, controller, .. } => Some((*chan, controller.clone())),
            _ => None,
        })
        .collect()
}

fn to_controller(out: &[MwOutput], want: ChannelId) -> Vec<Vec<u8>> {
    out.iter()
        .filter_map(|o| match o {
            MwOutput::ToController { chan, bytes } if *chan == want && !reserved(bytes) => Some(bytes.clone()),
            _ => None,
        })
        .collect()
}

fn to_switch(out: &[MwOutput]) -> Vec<Vec<u8>> {
    out.iter()
        .filter_map(|o| match o {
            MwOutput::ToSwitch { bytes, .. } if !reserved(bytes) => Some(bytes.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn admission_follows_registry() {
    let mut rig = Rig::new(&["C1"]);
    assert_eq!(rig.attach("C1").0, Admission::Accept);
    assert_eq!(rig.attach("C3").0, Admission::Reject(RejectReason::NotRegistered));
    rig.mw.set_open_enrollment(true);
    assert_eq!(rig.attach("C3").0, Admission::Accept);
    assert!(rig.ledger.is_registered(&"C3".into()));
}

#[test]
fn switch_without_controller_stays_pending() {
    let mut rig = Rig::new(&[]);
    let out = rig.connect_switch(1, 5);
    assert!(opened(&out).is_empty());
    assert_eq!(rig.mw.pending_switches(), vec![ElementId::switch(5)]);
    assert!(rig.ledger.is_registered(&ElementId::switch(5)));
}

#[test]
fn forwarding_is_byte_identical_and_captured() {
    let mut rig = Rig::new(&["C1"]);
    rig.attach("C1");
    let out = rig.connect_switch(1, 5);
    let (chan, c) = opened(&out)[0].clone();
    assert_eq!(c.as_str(), "C1");
    // cached switch hello is replayed to the controller
    assert_eq!(to_controller(&out, chan), vec![bytes(OfMessage::hello(7))]);

    let out = rig.controller_hello(chan);
    assert!(to_switch(&out).contains(&bytes(OfMessage::hello(1))));

    let before = rig.mw.stats().snapshots_queued;
    let pi = packet_in(42, 3);
    let out = rig.mw.on_switch_bytes(1, &pi, rig.now, &mut rig.ledger);
    assert_eq!(to_controller(&out, chan), vec![pi]);
    let fm = bytes(OfMessage::new(43, OfBody::FlowMod(FlowMod::add(MatchFields::default(), 1, vec![Action::Output(2)]))));
    let out = rig.mw.on_channel_bytes(chan, &fm, rig.now, &mut rig.ledger);
    assert_eq!(to_switch(&out), vec![fm]);
    assert_eq!(rig.mw.stats().snapshots_queued, before + 2);

    let committed = rig.ledger.count_committed(TxKind::Snapshot);
    let mut out = Vec::new();
    rig.settle(&mut out);
    assert_eq!(rig.mw.snapshot_backlog(), 0);
    assert!(rig.ledger.count_committed(TxKind::Snapshot) >= committed + 2);
}

#[test]
fn unmapped_packet_in_is_delivered_after_attach() {
    let mut rig = Rig::new(&["C1"]);
    rig.connect_switch(1, 5);
    let first = packet_in(10, 1);
    let second = packet_in(11, 2);
    assert!(rig.mw.on_switch_bytes(1, &first, rig.now, &mut rig.ledger).is_empty());
    rig.mw.on_switch_bytes(1, &second, rig.now, &mut rig.ledger);
    assert_eq!(rig.mw.pending_len(&ElementId::switch(5)), 2);

    let (_, out) = rig.attach("C1");
    let (chan, _) = opened(&out)[0].clone();
    let out = rig.controller_hello(chan);
    assert_eq!(to_controller(&out, chan), vec![first, second]);
}

#[test]
fn pending_buffer_drops_oldest() {
    let mut rig = Rig::new(&[]);
    rig.connect_switch(1, 5);
    for i in 0..300u32 {
        rig.mw.on_switch_bytes(1, &packet_in(i, 1), rig.now, &mut rig.ledger);
    }
    assert_eq!(rig.mw.pending_len(&ElementId::switch(5)), 256);
    assert_eq!(rig.mw.stats().pending_dropped, 44);
}

#[test]
fn remap_moves_traffic_and_rejects_bad_targets() {
    let mut rig = Rig::new(&["C1", "C2"]);
    rig.attach("C1");
    rig.attach("C2");
    let s = ElementId::switch(5);
    let out = rig.connect_switch(1, 5);
    let (chan1, c) = opened(&out)[0].clone();
    assert_eq!(c.as_str(), "C1");
    rig.controller_hello(chan1);

    assert!(rig.mw.remap(&s, &"C1".into(), rig.now, &mut rig.ledger).unwrap().is_empty());
    let out = rig.mw.remap(&s, &"C2".into(), rig.now, &mut rig.ledger).unwrap();
    let (chan2, _) = opened(&out)[0].clone();
    assert!(out.contains(&MwOutput::CloseChannel { chan: chan1 }));
    rig.controller_hello(chan2);
    let pi = packet_in(50, 1);
    let out = rig.mw.on_switch_bytes(1, &pi, rig.now, &mut rig.ledger);
    assert_eq!(to_controller(&out, chan2), vec![pi]);

    rig.mw.evict(&"C1".into(), "test", rig.now, &mut rig.ledger).unwrap();
    let err = rig.mw.remap(&s, &"C1".into(), rig.now, &mut rig.ledger).unwrap_err();
    assert_eq!(err, MwError::Evicted("C1".into()));
    assert_eq!(rig.mw.mapping()[&s].as_str(), "C2");
}

#[test]
fn eviction_cuts_and_remaps() {
    let mut rig = Rig::new(&["C1", "C2"]);
    rig.attach("C1");
    let out = rig.connect_switch(1, 5);
    let (chan1, _) = opened(&out)[0].clone();
    rig.controller_hello(chan1);
    rig.attach("C2");

    let c1 = ElementId::new("C1");
    let out = rig.mw.evict(&c1, "hijacked", rig.now, &mut rig.ledger).unwrap();
    assert!(out.contains(&MwOutput::CloseController { controller: c1.clone() }));
    let (chan2, c) = opened(&out)[0].clone();
    assert_eq!(c.as_str(), "C2");

    let sent = rig.mw.forwarded_from(&c1);
    let fm = bytes(OfMessage::new(9, OfBody::FlowMod(FlowMod::add(MatchFields::default(), 1, vec![]))));
    assert!(rig.mw.on_channel_bytes(chan1, &fm, rig.now, &mut rig.ledger).is_empty());
    assert_eq!(rig.mw.forwarded_from(&c1), sent);

    let mut out = Vec::new();
    rig.settle(&mut out);
    assert_eq!(rig.attach("C1").0, Admission::Reject(RejectReason::Evicted));
    rig.controller_hello(chan2);
    assert_eq!(rig.mw.mapping()[&ElementId::switch(5)].as_str(), "C2");
}

#[test]
fn evicted_switch_cannot_return() {
    let mut rig = Rig::new(&["C1"]);
    rig.connect_switch(1, 5);
    let s = ElementId::switch(5);
    let out = rig.mw.evict(&s, "rogue", rig.now, &mut rig.ledger).unwrap();
    assert!(out.contains(&MwOutput::CloseSwitch { conn: 1 }));
    let out = rig.connect_switch(2, 5);
    assert!(out.contains(&MwOutput::CloseSwitch { conn: 2 }));
    assert!(rig.mw.switch_conn(&s).is_none());
}

#[test]
fn evict_unknown_is_an_error() {
    let mut rig = Rig::new(&[]);
    let err = rig.mw.evict(&"X9".into(), "?", rig.now, &mut rig.ledger).unwrap_err();
    assert_eq!(err, MwError::UnknownElement("X9".into()));
}

#[test]
fn silent_switch_times_out() {
    let mut rig = Rig::new(&[]);
    let start = rig.now;
    rig.connect_switch(1, 5);
    let mut closed_at = None;
    for step in 0..300u64 {
        let t = start + step * 100 * MS;
        let out = rig.mw.tick(t, &mut rig.ledger);
        if out.contains(&MwOutput::CloseSwitch { conn: 1 }) {
            closed_at = Some(t);
            break;
        }
    }
    let closed_at = closed_at.expect("switch should be dropped");
    assert_eq!(closed_at - start, 15_000 * MS);
}
