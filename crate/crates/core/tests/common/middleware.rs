use ledgernet::chain::{ConsensusConfig, ElementId, Ledger, Role, TxKind};
use ledgernet::middleware::{Admission, ChannelId, ConnId, Middleware, MiddlewareConfig, MwOutput, RejectReason};
use ledgernet::ofwire::{
    encode, is_reserved_xid, Action, FlowMod, MatchFields, OfBody, OfHeader, OfMessage, PacketIn, PacketOut, SwitchFeatures,
    RESERVED_XID_BASE,
};
use ledgernet::sched::{Micros, MS, SEC};

pub fn bytes(m: OfMessage) -> Vec<u8> {
    encode(&m).expect("encodable")
}

pub fn packet_in(xid: u32, port: u32) -> Vec<u8> {
    bytes(OfMessage::new(
        xid,
        OfBody::PacketIn(PacketIn { buffer_id: u32::MAX, reason: 0, table_id: 0, cookie: 0, in_port: port, frame: vec![0xab; 60] }),
    ))
}

fn features_reply(dpid: u64) -> Vec<u8> {
    bytes(OfMessage::new(
        RESERVED_XID_BASE + 1,
        OfBody::FeaturesReply(SwitchFeatures { datapath_id: dpid, n_buffers: 0, n_tables: 1, auxiliary_id: 0, capabilities: 0 }),
    ))
}

fn reserved(frame: &[u8]) -> bool {
    OfHeader::peek(frame).is_some_and(|h| is_reserved_xid(h.xid))
}

pub struct Rig {
    pub mw: Middleware,
    pub ledger: Ledger,
    pub now: Micros,
}

impl Rig {
    pub fn new(controllers: &[&str]) -> Rig {
        let mut ledger = Ledger::new(ConsensusConfig::pbft(4, MS), 3).expect("valid config");
        let mut mw = Middleware::new(MiddlewareConfig::default());
        mw.bootstrap(&mut ledger).expect("bootstrap");
        for c in controllers {
            ledger.register(&ElementId::new(*c), Role::Controller, vec![]).expect("register");
        }
        let now = ledger.now();
        Rig { mw, ledger, now }
    }

    pub fn attach(&mut self, c: &str) -> (Admission, Vec<MwOutput>) {
        self.mw.on_controller_connect(&ElementId::new(c), self.now, &mut self.ledger)
    }

    pub fn connect_switch(&mut self, conn: ConnId, dpid: u64, hello: &[u8]) -> Vec<MwOutput> {
        let mut out = self.mw.on_switch_connect(conn, self.now);
        out.extend(self.mw.on_switch_bytes(conn, hello, self.now, &mut self.ledger));
        out.extend(self.mw.on_switch_bytes(conn, &features_reply(dpid), self.now, &mut self.ledger));
        self.settle(&mut out, 2 * SEC);
        out
    }

    /// Advances in 100 ms ticks, letting the ledger commit.
    pub fn settle(&mut self, out: &mut Vec<MwOutput>, span: Micros) {
        let end = self.now + span;
        while self.now < end {
            self.now += 100 * MS;
            self.ledger.run_until(self.now);
            out.extend(self.mw.tick(self.now, &mut self.ledger));
        }
    }
}

pub fn opened(out: &[MwOutput]) -> Vec<(ChannelId, ElementId)> {
    out.iter()
        .filter_map(|o| match o {
            MwOutput::OpenChannel { chan, controller, .. } => Some((*chan, controller.clone())),
            _ => None,
        })
        .collect()
}

pub fn to_controller(out: &[MwOutput], want: ChannelId) -> Vec<Vec<u8>> {
    out.iter()
        .filter_map(|o| match o {
            MwOutput::ToController { chan, bytes } if *chan == want && !reserved(bytes) => Some(bytes.clone()),
            _ => None,
        })
        .collect()
}

pub fn to_switch(out: &[MwOutput]) -> Vec<Vec<u8>> {
    out.iter()
        .filter_map(|o| match o {
            MwOutput::ToSwitch { bytes, .. } if !reserved(bytes) => Some(bytes.clone()),
            _ => None,
        })
        .collect()
}

/// Unregistered rejected, registered accepted, evicted controller refused on
/// reconnect with its switch moved to the survivor and nothing it sends
/// afterwards forwarded.
pub fn registration() -> Result<String, String> {
    let mut rig = Rig::new(&["C1", "C2"]);
    match rig.attach("C9").0 {
        Admission::Reject(RejectReason::NotRegistered) => {}
        other => return Err(format!("unregistered controller got {other:?}")),
    }
    if rig.attach("C1").0 != Admission::Accept {
        return Err("registered C1 rejected".into());
    }
    let out = rig.connect_switch(1, 5, &bytes(OfMessage::hello(7)));
    let (chan1, c) = opened(&out).first().cloned().ok_or("switch never mapped")?;
    if c.as_str() != "C1" {
        return Err(format!("mapped to {c:?}"));
    }
    rig.mw.on_channel_bytes(chan1, &bytes(OfMessage::hello(1)), rig.now, &mut rig.ledger);
    if rig.attach("C2").0 != Admission::Accept {
        return Err("registered C2 rejected".into());
    }

    let c1 = ElementId::new("C1");
    let out = rig.mw.evict(&c1, "compromised", rig.now, &mut rig.ledger).map_err(|e| e.to_string())?;
    let (chan2, to) = opened(&out).first().cloned().ok_or("no remap after eviction")?;
    if to.as_str() != "C2" {
        return Err(format!("remapped to {to:?}"));
    }
    let frozen = rig.mw.forwarded_from(&c1);
    let mut leaked = 0;
    for i in 0..20 {
        let fm = bytes(OfMessage::new(100 + i, OfBody::FlowMod(FlowMod::add(MatchFields::default(), 1, vec![]))));
        leaked += to_switch(&rig.mw.on_channel_bytes(chan1, &fm, rig.now, &mut rig.ledger)).len();
    }
    let mut out = Vec::new();
    rig.settle(&mut out, SEC);
    if rig.attach("C1").0 != Admission::Reject(RejectReason::Evicted) {
        return Err("evicted controller readmitted".into());
    }
    rig.mw.on_channel_bytes(chan2, &bytes(OfMessage::hello(1)), rig.now, &mut rig.ledger);
    let pi = packet_in(77, 1);
    let delivered = to_controller(&rig.mw.on_switch_bytes(1, &pi, rig.now, &mut rig.ledger), chan2);
    if delivered != vec![pi] {
        return Err("survivor does not receive the switch's traffic".into());
    }
    if leaked > 0 || rig.mw.forwarded_from(&c1) != frozen {
        return Err(format!("{leaked} messages forwarded from the evicted controller"));
    }
    Ok(format!("S5 now on {}", rig.mw.mapping()[&ElementId::switch(5)].as_str()))
}

/// Time from a switch's last byte to its disconnect.
pub fn keepalive() -> Result<Micros, String> {
    let mut rig = Rig::new(&[]);
    let mut out = rig.mw.on_switch_connect(1, rig.now);
    out.extend(rig.mw.on_switch_bytes(1, &bytes(OfMessage::hello(7)), rig.now, &mut rig.ledger));
    out.extend(rig.mw.on_switch_bytes(1, &features_reply(5), rig.now, &mut rig.ledger));
    let silent_from = rig.now;
    for step in 1..=400u64 {
        let t = silent_from + step * 100 * MS;
        rig.ledger.run_until(t);
        if rig.mw.tick(t, &mut rig.ledger).contains(&MwOutput::CloseSwitch { conn: 1 }) {
            return Ok(t - silent_from);
        }
    }
    Err("silent switch never disconnected".into())
}

/// The same scripted exchange with and without the middleware in the path.
pub struct Transparency {
    pub messages: usize,
    pub controller_identical: bool,
    pub switch_identical: bool,
    pub snapshots: usize,
}

pub fn transparency(n: usize) -> Result<Transparency, String> {
    let switch_hello = bytes(OfMessage::hello(7));
    let ctrl_hello = bytes(OfMessage::hello(1));
    let mut script: Vec<(bool, Vec<u8>)> = Vec::new();
    for i in 0..n as u32 {
        let msg = match i % 4 {
            0 => (true, packet_in(1000 + i, 1 + i % 3)),
            1 => (
                false,
                bytes(OfMessage::new(
                    1000 + i,
                    OfBody::FlowMod(FlowMod::add(MatchFields { in_port: Some(1 + i % 3), ..Default::default() }, 10, vec![Action::Output(2)])),
                )),
            ),
            2 => (
                false,
                bytes(OfMessage::new(
                    1000 + i,
                    OfBody::PacketOut(PacketOut { buffer_id: u32::MAX, in_port: 1, actions: vec![Action::Output(3)], data: vec![i as u8; 64] }),
                )),
            ),
            _ => (true, bytes(OfMessage::new(1000 + i, OfBody::EchoRequest(i.to_be_bytes().to_vec())))),
        };
        script.push(msg);
    }
    // Direct run: each endpoint receives exactly what the other sent.
    let mut direct_ctrl = vec![switch_hello.clone()];
    let mut direct_switch = vec![ctrl_hello.clone()];
    for (up, b) in &script {
        if *up { direct_ctrl.push(b.clone()) } else { direct_switch.push(b.clone()) }
    }

    let mut rig = Rig::new(&["C1"]);
    rig.attach("C1");
    let out = rig.connect_switch(1, 5, &switch_hello);
    let (chan, _) = opened(&out).first().cloned().ok_or("switch never mapped")?;
    let mut got_ctrl = to_controller(&out, chan);
    let mut got_switch = to_switch(&rig.mw.on_channel_bytes(chan, &ctrl_hello, rig.now, &mut rig.ledger));
    let mut settle = Vec::new();
    rig.settle(&mut settle, SEC);
    got_ctrl.extend(to_controller(&settle, chan));
    got_switch.extend(to_switch(&settle));
    let before = rig.ledger.count_committed(TxKind::Snapshot);

    for (up, b) in &script {
        let out = if *up {
            rig.mw.on_switch_bytes(1, b, rig.now, &mut rig.ledger)
        } else {
            rig.mw.on_channel_bytes(chan, b, rig.now, &mut rig.ledger)
        };
        got_ctrl.extend(to_controller(&out, chan));
        got_switch.extend(to_switch(&out));
    }
    let mut tail = Vec::new();
    rig.settle(&mut tail, 2 * SEC);
    got_ctrl.extend(to_controller(&tail, chan));
    got_switch.extend(to_switch(&tail));
    Ok(Transparency {
        messages: n,
        controller_identical: got_ctrl.concat() == direct_ctrl.concat(),
        switch_identical: got_switch.concat() == direct_switch.concat(),
        snapshots: rig.ledger.count_committed(TxKind::Snapshot) - before,
    })
}
