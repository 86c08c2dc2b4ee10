use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;

use serde::Serialize;

use super::flowtable::FlowTable;
use super::frame::Frame;
use crate::guard::{FlowKey, RateLimit, RateTarget, SampleKind, TrafficSample};
use crate::ofwire::{
    decode, encode, Action, FrameBuffer, OfBody, OfMessage, PacketIn, SwitchFeatures, OFPP_FLOOD, OFP_NO_BUFFER,
};
use crate::sched::{Micros, SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Matched an entry with no actions.
    FlowDrop,
    Meter,
    BufferOverflow,
    BufferExpired,
    NoController,
    NoPort,
    PacketOutDrop,
}

/// Effects of one switch step. Copies of a frame are tracked by the caller:
/// `Emit` and `Buffered` create one, `Unbuffered` ends one.
#[derive(Debug, Clone, PartialEq)]
pub enum SwitchOut {
    Emit { port: u32, frame: Frame },
    Buffered { frame: Frame },
    Unbuffered { frame: Frame, reason: Option<DropReason> },
    Dropped { frame: Frame, reason: DropReason },
    Control(Vec<u8>),
}

#[derive(Debug, Clone)]
struct TokenBucket {
    rate: f64,
    burst: f64,
    tokens: f64,
    at: Micros,
    last_hit: Micros,
    idle_timeout_s: u16,
}

impl TokenBucket {
    fn new(rate: f64, idle_timeout_s: u16, now: Micros) -> Self {
        let burst = (rate * 0.1).max(1500.0);
        TokenBucket { rate, burst, tokens: burst, at: now, last_hit: now, idle_timeout_s }
    }

    fn admit(&mut self, bytes: u32, now: Micros) -> bool {
        let dt = now.saturating_sub(self.at) as f64 / SEC as f64;
        self.tokens = (self.tokens + dt * self.rate).min(self.burst);
        self.at = now;
        self.last_hit = now;
        if self.tokens >= f64::from(bytes) {
            self.tokens -= f64::from(bytes);
            true
        } else {
            false
        }
    }

    fn expired(&self, now: Micros) -> bool {
        self.idle_timeout_s > 0 && now >= self.last_hit + u64::from(self.idle_timeout_s) * SEC
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SwitchStats {
    pub received: u64,
    pub packet_ins: u64,
    pub drops: BTreeMap<DropReason, u64>,
}

pub struct SimSwitch {
    pub dpid: u64,
    edge_ports: Vec<u32>,
    table: FlowTable,
    rx: FrameBuffer,
    connected: bool,
    buffers: BTreeMap<u32, (Frame, u32, Micros)>,
    buffer_order: VecDeque<u32>,
    next_buffer: u32,
    buffer_cap: usize,
    buffer_ttl: Micros,
    link_meters: BTreeMap<u32, TokenBucket>,
    ip_meters: BTreeMap<Ipv4Addr, TokenBucket>,
    tx: BTreeMap<u32, (u64, u64)>,
    rx_count: BTreeMap<u32, (u64, u64)>,
    packet_in_count: BTreeMap<FlowKey, (u64, u64)>,
    stats: SwitchStats,
}

impl SimSwitch {
    pub fn new(dpid: u64, edge_ports: Vec<u32>) -> Self {
        SimSwitch {
            dpid,
            edge_ports,
            table: FlowTable::default(),
            rx: FrameBuffer::default(),
            connected: false,
            buffers: BTreeMap::new(),
            buffer_order: VecDeque::new(),
            next_buffer: 0,
            buffer_cap: 4096,
            buffer_ttl: 5 * SEC,
            link_meters: BTreeMap::new(),
            ip_meters: BTreeMap::new(),
            tx: BTreeMap::new(),
            rx_count: BTreeMap::new(),
            packet_in_count: BTreeMap::new(),
            stats: SwitchStats::default(),
        }
    }

    pub fn table(&self) -> &FlowTable {
        &self.table
    }

    pub fn stats(&self) -> &SwitchStats {
        &self.stats
    }

    pub fn buffered(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Opens the control connection; returns the switch's Hello.
    pub fn connect(&mut self) -> Vec<u8> {
        self.connected = true;
        self.rx = FrameBuffer::default();
        encode(&OfMessage::hello(1)).expect("hello encodes")
    }

    /// The control connection closed; buffered frames are released as drops.
    pub fn disconnect(&mut self) -> Vec<SwitchOut> {
        self.connected = false;
        self.buffer_order.clear();
        std::mem::take(&mut self.buffers)
            .into_values()
            .map(|(frame, _, _)| SwitchOut::Unbuffered { frame, reason: Some(DropReason::NoController) })
            .collect()
    }

    pub fn install_rate_limit(&mut self, rl: &RateLimit, now: Micros) {
        let b = TokenBucket::new(rl.bytes_per_sec, rl.idle_timeout_s, now);
        match rl.target {
            RateTarget::Link { port, .. } => {
                self.link_meters.insert(port, b);
            }
            RateTarget::Ip { src, .. } => {
                self.ip_meters.insert(src, b);
            }
        }
    }

    pub fn rate_limits(&self) -> usize {
        self.link_meters.len() + self.ip_meters.len()
    }

    fn drop(&mut self, frame: Frame, reason: DropReason, out: &mut Vec<SwitchOut>) {
        *self.stats.drops.entry(reason).or_default() += 1;
        out.push(SwitchOut::Dropped { frame, reason });
    }

    /// Counts an outgoing frame on `port`.
    fn emit(&mut self, port: u32, frame: Frame, out: &mut Vec<SwitchOut>) {
        let c = self.tx.entry(port).or_default();
        c.0 += u64::from(frame.size);
        c.1 += 1;
        out.push(SwitchOut::Emit { port, frame });
    }

    fn apply_actions(&mut self, actions: &[Action], in_port: u32, frame: Frame, out: &mut Vec<SwitchOut>) -> bool {
        let mut sent = false;
        for a in actions {
            let Action::Output(p) = *a;
            if p == OFPP_FLOOD {
                for e in self.edge_ports.clone() {
                    if e != in_port {
                        self.emit(e, frame, out);
                        sent = true;
                    }
                }
            } else if p != in_port {
                self.emit(p, frame, out);
                sent = true;
            }
        }
        sent
    }

    /// A frame arrives on `in_port`.
    pub fn receive(&mut self, in_port: u32, frame: Frame, now: Micros) -> Vec<SwitchOut> {
        let mut out = Vec::new();
        self.stats.received += 1;
        let c = self.rx_count.entry(in_port).or_default();
        c.0 += u64::from(frame.size);
        c.1 += 1;
        if let Some(m) = self.link_meters.get_mut(&in_port) {
            if !m.admit(frame.size, now) {
                self.drop(frame, DropReason::Meter, &mut out);
                return out;
            }
        }
        if let Some(m) = self.ip_meters.get_mut(&frame.ipv4_src) {
            if !m.admit(frame.size, now) {
                self.drop(frame, DropReason::Meter, &mut out);
                return out;
            }
        }
        match self.table.lookup(&frame, in_port, now) {
            Some(actions) => {
                if !self.apply_actions(&actions, in_port, frame, &mut out) {
                    self.drop(frame, DropReason::FlowDrop, &mut out);
                }
            }
            None => self.miss(in_port, frame, now, &mut out),
        }
        out
    }

    fn miss(&mut self, in_port: u32, frame: Frame, now: Micros, out: &mut Vec<SwitchOut>) {
        if !self.connected {
            self.drop(frame, DropReason::NoController, out);
            return;
        }
        if self.buffers.len() >= self.buffer_cap {
            if let Some(old) = self.buffer_order.pop_front() {
                if let Some((f, _, _)) = self.buffers.remove(&old) {
                    *self.stats.drops.entry(DropReason::BufferOverflow).or_default() += 1;
                    out.push(SwitchOut::Unbuffered { frame: f, reason: Some(DropReason::BufferOverflow) });
                }
            }
        }
        let id = self.next_buffer;
        self.next_buffer = (self.next_buffer + 1) % OFP_NO_BUFFER;
        self.buffers.insert(id, (frame, in_port, now));
        self.buffer_order.push_back(id);
        out.push(SwitchOut::Buffered { frame });
        self.stats.packet_ins += 1;
        let key = FlowKey { src: frame.ipv4_src, dst: frame.ipv4_dst, in_port };
        let c = self.packet_in_count.entry(key).or_default();
        c.0 += 1;
        c.1 += u64::from(frame.size);
        let msg = OfMessage::new(
            0,
            OfBody::PacketIn(PacketIn { buffer_id: id, reason: 0, table_id: 0, cookie: 0, in_port, frame: frame.encode() }),
        );
        out.push(SwitchOut::Control(encode(&msg).expect("packet_in encodes")));
    }

    /// Bytes from the control connection.
    pub fn on_control(&mut self, bytes: &[u8], now: Micros) -> Vec<SwitchOut> {
        let mut out = Vec::new();
        if !self.connected {
            return out;
        }
        self.rx.push(bytes);
        while let Ok(Some(frame)) = self.rx.next_frame() {
            let Ok((msg, _)) = decode(&frame) else { continue };
            self.on_message(msg, now, &mut out);
        }
        out
    }

    fn reply(&self, xid: u32, body: OfBody, out: &mut Vec<SwitchOut>) {
        out.push(SwitchOut::Control(encode(&OfMessage::new(xid, body)).expect("reply encodes")));
    }

    fn on_message(&mut self, msg: OfMessage, now: Micros, out: &mut Vec<SwitchOut>) {
        match msg.body {
            OfBody::FeaturesRequest => self.reply(
                msg.xid,
                OfBody::FeaturesReply(SwitchFeatures {
                    datapath_id: self.dpid,
                    n_buffers: self.buffer_cap as u32,
                    n_tables: 1,
                    auxiliary_id: 0,
                    capabilities: 0,
                }),
                out,
            ),
            OfBody::EchoRequest(data) => self.reply(msg.xid, OfBody::EchoReply(data), out),
            OfBody::FlowMod(fm) => {
                self.table.apply(&fm, now);
            }
            OfBody::PacketOut(po) => {
                let taken = if po.buffer_id == OFP_NO_BUFFER {
                    Frame::decode(&po.data).map(|f| (f, po.in_port, false))
                } else {
                    self.buffers.remove(&po.buffer_id).map(|(f, p, _)| (f, p, true))
                };
                let Some((frame, in_port, buffered)) = taken else { return };
                if buffered {
                    self.buffer_order.retain(|b| *b != po.buffer_id);
                    out.push(SwitchOut::Unbuffered { frame, reason: None });
                }
                if !self.apply_actions(&po.actions, in_port, frame, out) {
                    self.drop(frame, DropReason::PacketOutDrop, out);
                }
            }
            _ => {}
        }
    }

    /// Drops stale buffers and timed-out entries and meters.
    pub fn expire(&mut self, now: Micros) -> Vec<SwitchOut> {
        let mut out = Vec::new();
        while let Some(&id) = self.buffer_order.front() {
            match self.buffers.get(&id) {
                Some(&(frame, _, at)) if now >= at + self.buffer_ttl => {
                    self.buffers.remove(&id);
                    self.buffer_order.pop_front();
                    *self.stats.drops.entry(DropReason::BufferExpired).or_default() += 1;
                    out.push(SwitchOut::Unbuffered { frame, reason: Some(DropReason::BufferExpired) });
                }
                Some(_) => break,
                None => {
                    self.buffer_order.pop_front();
                }
            }
        }
        self.table.expire(now);
        self.link_meters.retain(|_, m| !m.expired(now));
        self.ip_meters.retain(|_, m| !m.expired(now));
        out
    }

    /// Drains the interval counters into samples stamped `interval_start`.
    pub fn take_samples(&mut self, interval_start: Micros) -> Vec<TrafficSample> {
        let dpid = self.dpid;
        let port_samples = |kind, counts: BTreeMap<u32, (u64, u64)>| {
            counts.into_iter().map(move |(port, (bytes, pkts))| TrafficSample {
                kind,
                switch: dpid,
                port,
                byte_count: bytes,
                packet_count: pkts,
                flow: None,
                timestamp_us: interval_start,
            })
        };
        let mut v: Vec<TrafficSample> = port_samples(SampleKind::Port, std::mem::take(&mut self.tx))
            .chain(port_samples(SampleKind::PortRx, std::mem::take(&mut self.rx_count)))
            .collect();
        v.extend(std::mem::take(&mut self.packet_in_count).into_iter().map(|(key, (n, bytes))| TrafficSample {
            kind: SampleKind::PacketIn,
            switch: dpid,
            port: key.in_port,
            byte_count: bytes,
            packet_count: n,
            flow: Some(key),
            timestamp_us: interval_start,
        }));
        v
    }
}
