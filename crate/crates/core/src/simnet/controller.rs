use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::topology::{PortRef, TopologySpec};
use crate::chain::ElementId;
use crate::guard::LoadMeter;
use crate::middleware::ChannelId;
use crate::ofwire::{
    decode, encode, is_reserved_xid, Action, FlowMod, FrameBuffer, MacAddr, MatchFields, OfBody, OfMessage, PacketIn,
    PacketOut, OFPP_CONTROLLER, OFPP_FLOOD, OFP_NO_BUFFER,
};
use crate::sched::{Micros, MS};

pub const FORWARD_PRIORITY: u16 = 10;
pub const FORWARD_IDLE_S: u16 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub service_us: Micros,
    pub queue_capacity: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { service_us: MS, queue_capacity: 1000 }
    }
}

struct Chan {
    dpid: Option<u64>,
    rx: FrameBuffer,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ControllerStats {
    pub packet_ins: u64,
    pub packet_ins_dropped: u64,
    pub flow_mods: u64,
    pub packet_outs: u64,
}

/// A packet_in admitted to the work queue, to be handled at `done_at`.
#[derive(Debug, Clone)]
pub struct Job {
    pub done_at: Micros,
    pub chan: ChannelId,
    pub packet_in: PacketIn,
}

#[derive(Debug, Default)]
pub struct CtrlOut {
    pub send: Vec<(ChannelId, Vec<u8>)>,
    pub jobs: Vec<Job>,
}

/// Minimal reactive controller: learns host locations from edge ports,
/// installs MAC-pair flows along shortest paths, floods the unknown.
pub struct SimController {
    pub id: ElementId,
    topo: Arc<TopologySpec>,
    load: LoadMeter,
    chans: BTreeMap<ChannelId, Chan>,
    by_dpid: BTreeMap<u64, ChannelId>,
    hosts: HashMap<MacAddr, PortRef>,
    next_xid: u32,
    received: u64,
    stats: ControllerStats,
}

impl SimController {
    pub fn new(id: ElementId, topo: Arc<TopologySpec>, cfg: &ControllerConfig) -> Self {
        SimController {
            id,
            topo,
            load: LoadMeter::new(cfg.service_us, cfg.queue_capacity),
            chans: BTreeMap::new(),
            by_dpid: BTreeMap::new(),
            hosts: HashMap::new(),
            next_xid: 1,
            received: 0,
            stats: ControllerStats::default(),
        }
    }

    pub fn load(&self) -> &LoadMeter {
        &self.load
    }

    pub fn load_mut(&mut self) -> &mut LoadMeter {
        &mut self.load
    }

    pub fn stats(&self) -> &ControllerStats {
        &self.stats
    }

    pub fn knows(&self, mac: &MacAddr) -> Option<PortRef> {
        self.hosts.get(mac).copied()
    }

    pub fn switches(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_dpid.keys().copied()
    }

    /// packet_in arrivals since the previous call.
    pub fn take_received(&mut self) -> u64 {
        std::mem::take(&mut self.received)
    }

    fn xid(&mut self) -> u32 {
        let x = self.next_xid;
        self.next_xid += 1;
        if is_reserved_xid(self.next_xid) {
            self.next_xid = 1;
        }
        x
    }

    fn msg(&mut self, body: OfBody) -> Vec<u8> {
        let xid = self.xid();
        encode(&OfMessage::new(xid, body)).expect("controller messages encode")
    }

    pub fn open(&mut self, chan: ChannelId) {
        self.chans.insert(chan, Chan { dpid: None, rx: FrameBuffer::default() });
    }

    pub fn close(&mut self, chan: ChannelId) {
        if let Some(c) = self.chans.remove(&chan) {
            if let Some(d) = c.dpid {
                if self.by_dpid.get(&d) == Some(&chan) {
                    self.by_dpid.remove(&d);
                }
            }
        }
    }

    pub fn on_bytes(&mut self, chan: ChannelId, bytes: &[u8], now: Micros) -> CtrlOut {
        let mut out = CtrlOut::default();
        let Some(c) = self.chans.get_mut(&chan) else { return out };
        c.rx.push(bytes);
        let mut msgs = Vec::new();
        while let Ok(Some(frame)) = c.rx.next_frame() {
            if let Ok((m, _)) = decode(&frame) {
                msgs.push(m);
            }
        }
        for m in msgs {
            match m.body {
                OfBody::Hello(_) => {
                    let h = self.msg(OfBody::Hello(Vec::new()));
                    let f = self.msg(OfBody::FeaturesRequest);
                    out.send.push((chan, h));
                    out.send.push((chan, f));
                }
                OfBody::FeaturesReply(f) => {
                    if let Some(c) = self.chans.get_mut(&chan) {
                        c.dpid = Some(f.datapath_id);
                    }
                    self.by_dpid.insert(f.datapath_id, chan);
                }
                OfBody::EchoRequest(d) => {
                    out.send.push((chan, encode(&OfMessage::new(m.xid, OfBody::EchoReply(d))).expect("echo encodes")));
                }
                OfBody::PacketIn(pi) => {
                    self.received += 1;
                    self.stats.packet_ins += 1;
                    match self.load.arrive(now) {
                        Some(done_at) => out.jobs.push(Job { done_at, chan, packet_in: pi }),
                        None => self.stats.packet_ins_dropped += 1,
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn flow(&mut self, src: MacAddr, dst: MacAddr, out_port: u32) -> Vec<u8> {
        self.stats.flow_mods += 1;
        let m = MatchFields { eth_src: Some(src), eth_dst: Some(dst), ..Default::default() };
        self.msg(OfBody::FlowMod(FlowMod::add(m, FORWARD_PRIORITY, vec![Action::Output(out_port)]).with_idle_timeout(FORWARD_IDLE_S)))
    }

    fn packet_out(&mut self, buffer_id: u32, in_port: u32, actions: Vec<Action>, data: Vec<u8>) -> Vec<u8> {
        self.stats.packet_outs += 1;
        self.msg(OfBody::PacketOut(PacketOut { buffer_id, in_port, actions, data }))
    }

    /// Handles a packet_in whose service has completed.
    pub fn on_job(&mut self, job: &Job) -> Vec<(ChannelId, Vec<u8>)> {
        let mut send = Vec::new();
        let Some(dpid) = self.chans.get(&job.chan).and_then(|c| c.dpid) else { return send };
        let pi = &job.packet_in;
        let Some(frame) = Frame::decode(&pi.frame) else { return send };
        let here = PortRef { dpid, port: pi.in_port };
        if self.topo.is_edge_port(here) {
            self.hosts.entry(frame.eth_src).or_insert(here);
        }
        let target = if frame.is_broadcast() { None } else { self.hosts.get(&frame.eth_dst).copied() };
        let Some(target) = target else {
            let po = self.packet_out(pi.buffer_id, pi.in_port, vec![Action::Output(OFPP_FLOOD)], Vec::new());
            send.push((job.chan, po));
            let others: Vec<(u64, ChannelId)> = self.by_dpid.iter().filter(|(d, _)| **d != dpid).map(|(d, c)| (*d, *c)).collect();
            for (_, chan) in others {
                let po = self.packet_out(OFP_NO_BUFFER, OFPP_CONTROLLER, vec![Action::Output(OFPP_FLOOD)], frame.encode());
                send.push((chan, po));
            }
            return send;
        };
        let Some(path) = self.topo.shortest_path(dpid, target.dpid, &BTreeSet::new()) else {
            let po = self.packet_out(pi.buffer_id, pi.in_port, Vec::new(), Vec::new());
            send.push((job.chan, po));
            return send;
        };
        let mut first_out = target.port;
        for (i, &sw) in path.iter().enumerate() {
            let out_port = match path.get(i + 1) {
                Some(&next) => self.topo.port_toward(sw, next).expect("path follows links"),
                None => target.port,
            };
            if i == 0 {
                first_out = out_port;
            }
            if let Some(&chan) = self.by_dpid.get(&sw) {
                let fm = self.flow(frame.eth_src, frame.eth_dst, out_port);
                send.push((chan, fm));
            }
        }
        let po = self.packet_out(pi.buffer_id, pi.in_port, vec![Action::Output(first_out)], Vec::new());
        send.push((job.chan, po));
        send
    }
}
