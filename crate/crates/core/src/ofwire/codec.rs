//! Big-endian OpenFlow 1.3 framing for the message subset the proxy
//! understands. Anything else decodes to [`OfBody::Passthrough`] so it can
//! still be forwarded byte for byte.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OFP_VERSION: u8 = 4;
pub const HEADER_LEN: usize = 8;

pub const OFPP_FLOOD: u32 = 0xffff_fffb;
pub const OFPP_CONTROLLER: u32 = 0xffff_fffd;
pub const OFPP_ANY: u32 = 0xffff_ffff;
pub const OFP_NO_BUFFER: u32 = 0xffff_ffff;
pub const OFPG_ANY: u32 = 0xffff_ffff;

const OFPMT_OXM: u16 = 1;
const OXM_CLASS_BASIC: u16 = 0x8000;
const OXM_IN_PORT: u8 = 0;
const OXM_ETH_DST: u8 = 3;
const OXM_ETH_SRC: u8 = 4;
const OXM_ETH_TYPE: u8 = 5;
const OXM_IPV4_SRC: u8 = 11;
const OXM_IPV4_DST: u8 = 12;
const ETH_TYPE_IPV4: u16 = 0x0800;

const OFPIT_APPLY_ACTIONS: u16 = 4;
const OFPAT_OUTPUT: u16 = 0;
const OFPCML_NO_BUFFER: u16 = 0xffff;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("incomplete message: have {have} bytes, need {need}")]
    Incomplete { have: usize, need: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

fn malformed<T>(msg: impl Into<String>) -> Result<T, WireError> {
    Err(WireError::Malformed(msg.into()))
}

/// Message type codes of the supported subset.
#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MsgType {
    Hello = 0,
    Error = 1,
    EchoRequest = 2,
    EchoReply = 3,
    FeaturesRequest = 5,
    FeaturesReply = 6,
    PacketIn = 10,
    PacketOut = 13,
    FlowMod = 14,
}

impl MsgType {
    pub fn from_code(code: u8) -> Option<MsgType> {
        use MsgType::*;
        Some(match code {
            0 => Hello,
            1 => Error,
            2 => EchoRequest,
            3 => EchoReply,
            5 => FeaturesRequest,
            6 => FeaturesReply,
            10 => PacketIn,
            13 => PacketOut,
            14 => FlowMod,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfHeader {
    pub version: u8,
    pub msg_type: u8,
    pub length: u16,
    pub xid: u32,
}

impl OfHeader {
    /// Reads a header without validating it against the buffer length.
    pub fn peek(bytes: &[u8]) -> Option<OfHeader> {
        if bytes.len() < HEADER_LEN {
            return None;
        }
        Some(OfHeader {
            version: bytes[0],
            msg_type: bytes[1],
            length: u16::from_be_bytes([bytes[2], bytes[3]]),
            xid: u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn from_u64(v: u64) -> MacAddr {
        let b = v.to_be_bytes();
        MacAddr([b[2], b[3], b[4], b[5], b[6], b[7]])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ipv4Prefix {
    pub addr: Ipv4Addr,
    pub len: u8,
}

impl Ipv4Prefix {
    pub fn host(addr: Ipv4Addr) -> Ipv4Prefix {
        Ipv4Prefix { addr, len: 32 }
    }

    pub fn mask(&self) -> u32 {
        if self.len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(self.len.min(32)))
        }
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        let m = self.mask();
        u32::from(ip) & m == u32::from(self.addr) & m
    }
}

/// The OXM subset carried in matches: in_port, MACs and IPv4 prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MatchFields {
    pub in_port: Option<u32>,
    pub eth_src: Option<MacAddr>,
    pub eth_dst: Option<MacAddr>,
    pub ipv4_src: Option<Ipv4Prefix>,
    pub ipv4_dst: Option<Ipv4Prefix>,
}

impl MatchFields {
    pub fn is_empty(&self) -> bool {
        self.in_port.is_none()
            && self.eth_src.is_none()
            && self.eth_dst.is_none()
            && self.ipv4_src.is_none()
            && self.ipv4_dst.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Output(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowModCommand {
    Add,
    Modify,
    ModifyStrict,
    Delete,
    DeleteStrict,
}

impl FlowModCommand {
    fn code(self) -> u8 {
        match self {
            FlowModCommand::Add => 0,
            FlowModCommand::Modify => 1,
            FlowModCommand::ModifyStrict => 2,
            FlowModCommand::Delete => 3,
            FlowModCommand::DeleteStrict => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => FlowModCommand::Add,
            1 => FlowModCommand::Modify,
            2 => FlowModCommand::ModifyStrict,
            3 => FlowModCommand::Delete,
            4 => FlowModCommand::DeleteStrict,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchFeatures {
    pub datapath_id: u64,
    pub n_buffers: u32,
    pub n_tables: u8,
    pub auxiliary_id: u8,
    pub capabilities: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketIn {
    pub buffer_id: u32,
    pub reason: u8,
    pub table_id: u8,
    pub cookie: u64,
    pub in_port: u32,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketOut {
    pub buffer_id: u32,
    pub in_port: u32,
    pub actions: Vec<Action>,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMod {
    pub cookie: u64,
    pub cookie_mask: u64,
    pub table_id: u8,
    pub command: FlowModCommand,
    pub idle_timeout: u16,
    pub hard_timeout: u16,
    pub priority: u16,
    pub buffer_id: u32,
    pub out_port: u32,
    pub out_group: u32,
    pub flags: u16,
    pub matches: MatchFields,
    /// Empty means drop.
    pub actions: Vec<Action>,
}

impl FlowMod {
    pub fn add(matches: MatchFields, priority: u16, actions: Vec<Action>) -> FlowMod {
        FlowMod {
            cookie: 0,
            cookie_mask: 0,
            table_id: 0,
            command: FlowModCommand::Add,
            idle_timeout: 0,
            hard_timeout: 0,
            priority,
            buffer_id: OFP_NO_BUFFER,
            out_port: OFPP_ANY,
            out_group: OFPG_ANY,
            flags: 0,
            matches,
            actions,
        }
    }

    pub fn with_idle_timeout(mut self, secs: u16) -> FlowMod {
        self.idle_timeout = secs;
        self
    }

    pub fn is_drop(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OfBody {
    /// Hello elements are kept opaque.
    Hello(Vec<u8>),
    Error { err_type: u16, code: u16, data: Vec<u8> },
    EchoRequest(Vec<u8>),
    EchoReply(Vec<u8>),
    FeaturesRequest,
    FeaturesReply(SwitchFeatures),
    PacketIn(PacketIn),
    PacketOut(PacketOut),
    FlowMod(FlowMod),
    /// Any type outside the subset; `payload` is everything after the header.
    Passthrough { msg_type: u8, payload: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfMessage {
    pub xid: u32,
    pub body: OfBody,
}

impl OfMessage {
    pub fn new(xid: u32, body: OfBody) -> OfMessage {
        OfMessage { xid, body }
    }

    pub fn hello(xid: u32) -> OfMessage {
        OfMessage::new(xid, OfBody::Hello(Vec::new()))
    }

    pub fn msg_type(&self) -> u8 {
        match &self.body {
            OfBody::Hello(_) => MsgType::Hello as u8,
            OfBody::Error { .. } => MsgType::Error as u8,
            OfBody::EchoRequest(_) => MsgType::EchoRequest as u8,
            OfBody::EchoReply(_) => MsgType::EchoReply as u8,
            OfBody::FeaturesRequest => MsgType::FeaturesRequest as u8,
            OfBody::FeaturesReply(_) => MsgType::FeaturesReply as u8,
            OfBody::PacketIn(_) => MsgType::PacketIn as u8,
            OfBody::PacketOut(_) => MsgType::PacketOut as u8,
            OfBody::FlowMod(_) => MsgType::FlowMod as u8,
            OfBody::Passthrough { msg_type, .. } => *msg_type,
        }
    }

    pub fn kind(&self) -> Option<MsgType> {
        MsgType::from_code(self.msg_type())
    }

    pub fn header(&self) -> Result<OfHeader, WireError> {
        let len = HEADER_LEN + body_len(&self.body);
        let length = u16::try_from(len)
            .map_err(|_| WireError::InvariantViolation(format!("message length {len} exceeds 65535")))?;
        Ok(OfHeader { version: OFP_VERSION, msg_type: self.msg_type(), length, xid: self.xid })
    }
}

fn match_oxm_len(m: &MatchFields) -> usize {
    let mut n = 0;
    if m.in_port.is_some() {
        n += 4 + 4;
    }
    if m.eth_dst.is_some() {
        n += 4 + 6;
    }
    if m.eth_src.is_some() {
        n += 4 + 6;
    }
    if m.ipv4_src.is_some() || m.ipv4_dst.is_some() {
        n += 4 + 2;
    }
    for p in [m.ipv4_src, m.ipv4_dst].into_iter().flatten() {
        n += if p.len >= 32 { 4 + 4 } else { 4 + 8 };
    }
    n
}

/// Padded on-wire size of an `ofp_match`.
fn match_wire_len(m: &MatchFields) -> usize {
    let raw = 4 + match_oxm_len(m);
    raw.div_ceil(8) * 8
}

fn actions_len(actions: &[Action]) -> usize {
    actions.len() * 16
}

fn body_len(body: &OfBody) -> usize {
    match body {
        OfBody::Hello(d) | OfBody::EchoRequest(d) | OfBody::EchoReply(d) => d.len(),
        OfBody::Error { data, .. } => 4 + data.len(),
        OfBody::FeaturesRequest => 0,
        OfBody::FeaturesReply(_) => 24,
        OfBody::PacketIn(p) => 16 + match_wire_len(&in_port_match(p.in_port)) + 2 + p.frame.len(),
        OfBody::PacketOut(p) => 16 + actions_len(&p.actions) + p.data.len(),
        OfBody::FlowMod(f) => {
            let inst = if f.actions.is_empty() { 0 } else { 8 + actions_len(&f.actions) };
            40 + match_wire_len(&f.matches) + inst
        }
        OfBody::Passthrough { payload, .. } => payload.len(),
    }
}

fn in_port_match(port: u32) -> MatchFields {
    MatchFields { in_port: Some(port), ..Default::default() }
}

fn put_oxm(out: &mut Vec<u8>, field: u8, has_mask: bool, value: &[u8]) {
    out.extend_from_slice(&OXM_CLASS_BASIC.to_be_bytes());
    out.push((field << 1) | u8::from(has_mask));
    out.push(value.len() as u8);
    out.extend_from_slice(value);
}

fn put_match(out: &mut Vec<u8>, m: &MatchFields) {
    let start = out.len();
    let raw_len = 4 + match_oxm_len(m);
    out.extend_from_slice(&OFPMT_OXM.to_be_bytes());
    out.extend_from_slice(&(raw_len as u16).to_be_bytes());
    if let Some(p) = m.in_port {
        put_oxm(out, OXM_IN_PORT, false, &p.to_be_bytes());
    }
    if let Some(mac) = m.eth_dst {
        put_oxm(out, OXM_ETH_DST, false, &mac.0);
    }
    if let Some(mac) = m.eth_src {
        put_oxm(out, OXM_ETH_SRC, false, &mac.0);
    }
    if m.ipv4_src.is_some() || m.ipv4_dst.is_some() {
        put_oxm(out, OXM_ETH_TYPE, false, &ETH_TYPE_IPV4.to_be_bytes());
    }
    for (field, p) in [(OXM_IPV4_SRC, m.ipv4_src), (OXM_IPV4_DST, m.ipv4_dst)] {
        if let Some(p) = p {
            if p.len >= 32 {
                put_oxm(out, field, false, &p.addr.octets());
            } else {
                let mut v = p.addr.octets().to_vec();
                v.extend_from_slice(&p.mask().to_be_bytes());
                put_oxm(out, field, true, &v);
            }
        }
    }
    let padded = match_wire_len(m);
    out.resize(start + padded, 0);
}

fn put_actions(out: &mut Vec<u8>, actions: &[Action]) {
    for a in actions {
        match a {
            Action::Output(port) => {
                out.extend_from_slice(&OFPAT_OUTPUT.to_be_bytes());
                out.extend_from_slice(&16u16.to_be_bytes());
                out.extend_from_slice(&port.to_be_bytes());
                out.extend_from_slice(&OFPCML_NO_BUFFER.to_be_bytes());
                out.extend_from_slice(&[0u8; 6]);
            }
        }
    }
}

/// Encodes `msg` as header followed by body.
pub fn encode(msg: &OfMessage) -> Result<Vec<u8>, WireError> {
    let header = msg.header()?;
    match &msg.body {
        OfBody::PacketIn(p) if p.frame.is_empty() => {
            return Err(WireError::InvariantViolation("PacketIn with empty frame".into()))
        }
        OfBody::PacketIn(p) if p.frame.len() > usize::from(u16::MAX) => {
            return Err(WireError::InvariantViolation("PacketIn frame too long".into()))
        }
        OfBody::Passthrough { msg_type, .. } if MsgType::from_code(*msg_type).is_some() => {
            return Err(WireError::InvariantViolation(format!(
                "passthrough body carries supported type {msg_type}"
            )))
        }
        _ => {}
    }

    let mut out = Vec::with_capacity(usize::from(header.length));
    out.push(header.version);
    out.push(header.msg_type);
    out.extend_from_slice(&header.length.to_be_bytes());
    out.extend_from_slice(&header.xid.to_be_bytes());

    match &msg.body {
        OfBody::Hello(d) | OfBody::EchoRequest(d) | OfBody::EchoReply(d) => out.extend_from_slice(d),
        OfBody::Error { err_type, code, data } => {
            out.extend_from_slice(&err_type.to_be_bytes());
            out.extend_from_slice(&code.to_be_bytes());
            out.extend_from_slice(data);
        }
        OfBody::FeaturesRequest => {}
        OfBody::FeaturesReply(f) => {
            out.extend_from_slice(&f.datapath_id.to_be_bytes());
            out.extend_from_slice(&f.n_buffers.to_be_bytes());
            out.push(f.n_tables);
            out.push(f.auxiliary_id);
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&f.capabilities.to_be_bytes());
            out.extend_from_slice(&0u32.to_be_bytes());
        }
        OfBody::PacketIn(p) => {
            out.extend_from_slice(&p.buffer_id.to_be_bytes());
            out.extend_from_slice(&(p.frame.len() as u16).to_be_bytes());
            out.push(p.reason);
            out.push(p.table_id);
            out.extend_from_slice(&p.cookie.to_be_bytes());
            put_match(&mut out, &in_port_match(p.in_port));
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&p.frame);
        }
        OfBody::PacketOut(p) => {
            out.extend_from_slice(&p.buffer_id.to_be_bytes());
            out.extend_from_slice(&p.in_port.to_be_bytes());
            out.extend_from_slice(&(actions_len(&p.actions) as u16).to_be_bytes());
            out.extend_from_slice(&[0u8; 6]);
            put_actions(&mut out, &p.actions);
            out.extend_from_slice(&p.data);
        }
        OfBody::FlowMod(f) => {
            out.extend_from_slice(&f.cookie.to_be_bytes());
            out.extend_from_slice(&f.cookie_mask.to_be_bytes());
            out.push(f.table_id);
            out.push(f.command.code());
            out.extend_from_slice(&f.idle_timeout.to_be_bytes());
            out.extend_from_slice(&f.hard_timeout.to_be_bytes());
            out.extend_from_slice(&f.priority.to_be_bytes());
            out.extend_from_slice(&f.buffer_id.to_be_bytes());
            out.extend_from_slice(&f.out_port.to_be_bytes());
            out.extend_from_slice(&f.out_group.to_be_bytes());
            out.extend_from_slice(&f.flags.to_be_bytes());
            out.extend_from_slice(&[0, 0]);
            put_match(&mut out, &f.matches);
            if !f.actions.is_empty() {
                out.extend_from_slice(&OFPIT_APPLY_ACTIONS.to_be_bytes());
                out.extend_from_slice(&((8 + actions_len(&f.actions)) as u16).to_be_bytes());
                out.extend_from_slice(&[0u8; 4]);
                put_actions(&mut out, &f.actions);
            }
        }
        OfBody::Passthrough { payload, .. } => out.extend_from_slice(payload),
    }
    debug_assert_eq!(out.len(), usize::from(header.length));
    Ok(out)
}

/// Splits the first complete frame off `bytes` by header length alone.
/// Used by the proxy, which forwards raw frames without re-encoding.
pub fn split_frame(bytes: &[u8]) -> Result<(&[u8], &[u8]), WireError> {
    let header = match OfHeader::peek(bytes) {
        Some(h) => h,
        None => return Err(WireError::Incomplete { have: bytes.len(), need: HEADER_LEN }),
    };
    if header.version != OFP_VERSION {
        return malformed(format!("unsupported version {}", header.version));
    }
    let len = usize::from(header.length);
    if len < HEADER_LEN {
        return malformed(format!("header length {len} below minimum"));
    }
    if bytes.len() < len {
        return Err(WireError::Incomplete { have: bytes.len(), need: len });
    }
    Ok(bytes.split_at(len))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return malformed(format!("body truncated at offset {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_be_bytes(a))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn mask_to_prefix(mask: u32) -> Result<u8, WireError> {
    let ones = mask.leading_ones();
    if mask.checked_shl(ones).unwrap_or(0) != 0 {
        return malformed(format!("non-contiguous IPv4 mask {mask:#010x}"));
    }
    Ok(ones as u8)
}

fn get_match(r: &mut Reader<'_>) -> Result<MatchFields, WireError> {
    let mtype = r.u16()?;
    if mtype != OFPMT_OXM {
        return malformed(format!("unsupported match type {mtype}"));
    }
    let raw_len = usize::from(r.u16()?);
    if raw_len < 4 {
        return malformed("match length below 4");
    }
    let mut fields = Reader::new(r.take(raw_len - 4)?);
    let pad = raw_len.div_ceil(8) * 8 - raw_len;
    r.take(pad)?;

    let mut m = MatchFields::default();
    while fields.remaining() > 0 {
        let class = fields.u16()?;
        let fh = fields.u8()?;
        let len = usize::from(fields.u8()?);
        let value = fields.take(len)?;
        if class != OXM_CLASS_BASIC {
            return malformed(format!("unsupported OXM class {class:#06x}"));
        }
        let (field, has_mask) = (fh >> 1, fh & 1 == 1);
        let ipv4 = |value: &[u8]| -> Result<Ipv4Prefix, WireError> {
            match (has_mask, value.len()) {
                (false, 4) => Ok(Ipv4Prefix::host(Ipv4Addr::new(value[0], value[1], value[2], value[3]))),
                (true, 8) => {
                    let mask = u32::from_be_bytes([value[4], value[5], value[6], value[7]]);
                    Ok(Ipv4Prefix {
                        addr: Ipv4Addr::new(value[0], value[1], value[2], value[3]),
                        len: mask_to_prefix(mask)?,
                    })
                }
                _ => malformed("bad IPv4 OXM length"),
            }
        };
        let mac = |value: &[u8]| -> Result<MacAddr, WireError> {
            if has_mask || value.len() != 6 {
                return malformed("bad MAC OXM");
            }
            let mut a = [0u8; 6];
            a.copy_from_slice(value);
            Ok(MacAddr(a))
        };
        match field {
            OXM_IN_PORT if !has_mask && len == 4 => {
                m.in_port = Some(u32::from_be_bytes([value[0], value[1], value[2], value[3]]))
            }
            OXM_ETH_DST => m.eth_dst = Some(mac(value)?),
            OXM_ETH_SRC => m.eth_src = Some(mac(value)?),
            // prerequisite of the IPv4 fields, implied by them
            OXM_ETH_TYPE if len == 2 => {}
            OXM_IPV4_SRC => m.ipv4_src = Some(ipv4(value)?),
            OXM_IPV4_DST => m.ipv4_dst = Some(ipv4(value)?),
            other => return malformed(format!("unsupported OXM field {other}")),
        }
    }
    Ok(m)
}

fn get_actions(mut r: Reader<'_>) -> Result<Vec<Action>, WireError> {
    let mut actions = Vec::new();
    while r.remaining() > 0 {
        let atype = r.u16()?;
        let len = usize::from(r.u16()?);
        if len < 4 {
            return malformed("action length below 4");
        }
        let body = r.take(len - 4)?;
        match atype {
            OFPAT_OUTPUT if len == 16 => {
                actions.push(Action::Output(u32::from_be_bytes([body[0], body[1], body[2], body[3]])))
            }
            other => return malformed(format!("unsupported action type {other}")),
        }
    }
    Ok(actions)
}

fn decode_body(msg_type: u8, body: &[u8]) -> Result<OfBody, WireError> {
    let Some(kind) = MsgType::from_code(msg_type) else {
        return Ok(OfBody::Passthrough { msg_type, payload: body.to_vec() });
    };
    let mut r = Reader::new(body);
    let decoded = match kind {
        MsgType::Hello => OfBody::Hello(body.to_vec()),
        MsgType::EchoRequest => OfBody::EchoRequest(body.to_vec()),
        MsgType::EchoReply => OfBody::EchoReply(body.to_vec()),
        MsgType::FeaturesRequest => {
            if !body.is_empty() {
                return malformed("FeaturesRequest with body");
            }
            OfBody::FeaturesRequest
        }
        MsgType::Error => {
            let err_type = r.u16()?;
            let code = r.u16()?;
            OfBody::Error { err_type, code, data: r.rest().to_vec() }
        }
        MsgType::FeaturesReply => {
            let datapath_id = r.u64()?;
            let n_buffers = r.u32()?;
            let n_tables = r.u8()?;
            let auxiliary_id = r.u8()?;
            r.take(2)?;
            let capabilities = r.u32()?;
            r.u32()?;
            OfBody::FeaturesReply(SwitchFeatures { datapath_id, n_buffers, n_tables, auxiliary_id, capabilities })
        }
        MsgType::PacketIn => {
            let buffer_id = r.u32()?;
            let total_len = usize::from(r.u16()?);
            let reason = r.u8()?;
            let table_id = r.u8()?;
            let cookie = r.u64()?;
            let m = get_match(&mut r)?;
            r.take(2)?;
            let frame = r.rest().to_vec();
            if frame.is_empty() || frame.len() != total_len {
                return malformed("PacketIn frame length mismatch");
            }
            let in_port = m.in_port.ok_or_else(|| WireError::Malformed("PacketIn without in_port".into()))?;
            OfBody::PacketIn(PacketIn { buffer_id, reason, table_id, cookie, in_port, frame })
        }
        MsgType::PacketOut => {
            let buffer_id = r.u32()?;
            let in_port = r.u32()?;
            let alen = usize::from(r.u16()?);
            r.take(6)?;
            let actions = get_actions(Reader::new(r.take(alen)?))?;
            OfBody::PacketOut(PacketOut { buffer_id, in_port, actions, data: r.rest().to_vec() })
        }
        MsgType::FlowMod => {
            let cookie = r.u64()?;
            let cookie_mask = r.u64()?;
            let table_id = r.u8()?;
            let command = FlowModCommand::from_code(r.u8()?)
                .ok_or_else(|| WireError::Malformed("unknown flow_mod command".into()))?;
            let idle_timeout = r.u16()?;
            let hard_timeout = r.u16()?;
            let priority = r.u16()?;
            let buffer_id = r.u32()?;
            let out_port = r.u32()?;
            let out_group = r.u32()?;
            let flags = r.u16()?;
            r.take(2)?;
            let matches = get_match(&mut r)?;
            let mut actions = Vec::new();
            while r.remaining() > 0 {
                let itype = r.u16()?;
                let ilen = usize::from(r.u16()?);
                if itype != OFPIT_APPLY_ACTIONS || ilen < 8 {
                    return malformed(format!("unsupported instruction {itype}"));
                }
                r.take(4)?;
                actions.extend(get_actions(Reader::new(r.take(ilen - 8)?))?);
            }
            OfBody::FlowMod(FlowMod {
                cookie,
                cookie_mask,
                table_id,
                command,
                idle_timeout,
                hard_timeout,
                priority,
                buffer_id,
                out_port,
                out_group,
                flags,
                matches,
                actions,
            })
        }
    };
    Ok(decoded)
}

/// Decodes one message from the front of `bytes`, returning the rest.
pub fn decode(bytes: &[u8]) -> Result<(OfMessage, &[u8]), WireError> {
    let (frame, rest) = split_frame(bytes)?;
    let header = OfHeader::peek(frame).expect("split_frame checked the header");
    let body = decode_body(header.msg_type, &frame[HEADER_LEN..])?;
    Ok((OfMessage { xid: header.xid, body }, rest))
}

/// Decodes every complete message in `bytes`; returns them plus the
/// unconsumed tail (a partial message, possibly empty).
pub fn decode_all(mut bytes: &[u8]) -> Result<(Vec<OfMessage>, &[u8]), WireError> {
    let mut out = Vec::new();
    loop {
        match decode(bytes) {
            Ok((m, rest)) => {
                out.push(m);
                bytes = rest;
            }
            Err(WireError::Incomplete { .. }) => return Ok((out, bytes)),
            Err(e) => return Err(e),
        }
    }
}

/// Accumulates a TCP byte stream and yields whole raw frames.
#[derive(Debug, Default, Clone)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Pops the next complete raw frame, if any.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, WireError> {
        match split_frame(&self.buf) {
            Ok((frame, _)) => {
                let n = frame.len();
                Ok(Some(self.buf.drain(..n).collect()))
            }
            Err(WireError::Incomplete { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_is_eight_bytes() {
        let bytes = encode(&OfMessage::hello(1)).unwrap();
        assert_eq!(bytes, vec![4, 0, 0, 8, 0, 0, 0, 1]);
    }

    #[test]
    fn empty_echo_is_header_only() {
        let bytes = encode(&OfMessage::new(0, OfBody::EchoRequest(vec![]))).unwrap();
        assert_eq!(u16::from_be_bytes([bytes[2], bytes[3]]), 8);
        assert_eq!(bytes.len(), 8);
    }

    #[test]
    fn short_input_is_incomplete() {
        assert!(matches!(decode(&[4, 0, 0, 8]), Err(WireError::Incomplete { .. })));
        assert!(matches!(decode(&[4, 0, 0, 16, 0, 0, 0, 1]), Err(WireError::Incomplete { need: 16, .. })));
    }

    #[test]
    fn bad_version_and_length_are_malformed() {
        assert!(matches!(decode(&[1, 0, 0, 8, 0, 0, 0, 1]), Err(WireError::Malformed(_))));
        assert!(matches!(decode(&[4, 0, 0, 7, 0, 0, 0, 1]), Err(WireError::Malformed(_))));
    }

    #[test]
    fn unknown_type_is_passthrough() {
        let mut bytes = vec![4, 18, 0, 16, 0, 0, 0, 9];
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8]);
        bytes.extend_from_slice(&[0xaa, 0xbb]);
        let (m, rest) = decode(&bytes).unwrap();
        assert_eq!(rest, &[0xaa, 0xbb]);
        assert_eq!(m.body, OfBody::Passthrough { msg_type: 18, payload: vec![1, 2, 3, 4, 5, 6, 7, 8] });
        assert_eq!(encode(&m).unwrap(), bytes[..16].to_vec());
    }

    #[test]
    fn empty_packet_in_is_rejected() {
        let m = OfMessage::new(
            3,
            OfBody::PacketIn(PacketIn { buffer_id: 1, reason: 0, table_id: 0, cookie: 0, in_port: 1, frame: vec![] }),
        );
        assert!(matches!(encode(&m), Err(WireError::InvariantViolation(_))));
    }

    #[test]
    fn passthrough_with_supported_type_is_rejected() {
        let m = OfMessage::new(1, OfBody::Passthrough { msg_type: 0, payload: vec![] });
        assert!(matches!(encode(&m), Err(WireError::InvariantViolation(_))));
    }

    #[test]
    fn flow_mod_round_trip_with_prefix() {
        let fm = FlowMod::add(
            MatchFields {
                in_port: Some(3),
                ipv4_src: Some(Ipv4Prefix { addr: Ipv4Addr::new(10, 0, 0, 0), len: 24 }),
                ipv4_dst: Some(Ipv4Prefix::host(Ipv4Addr::new(10, 0, 0, 9))),
                ..Default::default()
            },
            1000,
            vec![],
        )
        .with_idle_timeout(30);
        let m = OfMessage::new(77, OfBody::FlowMod(fm));
        let bytes = encode(&m).unwrap();
        assert_eq!(bytes.len() % 8, 0);
        let (back, rest) = decode(&bytes).unwrap();
        assert!(rest.is_empty());
        assert_eq!(back, m);
    }

    #[test]
    fn features_reply_layout() {
        let m = OfMessage::new(
            2,
            OfBody::FeaturesReply(SwitchFeatures {
                datapath_id: 0x0102030405060708,
                n_buffers: 256,
                n_tables: 254,
                auxiliary_id: 0,
                capabilities: 0x4f,
            }),
        );
        let bytes = encode(&m).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[8..16], &[1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn frame_buffer_reassembles_chunks() {
        let a = encode(&OfMessage::hello(1)).unwrap();
        let b = encode(&OfMessage::new(2, OfBody::EchoRequest(vec![9; 5]))).unwrap();
        let all: Vec<u8> = a.iter().chain(b.iter()).copied().collect();
        let mut fb = FrameBuffer::new();
        let mut frames = Vec::new();
        for chunk in all.chunks(3) {
            fb.push(chunk);
            while let Some(f) = fb.next_frame().unwrap() {
                frames.push(f);
            }
        }
        assert_eq!(frames, vec![a, b]);
        assert_eq!(fb.pending(), 0);
    }
}
