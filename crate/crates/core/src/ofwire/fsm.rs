//! Per-session handshake and echo keepalive state machine.
//!
//! The machine is sans-IO: feed it [`FsmEvent`]s and act on the returned
//! [`FsmAction`]s. Messages it originates use xids from the reserved range
//! starting at [`RESERVED_XID_BASE`], so a proxy can tell its own traffic
//! apart from the endpoints'.

use serde::{Deserialize, Serialize};

use super::codec::{OfBody, OfMessage, SwitchFeatures};

pub const RESERVED_XID_BASE: u32 = 0xf000_0000;
pub const DEFAULT_ECHO_INTERVAL_US: u64 = 5_000_000;
pub const MAX_MISSED_ECHOES: u32 = 3;

const OFPET_HELLO_FAILED: u16 = 0;
const OFPHFC_INCOMPATIBLE: u16 = 0;

pub fn is_reserved_xid(xid: u32) -> bool {
    xid >= RESERVED_XID_BASE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SessionState {
    AwaitHello,
    AwaitFeatures,
    Established,
    Disconnected,
}

/// Who sits on the other end of the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeerRole {
    Controller,
    Switch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FsmEvent {
    Received(OfMessage),
    /// Virtual or wall time in microseconds.
    TimerTick(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FsmAction {
    Send(OfMessage),
    /// Not consumed by the machine; the owner decides what to do with it.
    Deliver(OfMessage),
    Disconnect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionFsm {
    state: SessionState,
    peer_role: PeerRole,
    echo_interval_us: u64,
    clock_us: u64,
    last_echo_sent_us: Option<u64>,
    outstanding_echo: Option<u32>,
    missed_echoes: u32,
    next_xid: u32,
    features: Option<SwitchFeatures>,
}

impl SessionFsm {
    pub fn new(peer_role: PeerRole) -> Self {
        Self::with_interval(peer_role, DEFAULT_ECHO_INTERVAL_US)
    }

    pub fn with_interval(peer_role: PeerRole, echo_interval_us: u64) -> Self {
        SessionFsm {
            state: SessionState::AwaitHello,
            peer_role,
            echo_interval_us,
            clock_us: 0,
            last_echo_sent_us: None,
            outstanding_echo: None,
            missed_echoes: 0,
            next_xid: RESERVED_XID_BASE,
            features: None,
        }
    }

    /// Sets the clock without emitting anything; used when a session is
    /// created mid-run.
    pub fn at(mut self, now_us: u64) -> Self {
        self.clock_us = now_us;
        self
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn peer_role(&self) -> PeerRole {
        self.peer_role
    }

    pub fn missed_echoes(&self) -> u32 {
        self.missed_echoes
    }

    pub fn echo_interval_us(&self) -> u64 {
        self.echo_interval_us
    }

    pub fn last_echo_sent_us(&self) -> Option<u64> {
        self.last_echo_sent_us
    }

    /// Features learned from a switch peer's FeaturesReply.
    pub fn features(&self) -> Option<&SwitchFeatures> {
        self.features.as_ref()
    }

    pub fn is_established(&self) -> bool {
        self.state == SessionState::Established
    }

    /// Allocates an xid from the reserved range.
    pub fn alloc_xid(&mut self) -> u32 {
        let x = self.next_xid;
        self.next_xid = self.next_xid.wrapping_add(1).max(RESERVED_XID_BASE);
        x
    }

    /// Forces the session down, e.g. on eviction.
    pub fn close(&mut self) {
        self.state = SessionState::Disconnected;
    }

    pub fn step(&mut self, event: FsmEvent) -> Vec<FsmAction> {
        if self.state == SessionState::Disconnected {
            return Vec::new();
        }
        match event {
            FsmEvent::TimerTick(now) => self.on_tick(now),
            FsmEvent::Received(msg) => self.on_message(msg),
        }
    }

    fn establish(&mut self, out: &mut Vec<FsmAction>) {
        self.state = SessionState::Established;
        self.send_echo(out);
    }

    fn send_echo(&mut self, out: &mut Vec<FsmAction>) {
        let xid = self.alloc_xid();
        self.outstanding_echo = Some(xid);
        self.last_echo_sent_us = Some(self.clock_us);
        out.push(FsmAction::Send(OfMessage::new(xid, OfBody::EchoRequest(Vec::new()))));
    }

    fn on_tick(&mut self, now: u64) -> Vec<FsmAction> {
        self.clock_us = self.clock_us.max(now);
        let mut out = Vec::new();
        if self.state != SessionState::Established {
            return out;
        }
        let due = match self.last_echo_sent_us {
            Some(t) => t + self.echo_interval_us,
            None => self.clock_us,
        };
        if self.clock_us < due {
            return out;
        }
        if self.outstanding_echo.is_some() {
            self.missed_echoes += 1;
            if self.missed_echoes >= MAX_MISSED_ECHOES {
                self.state = SessionState::Disconnected;
                out.push(FsmAction::Disconnect);
                return out;
            }
        }
        self.send_echo(&mut out);
        out
    }

    fn on_message(&mut self, msg: OfMessage) -> Vec<FsmAction> {
        let mut out = Vec::new();
        match (&msg.body, self.state) {
            (OfBody::EchoRequest(data), _) => {
                out.push(FsmAction::Send(OfMessage::new(msg.xid, OfBody::EchoReply(data.clone()))));
            }
            (OfBody::EchoReply(_), _) if self.outstanding_echo == Some(msg.xid) => {
                self.outstanding_echo = None;
                self.missed_echoes = 0;
            }
            (OfBody::Hello(_), SessionState::AwaitHello) => match self.peer_role {
                PeerRole::Switch => {
                    let hello = self.alloc_xid();
                    let feat = self.alloc_xid();
                    out.push(FsmAction::Send(OfMessage::hello(hello)));
                    out.push(FsmAction::Send(OfMessage::new(feat, OfBody::FeaturesRequest)));
                    self.state = SessionState::AwaitFeatures;
                }
                // Our own Hello toward a controller is sent by the owner when
                // the channel opens.
                PeerRole::Controller => self.establish(&mut out),
            },
            (_, SessionState::AwaitHello) => {
                out.push(FsmAction::Send(OfMessage::new(
                    msg.xid,
                    OfBody::Error { err_type: OFPET_HELLO_FAILED, code: OFPHFC_INCOMPATIBLE, data: Vec::new() },
                )));
                out.push(FsmAction::Disconnect);
                self.state = SessionState::Disconnected;
            }
            (OfBody::FeaturesReply(f), SessionState::AwaitFeatures) => {
                self.features = Some(f.clone());
                self.establish(&mut out);
            }
            (OfBody::Error { .. }, SessionState::AwaitFeatures) => {
                out.push(FsmAction::Disconnect);
                self.state = SessionState::Disconnected;
            }
            _ => out.push(FsmAction::Deliver(msg)),
        }
        out
    }
}
