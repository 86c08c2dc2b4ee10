//! OpenFlow 1.3 subset: codec, session state machine and capture records.

pub mod capture;
pub mod codec;
pub mod fsm;

pub use capture::{CaptureRecord, Direction};
pub use codec::{
    decode, decode_all, encode, split_frame, Action, FlowMod, FlowModCommand, FrameBuffer, Ipv4Prefix,
    MacAddr, MatchFields, MsgType, OfBody, OfHeader, OfMessage, PacketIn, PacketOut, SwitchFeatures,
    WireError, OFPP_ANY, OFPP_CONTROLLER, OFPP_FLOOD, OFP_NO_BUFFER, OFP_VERSION,
};
pub use fsm::{is_reserved_xid, FsmAction, FsmEvent, PeerRole, SessionFsm, SessionState, RESERVED_XID_BASE};
