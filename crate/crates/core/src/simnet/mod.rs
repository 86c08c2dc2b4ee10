//! Deterministic discrete-event network: switches with flow tables and
//! packet buffers, learning controllers, hosts, background and attack
//! traffic, all wired through the middleware and the ledger.

mod controller;
mod flowtable;
mod frame;
mod scenario;
mod switch;
mod topology;
mod traffic;
mod world;

pub use controller::{ControllerConfig, ControllerStats, CtrlOut, Job, SimController, FORWARD_IDLE_S, FORWARD_PRIORITY};
pub use flowtable::{matches, FlowEntry, FlowTable};
pub use frame::{Frame, BROADCAST};
pub use scenario::{DefenseMode, ScenarioError, ScenarioEvent, ScenarioSpec, TimedEvent, SCHEMA_VERSION};
pub use switch::{DropReason, SimSwitch, SwitchOut, SwitchStats};
pub use topology::{
    HostSpec, LinkSpec, PortPeer, PortRef, SwitchSpec, TopologyError, TopologySpec, HOST_PORT_BASE, TRUNK_PORT_BASE,
};
pub use traffic::{background_pairs, spoofed_pool, AttackPlan, AttackStream};
pub use world::{
    host_link, run, Accounting, EventKind, LogRecord, Net, RunOutput, RunSummary, World, ANNOUNCE_AT_US, ANNOUNCE_PERIOD_US, CTRL_HOP_US, DATA_HOP_US,
    TICK_US,
};
