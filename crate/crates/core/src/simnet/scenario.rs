use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::controller::ControllerConfig;
use super::topology::{TopologyError, TopologySpec};
use crate::chain::ConsensusConfig;
use crate::guard::GuardConfig;
use crate::intent::{IntentRequest, Preference, Verb};
use crate::middleware::CapturePolicy;
use crate::sched::{Micros, MS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseMode {
    #[default]
    None,
    /// Guard-triggered defense through the intent engine and middleware.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioEvent {
    StartTraffic {
        #[serde(default = "default_pairs")]
        pairs: usize,
        #[serde(default = "default_fps")]
        fps: f64,
        #[serde(default = "default_bg_size")]
        frame_size: u32,
    },
    StartDdos {
        /// Host names.
        victims: Vec<String>,
        /// Host names; defaults to the last host not a victim.
        #[serde(default)]
        attackers: Vec<String>,
        #[serde(default = "default_spoofed")]
        spoofed_source_count: usize,
        /// Frames per second per victim.
        rate: f64,
        #[serde(default = "default_attack_size")]
        frame_size: u32,
    },
    StopAttack,
    SubmitIntent(IntentRequest),
    Evict { element: String },
    Remap { switch: String, controller: String },
}

fn default_pairs() -> usize {
    5
}
fn default_fps() -> f64 {
    10.0
}
fn default_bg_size() -> u32 {
    512
}
fn default_spoofed() -> usize {
    64
}
fn default_attack_size() -> u32 {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: ScenarioEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "schema_version")]
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub topology: TopologySpec,
    #[serde(default = "default_chain")]
    pub blockchain: ConsensusConfig,
    #[serde(default = "default_controllers")]
    pub controllers: Vec<String>,
    #[serde(default = "default_capture")]
    pub capture: CapturePolicy,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub guard: GuardConfig,
    pub events: Vec<TimedEvent>,
    pub duration_ms: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub defense: DefenseMode,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_chain() -> ConsensusConfig {
    ConsensusConfig::pbft(4, 10 * MS)
}

fn default_controllers() -> Vec<String> {
    vec!["C1".into()]
}

fn default_capture() -> CapturePolicy {
    CapturePolicy::Sampled { k: 100 }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("unsupported schema version {0}")]
    Version(u32),
    #[error("event at {at_ms} ms is past the {duration_ms} ms duration")]
    EventAfterEnd { at_ms: u64, duration_ms: u64 },
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("consensus: {0}")]
    Consensus(String),
    #[error("ledger: {0}")]
    Ledger(String),
    #[error("no controllers")]
    NoControllers,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
        let s: ScenarioSpec = serde_json::from_slice(&std::fs::read(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn duration_us(&self) -> Micros {
        self.duration_ms * MS
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCHEMA_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        self.topology.validate()?;
        self.blockchain.validate().map_err(|e| ScenarioError::Consensus(e.to_string()))?;
        if self.controllers.is_empty() {
            return Err(ScenarioError::NoControllers);
        }
        for e in &self.events {
            if e.at_ms > self.duration_ms {
                return Err(ScenarioError::EventAfterEnd { at_ms: e.at_ms, duration_ms: self.duration_ms });
            }
            if let ScenarioEvent::StartDdos { victims, attackers, .. } = &e.event {
                for h in victims.iter().chain(attackers) {
                    if self.topology.host(h).is_none() {
                        return Err(ScenarioError::UnknownHost(h.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Background traffic from 1 s, a two-victim
    /// flood from 2 s to the end.
    pub fn ddos_basic(defense: DefenseMode, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            version: SCHEMA_VERSION,
            name: "ddos_basic".into(),
            topology: TopologySpec::default(),
            blockchain: default_chain(),
            controllers: default_controllers(),
            capture: default_capture(),
            controller: ControllerConfig::default(),
            guard: GuardConfig::default(),
            events: vec![
                TimedEvent {
                    at_ms: 1000,
                    event: ScenarioEvent::StartTraffic { pairs: 5, fps: 10.0, frame_size: 512 },
                },
                TimedEvent {
                    at_ms: 2000,
                    event: ScenarioEvent::StartDdos {
                        victims: vec!["h9".into(), "h14".into()],
                        attackers: Vec::new(),
                        spoofed_source_count: 64,
                        rate: 500.0,
                        frame_size: 128,
                    },
                },
            ],
            duration_ms: 20_000,
            seed,
            defense,
        }
    }

    /// A protect intent on h9 under `preference`, then a single-victim
    /// flood from 2 s; long enough for the full ladder to settle.
    pub fn ladder(preference: Preference, seed: u64) -> ScenarioSpec {
        let name = match preference {
            Preference::MaxProtection => "max_protection",
            Preference::MaxPerformance => "max_performance",
            Preference::None => "protect_default",
        };
        ScenarioSpec {
            name: name.into(),
            events: vec![
                TimedEvent {
                    at_ms: 1000,
                    event: ScenarioEvent::StartTraffic { pairs: 5, fps: 10.0, frame_size: 512 },
                },
                TimedEvent {
                    at_ms: 1500,
                    event: ScenarioEvent::SubmitIntent(IntentRequest {
                        verb: Verb::ProtectService,
                        target: "10.0.0.9".into(),
                        preference,
                    }),
                },
                TimedEvent {
                    at_ms: 2000,
                    event: ScenarioEvent::StartDdos {
                        victims: vec!["h9".into()],
                        attackers: Vec::new(),
                        spoofed_source_count: 64,
                        rate: 500.0,
                        frame_size: 128,
                    },
                },
            ],
            duration_ms: 30_000,
            defense: DefenseMode::None,
            ..ScenarioSpec::ddos_basic(DefenseMode::None, seed)
        }
    }
}
