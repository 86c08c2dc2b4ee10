//! Intent engine: lifecycle, translation into policies, provisioning and
//! closed-loop validation with the escalating defense ladder.

mod engine;
mod stage;
mod translate;
mod types;

pub use engine::{EngineConfig, Incident, IntentEngine, IntentEntry, Plant};
pub use stage::PlanStage;
pub use translate::{affected_paths, path_flows, schedule, translate, NetView, Schedule, PATH_PRIORITY};
pub use types::*;

#[cfg(test)]
mod tests;
