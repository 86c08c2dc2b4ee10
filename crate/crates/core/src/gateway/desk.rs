//! The live simulation behind the API. One thread owns the `World`; handlers
//! read published snapshots and send writes as commands.

use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::{oneshot, watch};

use super::bus::EventBus;
use crate::chain::{Block, ChainHead, ElementId, Hash32, RegistrationRecord, TxRecord};
use crate::intent::{IntentEntry, IntentError, IntentId, IntentRequest};
use crate::sched::{Micros, MS};
use crate::simnet::{DefenseMode, ScenarioEvent, ScenarioSpec, TimedEvent, TopologySpec, World};

#[derive(Debug, Clone)]
pub struct DeskConfig {
    pub scenario: ScenarioSpec,
    /// Virtual seconds per wall second; 0 advances only on `advance`.
    pub speed: f64,
    pub step_us: Micros,
    pub ring: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig { scenario: desk_scenario(0), speed: 1.0, step_us: 100 * MS, ring: super::bus::DEFAULT_RING }
    }
}

/// Default topology with background traffic and automatic defense, running
/// for a day of virtual time.
pub fn desk_scenario(seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        name: "desk".into(),
        events: vec![TimedEvent { at_ms: 1000, event: ScenarioEvent::StartTraffic { pairs: 5, fps: 10.0, frame_size: 512 } }],
        duration_ms: 24 * 3600 * 1000,
        ..ScenarioSpec::ddos_basic(DefenseMode::Auto, seed)
    }
}

/// Committed blocks with a tx-hash index, shared copy-on-write.
#[derive(Debug, Clone, Default)]
pub struct ChainView {
    blocks: Vec<Arc<Block>>,
    index: HashMap<Hash32, (u64, usize)>,
}

impl ChainView {
    fn extend(&mut self, chain: &[Arc<Block>]) {
        for b in chain.iter().skip(self.blocks.len()) {
            for (i, tx) in b.body.iter().enumerate() {
                self.index.insert(tx.tx_hash, (b.height, i));
            }
            self.blocks.push(b.clone());
        }
    }

    pub fn block(&self, height: u64) -> Option<&Arc<Block>> {
        self.blocks.get(height as usize)
    }

    pub fn tx(&self, hash: &Hash32) -> Option<TxRecord> {
        let &(h, i) = self.index.get(hash)?;
        Some(TxRecord { block_height: h, tx: self.blocks[h as usize].body[i].clone() })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// State published at event boundaries.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub now_us: Micros,
    pub head: ChainHead,
    pub registry: Vec<RegistrationRecord>,
    pub mapping: BTreeMap<ElementId, ElementId>,
    pub topology: Arc<TopologySpec>,
    pub intents: BTreeMap<IntentId, IntentEntry>,
    pub chain: Arc<ChainView>,
}

enum Command {
    Submit(IntentRequest, oneshot::Sender<Result<IntentId, IntentError>>),
    Evict(ElementId, oneshot::Sender<Result<(), String>>),
    Remap(ElementId, ElementId, oneshot::Sender<Result<(), String>>),
    Advance(Micros, oneshot::Sender<Micros>),
}

#[derive(Debug, thiserror::Error)]
pub enum DeskError {
    #[error("simulation stopped")]
    Stopped,
    #[error(transparent)]
    Scenario(#[from] crate::simnet::ScenarioError),
}

#[derive(Clone)]
pub struct DeskHandle {
    cmds: mpsc::Sender<Command>,
    snap: watch::Receiver<Arc<Snapshot>>,
    bus: EventBus,
}

impl DeskHandle {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snap.borrow().clone()
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, DeskError> {
        let (tx, rx) = oneshot::channel();
        self.cmds.send(make(tx)).map_err(|_| DeskError::Stopped)?;
        rx.await.map_err(|_| DeskError::Stopped)
    }

    pub async fn submit(&self, req: IntentRequest) -> Result<Result<IntentId, IntentError>, DeskError> {
        self.ask(|tx| Command::Submit(req, tx)).await
    }

    pub async fn evict(&self, element: ElementId) -> Result<Result<(), String>, DeskError> {
        self.ask(|tx| Command::Evict(element, tx)).await
    }

    pub async fn remap(&self, switch: ElementId, controller: ElementId) -> Result<Result<(), String>, DeskError> {
        self.ask(|tx| Command::Remap(switch, controller, tx)).await
    }

    /// Advances virtual time by `us`; returns the new time.
    pub async fn advance(&self, us: Micros) -> Result<Micros, DeskError> {
        self.ask(|tx| Command::Advance(us, tx)).await
    }
}

struct Owner {
    world: World,
    bus: EventBus,
    cursor: usize,
    chain: Arc<ChainView>,
    topology: Arc<TopologySpec>,
    snap: watch::Sender<Arc<Snapshot>>,
}

impl Owner {
    fn publish(&mut self) {
        for r in &self.world.log()[self.cursor..] {
            self.bus.publish(r.kind, r.payload.clone(), r.timestamp_us);
        }
        self.cursor = self.world.log().len();
        let ledger = self.world.ledger();
        if ledger.chain().len() != self.chain.len() {
            Arc::make_mut(&mut self.chain).extend(ledger.chain());
        }
        let snap = Snapshot {
            now_us: self.world.now(),
            head: ledger.chain_head(),
            registry: ledger.registry_view(),
            mapping: self.world.middleware().mapping().clone(),
            topology: self.topology.clone(),
            intents: self.world.engine().intents().map(|e| (e.intent.intent_id, e.clone())).collect(),
            chain: self.chain.clone(),
        };
        let _ = self.snap.send(Arc::new(snap));
    }

    // Replies go out after the publish so a caller never reads a stale snapshot.
    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Submit(req, tx) => {
                let r = self.world.submit_intent(req);
                self.publish();
                let _ = tx.send(r);
            }
            Command::Evict(e, tx) => {
                let r = self.world.evict(&e);
                self.publish();
                let _ = tx.send(r);
            }
            Command::Remap(s, c, tx) => {
                let r = self.world.remap(&s, &c);
                self.publish();
                let _ = tx.send(r);
            }
            Command::Advance(us, tx) => {
                let t = self.world.now() + us;
                self.world.run_until(t);
                self.publish();
                let _ = tx.send(self.world.now());
            }
        }
    }
}

/// Starts the owner thread.
pub fn start(cfg: DeskConfig) -> Result<DeskHandle, DeskError> {
    cfg.scenario.validate()?;
    let bus = EventBus::new(cfg.ring);
    let (cmd_tx, cmd_rx) = mpsc::channel::<Command>();
    let (ready_tx, ready_rx) = mpsc::channel();
    let owner_bus = bus.clone();
    std::thread::Builder::new()
        .name("ledgernet-desk".into())
        .spawn(move || {
            let world = match World::new(cfg.scenario.clone()) {
                Ok(w) => w,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            let topology = Arc::new(world.topology().clone());
            let placeholder = Arc::new(Snapshot {
                now_us: 0,
                head: world.ledger().chain_head(),
                registry: Vec::new(),
                mapping: BTreeMap::new(),
                topology: topology.clone(),
                intents: BTreeMap::new(),
                chain: Arc::default(),
            });
            let (snap_tx, snap_rx) = watch::channel(placeholder);
            let mut owner = Owner { world, bus: owner_bus, cursor: 0, chain: Arc::default(), topology, snap: snap_tx };
            owner.publish();
            let _ = ready_tx.send(Ok(snap_rx));
            run_owner(&mut owner, &cfg, cmd_rx);
        })
        .expect("spawn desk thread");
    let snap = ready_rx.recv().map_err(|_| DeskError::Stopped)??;
    Ok(DeskHandle { cmds: cmd_tx, snap, bus })
}

fn run_owner(owner: &mut Owner, cfg: &DeskConfig, cmds: mpsc::Receiver<Command>) {
    let paced = cfg.speed > 0.0;
    let step_wall = if paced { Duration::from_secs_f64(cfg.step_us as f64 / 1e6 / cfg.speed) } else { Duration::from_secs(3600) };
    let mut next = Instant::now() + step_wall;
    loop {
        let wait = next.saturating_duration_since(Instant::now());
        match cmds.recv_timeout(wait) {
            Ok(cmd) => owner.handle(cmd),
            Err(mpsc::RecvTimeoutError::Disconnected) => return,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                next += step_wall;
                if paced && !owner.world.is_finished() {
                    let t = owner.world.now() + cfg.step_us;
                    owner.world.run_until(t);
                    owner.publish();
                }
            }
        }
    }
}
