//! In-process virtual bus driving a set of replicas in virtual time.
//!
//! Each node is a single server: received messages queue behind each other
//! and pay `recv_cost_us`, and every destination of an outbound message pays
//! `send_cost_us` in sequence. Link delay is fixed per configuration plus a
//! seeded uniform jitter.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::replica::{ConfigError, ConsensusConfig, ConsensusMsg, Fault, NodeId, Note, Out, Replica, TimerKind};
use super::types::{Block, Transaction};
use crate::sched::{EventQueue, Micros};

#[derive(Debug)]
enum BusEvent {
    Deliver { to: NodeId, from: NodeId, msg: ConsensusMsg },
    Timer { node: NodeId, kind: TimerKind },
}

/// Milestones for one height, as observed across the cluster.
#[derive(Debug, Clone, Default)]
pub struct RoundTrace {
    pub view: u64,
    pub proposed_at: Option<Micros>,
    /// When the proposing primary collected its commit quorum.
    pub quorum_at: Option<Micros>,
    /// Per node, when the block was appended locally.
    pub applied_at: BTreeMap<NodeId, Micros>,
}

pub struct Cluster {
    cfg: Arc<ConsensusConfig>,
    replicas: Vec<Replica>,
    queue: EventQueue<BusEvent>,
    rng: ChaCha8Rng,
    busy_until: Vec<Micros>,
    rounds: BTreeMap<u64, RoundTrace>,
    messages: u64,
    rejected: u64,
    view_changes: u64,
}

impl Cluster {
    pub fn new(cfg: ConsensusConfig, seed: u64) -> Result<Self, ConfigError> {
        Self::with_faults(cfg, seed, BTreeMap::new())
    }

    pub fn with_faults(cfg: ConsensusConfig, seed: u64, faults: BTreeMap<NodeId, Fault>) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let cfg = Arc::new(cfg);
        let replicas = (0..cfg.n_nodes).map(|i| Replica::new(i, cfg.clone(), faults.get(&i).cloned())).collect();
        Ok(Cluster {
            busy_until: vec![0; cfg.n_nodes],
            cfg,
            replicas,
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            rounds: BTreeMap::new(),
            messages: 0,
            rejected: 0,
            view_changes: 0,
        })
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.cfg
    }

    pub fn now(&self) -> Micros {
        self.queue.now()
    }

    pub fn replica(&self, id: NodeId) -> &Replica {
        &self.replicas[id]
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn rounds(&self) -> &BTreeMap<u64, RoundTrace> {
        &self.rounds
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn view_changes(&self) -> u64 {
        self.view_changes
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    fn hop_delay(&mut self) -> Micros {
        let d = self.cfg.link_delay_us;
        let max_jitter = (d as f64 * self.cfg.jitter_frac) as Micros;
        if max_jitter == 0 {
            d
        } else {
            d + self.rng.gen_range(0..=max_jitter)
        }
    }

    /// Hands a client request to `entry` immediately and to every other node
    /// one hop later.
    pub fn submit(&mut self, tx: Transaction, entry: NodeId) {
        let tx = Arc::new(tx);
        let now = self.now();
        for node in 0..self.cfg.n_nodes {
            let at = if node == entry { now } else { now + self.hop_delay() };
            self.queue.schedule(at, BusEvent::Deliver { to: node, from: entry, msg: ConsensusMsg::Request(tx.clone()) });
        }
    }

    /// Processes every event up to and including `t`; the clock ends at `t`.
    pub fn run_until(&mut self, t: Micros) {
        while let Some((at, ev)) = self.queue.pop_until(t) {
            self.dispatch(at, ev);
        }
        self.queue.advance_to(t);
    }

    /// Runs until `done` holds or the clock passes `deadline`. Returns
    /// whether `done` was reached.
    pub fn run_while(&mut self, deadline: Micros, mut done: impl FnMut(&Cluster) -> bool) -> bool {
        loop {
            if done(self) {
                return true;
            }
            match self.queue.pop_until(deadline) {
                Some((at, ev)) => self.dispatch(at, ev),
                None => {
                    self.queue.advance_to(deadline);
                    return done(self);
                }
            }
        }
    }

    fn dispatch(&mut self, at: Micros, ev: BusEvent) {
        let (node, outs) = match ev {
            BusEvent::Deliver { to, from, msg } => {
                if self.replicas[to].is_crashed(at) {
                    return;
                }
                let start = at.max(self.busy_until[to]);
                let done = start + self.cfg.recv_cost_us;
                self.busy_until[to] = done;
                (to, (done, self.replicas[to].handle(from, msg, done)))
            }
            BusEvent::Timer { node, kind } => {
                if self.replicas[node].is_crashed(at) {
                    return;
                }
                let done = at.max(self.busy_until[node]);
                (node, (done, self.replicas[node].on_timer(kind, done)))
            }
        };
        let (done, outs) = outs;
        self.apply_outputs(node, done, outs);
    }

    fn apply_outputs(&mut self, node: NodeId, done: Micros, outs: Vec<Out>) {
        let mut clock = done;
        for out in outs {
            match out {
                Out::Send { to, msg } => {
                    for dst in to {
                        clock += self.cfg.send_cost_us;
                        let arrive = clock + self.hop_delay();
                        self.messages += 1;
                        self.queue.schedule(arrive, BusEvent::Deliver { to: dst, from: node, msg: msg.clone() });
                    }
                }
                Out::Timer { at, kind } => self.queue.schedule(at, BusEvent::Timer { node, kind }),
                Out::Note(note) => self.record(node, clock, note),
            }
        }
        self.busy_until[node] = self.busy_until[node].max(clock);
    }

    fn record(&mut self, node: NodeId, at: Micros, note: Note) {
        match note {
            Note::Proposed { height, view } => {
                let r = self.rounds.entry(height).or_default();
                if r.proposed_at.is_none() || view > r.view {
                    r.view = view;
                    r.proposed_at = Some(at);
                    r.quorum_at = None;
                }
            }
            Note::Committed { height, view } => {
                let r = self.rounds.entry(height).or_default();
                if node == self.cfg.primary(view) && r.view == view && r.quorum_at.is_none() {
                    r.quorum_at = Some(at);
                }
                r.applied_at.entry(node).or_insert(at);
            }
            Note::Applied { height } => {
                self.rounds.entry(height).or_default().applied_at.entry(node).or_insert(at);
            }
            Note::ViewEntered { .. } => self.view_changes += 1,
            Note::Rejected { .. } => self.rejected += 1,
        }
    }

    /// Committed block at `height` on every non-Byzantine replica that has
    /// one. Crashed replicas count: their chains must agree up to the crash.
    pub fn blocks_at(&self, height: u64) -> Vec<(NodeId, &Arc<Block>)> {
        self.replicas
            .iter()
            .filter(|r| r.fault() != Some(&Fault::Equivocate))
            .filter_map(|r| r.chain().get(height as usize).map(|b| (r.id(), b)))
            .collect()
    }

    /// True when no two honest replicas hold different blocks at any height.
    pub fn is_consistent(&self) -> bool {
        let max_h = self.replicas.iter().map(|r| r.height()).max().unwrap_or(0);
        (0..=max_h).all(|h| {
            let blocks = self.blocks_at(h);
            blocks.windows(2).all(|w| w[0].1.block_hash == w[1].1.block_hash)
        })
    }

    /// Lowest committed height among honest, live replicas.
    pub fn honest_min_height(&self) -> u64 {
        let now = self.now();
        self.replicas
            .iter()
            .filter(|r| r.is_honest() && !r.is_crashed(now))
            .map(|r| r.height())
            .min()
            .unwrap_or(0)
    }
}
