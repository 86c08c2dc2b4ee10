//! One PBFT replica as a sans-IO state machine.
//!
//! The three-phase exchange runs per height with one block in flight. Under
//! RPBFT the exchange is restricted to a committee rotated per height and the
//! primary pushes each committed block to the remaining nodes.
//!
//! View change is deliberately small: a replica that sees no commit within
//! the view timeout while holding uncommitted requests votes for the next
//! view, attaching its recent committed blocks and its highest prepared
//! block. The new primary adopts the reported blocks, re-proposes a reported
//! prepared block if there is one, and announces the view.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::contract::ContractState;
use super::types::{Block, Hash32, Transaction};
use crate::sched::{Micros, MS, SEC};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pbft,
    Rpbft,
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pbft" => Ok(Algorithm::Pbft),
            "rpbft" => Ok(Algorithm::Rpbft),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusConfig {
    pub algorithm: Algorithm,
    pub n_nodes: usize,
    /// One-way delay on every pairwise link.
    pub link_delay_us: Micros,
    /// Committee size under RPBFT; `None` means max(4, ceil(0.6 n)).
    pub rpbft_committee_size: Option<usize>,
    pub batch_size: usize,
    pub batch_timeout_us: Micros,
    /// Serial processing cost of each received message at a node.
    pub recv_cost_us: Micros,
    /// Serial cost of putting one message on the wire.
    pub send_cost_us: Micros,
    /// Extra per-message delay drawn uniformly from [0, jitter_frac * link_delay].
    pub jitter_frac: f64,
    /// `None` means max(10 * link_delay, 1 s).
    pub view_timeout_us: Option<Micros>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            algorithm: Algorithm::Pbft,
            n_nodes: 4,
            link_delay_us: 10 * MS,
            rpbft_committee_size: None,
            batch_size: 64,
            batch_timeout_us: 50 * MS,
            recv_cost_us: 500,
            send_cost_us: 50,
            jitter_frac: 0.1,
            view_timeout_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("need at least 4 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node count {0} is not of the form 3f+1")]
    NotThreeFPlusOne(usize),
    #[error("committee size {0} outside [4, n]")]
    BadCommittee(usize),
    #[error("batch size must be positive")]
    ZeroBatch,
}

impl ConsensusConfig {
    pub fn pbft(n_nodes: usize, link_delay_us: Micros) -> Self {
        ConsensusConfig { n_nodes, link_delay_us, ..Default::default() }
    }

    pub fn rpbft(n_nodes: usize, link_delay_us: Micros) -> Self {
        ConsensusConfig { algorithm: Algorithm::Rpbft, n_nodes, link_delay_us, ..Default::default() }
    }

    pub fn f(&self) -> usize {
        (self.n_nodes.saturating_sub(1)) / 3
    }

    pub fn quorum(&self) -> usize {
        2 * self.f() + 1
    }

    pub fn committee_size(&self) -> usize {
        match self.algorithm {
            Algorithm::Pbft => self.n_nodes,
            Algorithm::Rpbft => self
                .rpbft_committee_size
                .unwrap_or_else(|| 4.max((self.n_nodes * 3).div_ceil(5)))
                .min(self.n_nodes),
        }
    }

    pub fn view_timeout(&self) -> Micros {
        self.view_timeout_us.unwrap_or_else(|| (10 * self.link_delay_us).max(SEC))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_nodes < 4 {
            return Err(ConfigError::TooFewNodes(self.n_nodes));
        }
        if self.n_nodes % 3 != 1 {
            return Err(ConfigError::NotThreeFPlusOne(self.n_nodes));
        }
        let c = self.committee_size();
        if c < 4 || c > self.n_nodes {
            return Err(ConfigError::BadCommittee(c));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::ZeroBatch);
        }
        Ok(())
    }

    pub fn primary(&self, view: u64) -> NodeId {
        (view % self.n_nodes as u64) as NodeId
    }

    /// Consensus participants for a height. Always contains the primary;
    /// under RPBFT the other seats rotate with the height.
    pub fn committee(&self, view: u64, height: u64) -> Vec<NodeId> {
        let n = self.n_nodes;
        let p = self.primary(view);
        let c = self.committee_size();
        if c >= n {
            return (0..n).collect();
        }
        let others: Vec<NodeId> = (1..n).map(|k| (p + k) % n).collect();
        let start = (height % (n as u64 - 1)) as usize;
        let mut members: Vec<NodeId> = (0..c - 1).map(|i| others[(start + i) % (n - 1)]).collect();
        members.push(p);
        members.sort_unstable();
        members
    }

    pub fn committee_quorum(&self) -> usize {
        2 * ((self.committee_size() - 1) / 3) + 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub enum Fault {
    /// Silent from the given instant on.
    Crash { at: Micros },
    /// Sends conflicting PrePrepares when primary and never votes for its
    /// own proposals; otherwise follows the protocol.
    Equivocate,
}

#[derive(Debug, Clone)]
pub struct PreparedCert {
    pub view: u64,
    pub block: Arc<Block>,
}

#[derive(Debug, Clone)]
pub enum ConsensusMsg {
    Request(Arc<Transaction>),
    PrePrepare { view: u64, height: u64, block: Arc<Block> },
    Prepare { view: u64, height: u64, digest: Hash32 },
    /// Carries the block so a replica that prepared a different digest can
    /// still apply a certified one.
    Commit { view: u64, height: u64, digest: Hash32, block: Arc<Block> },
    Disseminate { view: u64, block: Arc<Block> },
    ViewChange { new_view: u64, committed_height: u64, tail: Vec<Arc<Block>>, prepared: Option<PreparedCert> },
    NewView { view: u64, sync: Vec<Arc<Block>>, proposal: Option<Arc<Block>> },
}

impl ConsensusMsg {
    pub fn label(&self) -> &'static str {
        match self {
            ConsensusMsg::Request(_) => "request",
            ConsensusMsg::PrePrepare { .. } => "pre_prepare",
            ConsensusMsg::Prepare { .. } => "prepare",
            ConsensusMsg::Commit { .. } => "commit",
            ConsensusMsg::Disseminate { .. } => "disseminate",
            ConsensusMsg::ViewChange { .. } => "view_change",
            ConsensusMsg::NewView { .. } => "new_view",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    Batch,
    View(u64),
}

/// Observable milestones, used for latency accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Note {
    Proposed { height: u64, view: u64 },
    Committed { height: u64, view: u64 },
    Applied { height: u64 },
    ViewEntered { view: u64 },
    Rejected { reason: &'static str },
}

#[derive(Debug, Clone)]
pub enum Out {
    Send { to: Vec<NodeId>, msg: ConsensusMsg },
    Timer { at: Micros, kind: TimerKind },
    Note(Note),
}

#[derive(Debug, Default)]
struct Slot {
    preprepare: Option<Arc<Block>>,
    prepares: BTreeMap<Hash32, BTreeSet<NodeId>>,
    commits: BTreeMap<Hash32, BTreeSet<NodeId>>,
    certified: BTreeMap<Hash32, Arc<Block>>,
    prepare_sent: bool,
    commit_sent: bool,
}

#[derive(Debug, Clone)]
struct VcVote {
    tail: Vec<Arc<Block>>,
    prepared: Option<PreparedCert>,
}

const VC_TAIL: usize = 4;

pub struct Replica {
    id: NodeId,
    cfg: Arc<ConsensusConfig>,
    fault: Option<Fault>,
    view: u64,
    vc_target: Option<u64>,
    chain: Vec<Arc<Block>>,
    state: ContractState,
    pending: VecDeque<(Micros, Arc<Transaction>)>,
    pending_set: HashSet<Hash32>,
    seen: HashSet<Hash32>,
    slots: BTreeMap<(u64, u64), Slot>,
    early_blocks: BTreeMap<u64, Arc<Block>>,
    votes: BTreeMap<u64, BTreeMap<NodeId, VcVote>>,
    new_view_sent: BTreeSet<u64>,
    timer_epoch: u64,
    batch_armed_at: Option<Micros>,
    commits_sent_without_quorum: u64,
}

impl Replica {
    pub fn new(id: NodeId, cfg: Arc<ConsensusConfig>, fault: Option<Fault>) -> Self {
        Replica {
            id,
            cfg,
            fault,
            view: 0,
            vc_target: None,
            chain: vec![Arc::new(Block::genesis())],
            state: ContractState::new(),
            pending: VecDeque::new(),
            pending_set: HashSet::new(),
            seen: HashSet::new(),
            slots: BTreeMap::new(),
            early_blocks: BTreeMap::new(),
            votes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            timer_epoch: 0,
            batch_armed_at: None,
            commits_sent_without_quorum: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    pub fn is_crashed(&self, now: Micros) -> bool {
        matches!(self.fault, Some(Fault::Crash { at }) if now >= at)
    }

    pub fn is_honest(&self) -> bool {
        self.fault.is_none()
    }

    pub fn chain(&self) -> &[Arc<Block>] {
        &self.chain
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn height(&self) -> u64 {
        self.chain.len() as u64 - 1
    }

    pub fn pending_len(&self) -> usize {
        self.pending_set.len()
    }

    pub fn is_committed(&self, tx: &Hash32) -> bool {
        self.state.locate(tx).is_some()
    }

    /// Number of Commit messages this replica sent without a prepare quorum.
    /// Stays zero; exposed for property tests.
    pub fn quorum_violations(&self) -> u64 {
        self.commits_sent_without_quorum
    }

    fn next_height(&self) -> u64 {
        self.chain.len() as u64
    }

    fn tip(&self) -> &Arc<Block> {
        self.chain.last().expect("chain holds genesis")
    }

    fn is_primary(&self) -> bool {
        self.cfg.primary(self.view) == self.id
    }

    fn in_committee(&self, view: u64, height: u64) -> bool {
        self.cfg.algorithm == Algorithm::Pbft || self.cfg.committee(view, height).contains(&self.id)
    }

    fn others(&self, members: impl IntoIterator<Item = NodeId>) -> Vec<NodeId> {
        members.into_iter().filter(|&m| m != self.id).collect()
    }

    fn everyone_else(&self) -> Vec<NodeId> {
        self.others(0..self.cfg.n_nodes)
    }

    fn quorum_for(&self, view: u64, height: u64) -> usize {
        match self.cfg.algorithm {
            Algorithm::Pbft => self.cfg.quorum(),
            Algorithm::Rpbft => {
                let c = self.cfg.committee(view, height).len();
                2 * ((c - 1) / 3) + 1
            }
        }
    }

    fn arm_view_timer(&mut self, now: Micros, out: &mut Vec<Out>) {
        self.timer_epoch += 1;
        out.push(Out::Timer { at: now + self.cfg.view_timeout(), kind: TimerKind::View(self.timer_epoch) });
    }

    pub fn handle(&mut self, from: NodeId, msg: ConsensusMsg, now: Micros) -> Vec<Out> {
        let mut out = Vec::new();
        if self.is_crashed(now) {
            return out;
        }
        match msg {
            ConsensusMsg::Request(tx) => self.on_request(tx, now, &mut out),
            ConsensusMsg::PrePrepare { view, height, block } => {
                if from != self.cfg.primary(view) || view != self.view || self.vc_target.is_some() {
                    out.push(Out::Note(Note::Rejected { reason: "pre_prepare outside current view" }));
                } else if !self.in_committee(view, height) {
                    out.push(Out::Note(Note::Rejected { reason: "pre_prepare to non-member" }));
                } else if height >= self.next_height() {
                    let slot = self.slots.entry((height, view)).or_default();
                    if slot.preprepare.is_none() {
                        slot.preprepare = Some(block);
                    } else {
                        out.push(Out::Note(Note::Rejected { reason: "duplicate pre_prepare" }));
                    }
                }
            }
            ConsensusMsg::Prepare { view, height, digest } => {
                if height >= self.next_height() && self.cfg.committee(view, height).contains(&from) {
                    self.slots.entry((height, view)).or_default().prepares.entry(digest).or_default().insert(from);
                }
            }
            ConsensusMsg::Commit { view, height, digest, block } => {
                if height >= self.next_height()
                    && block.block_hash == digest
                    && block.height == height
                    && self.cfg.committee(view, height).contains(&from)
                {
                    let slot = self.slots.entry((height, view)).or_default();
                    slot.commits.entry(digest).or_default().insert(from);
                    slot.certified.entry(digest).or_insert(block);
                }
            }
            ConsensusMsg::Disseminate { view, block } => {
                if from == self.cfg.primary(view) && block.height >= self.next_height() {
                    self.early_blocks.entry(block.height).or_insert(block);
                    self.drain_early_blocks(now, &mut out);
                }
            }
            ConsensusMsg::ViewChange { new_view, committed_height: _, tail, prepared } => {
                if new_view > self.view {
                    self.votes.entry(new_view).or_default().insert(from, VcVote { tail, prepared });
                    let target_reached = self.vc_target.is_some_and(|t| t >= new_view);
                    if !target_reached && self.votes[&new_view].len() > self.cfg.f() {
                        self.start_view_change(new_view, now, &mut out);
                    }
                    self.try_new_view(new_view, now, &mut out);
                }
            }
            ConsensusMsg::NewView { view, sync, proposal } => {
                if view > self.view && from == self.cfg.primary(view) {
                    self.adopt_blocks(sync.iter(), now, &mut out);
                    self.enter_view(view, &mut out);
                    if let Some(block) = proposal {
                        let h = block.height;
                        if h == self.next_height() && self.in_committee(view, h) {
                            self.slots.entry((h, view)).or_default().preprepare = Some(block);
                        }
                    }
                    if self.pending_len() > 0 {
                        self.arm_view_timer(now, &mut out);
                    }
                }
            }
        }
        self.progress(now, &mut out);
        out
    }

    pub fn on_timer(&mut self, kind: TimerKind, now: Micros) -> Vec<Out> {
        let mut out = Vec::new();
        if self.is_crashed(now) {
            return out;
        }
        match kind {
            TimerKind::Batch => {
                self.batch_armed_at = None;
            }
            TimerKind::View(epoch) => {
                if epoch == self.timer_epoch && (self.pending_len() > 0 || self.vc_target.is_some()) {
                    let target = self.vc_target.map_or(self.view + 1, |t| t + 1);
                    self.start_view_change(target, now, &mut out);
                }
            }
        }
        self.progress(now, &mut out);
        out
    }

    fn on_request(&mut self, tx: Arc<Transaction>, now: Micros, out: &mut Vec<Out>) {
        if !self.seen.insert(tx.tx_hash) || self.is_committed(&tx.tx_hash) {
            return;
        }
        let was_idle = self.pending_set.is_empty();
        self.pending_set.insert(tx.tx_hash);
        self.pending.push_back((now, tx));
        if was_idle {
            self.arm_view_timer(now, out);
        }
    }

    fn enter_view(&mut self, view: u64, out: &mut Vec<Out>) {
        self.view = view;
        if self.vc_target.is_some_and(|t| t <= view) {
            self.vc_target = None;
        }
        self.votes.retain(|&v, _| v > view);
        self.slots.retain(|&(_, v), s| v >= view || !s.commits.is_empty());
        out.push(Out::Note(Note::ViewEntered { view }));
    }

    fn start_view_change(&mut self, target: u64, now: Micros, out: &mut Vec<Out>) {
        if target <= self.view || self.vc_target.is_some_and(|t| t >= target) {
            return;
        }
        self.vc_target = Some(target);
        let tail: Vec<Arc<Block>> = self.chain.iter().skip(1).rev().take(VC_TAIL).rev().cloned().collect();
        let prepared = self.highest_prepared();
        let committed_height = self.height();
        self.votes
            .entry(target)
            .or_default()
            .insert(self.id, VcVote { tail: tail.clone(), prepared: prepared.clone() });
        out.push(Out::Send {
            to: self.everyone_else(),
            msg: ConsensusMsg::ViewChange { new_view: target, committed_height, tail, prepared },
        });
        self.arm_view_timer(now, out);
        self.try_new_view(target, now, out);
    }

    fn highest_prepared(&self) -> Option<PreparedCert> {
        let h = self.next_height();
        self.slots
            .range((h, 0)..(h + 1, 0))
            .filter(|(_, s)| s.commit_sent)
            .filter_map(|(&(_, v), s)| s.preprepare.clone().map(|block| PreparedCert { view: v, block }))
            .max_by_key(|c| c.view)
    }

    fn try_new_view(&mut self, view: u64, now: Micros, out: &mut Vec<Out>) {
        if self.cfg.primary(view) != self.id
            || self.new_view_sent.contains(&view)
            || self.fault.is_some()
            || self.votes.get(&view).map_or(0, BTreeMap::len) < self.cfg.quorum()
        {
            return;
        }
        self.new_view_sent.insert(view);
        let votes: Vec<VcVote> = self.votes[&view].values().cloned().collect();

        let mut by_height: BTreeMap<u64, Arc<Block>> = BTreeMap::new();
        for v in &votes {
            for b in &v.tail {
                by_height.entry(b.height).or_insert_with(|| b.clone());
            }
        }
        let sync: Vec<Arc<Block>> = by_height.into_values().collect();
        self.adopt_blocks(sync.iter(), now, out);

        let h = self.next_height();
        let reproposal = votes
            .iter()
            .filter_map(|v| v.prepared.as_ref())
            .filter(|c| c.block.height == h && c.block.prev_hash == self.tip().block_hash)
            .max_by_key(|c| c.view)
            .map(|c| c.block.clone());
        self.enter_view(view, out);
        let proposal = reproposal.or_else(|| self.build_block(h, view));
        if let Some(b) = &proposal {
            self.slots.entry((h, view)).or_default().preprepare = Some(b.clone());
            out.push(Out::Note(Note::Proposed { height: h, view }));
        }
        out.push(Out::Send { to: self.everyone_else(), msg: ConsensusMsg::NewView { view, sync, proposal } });
        if self.pending_len() > 0 {
            self.arm_view_timer(now, out);
        }
    }

    /// Appends any of `blocks` that extend the local chain and verify.
    fn adopt_blocks<'a>(&mut self, blocks: impl Iterator<Item = &'a Arc<Block>>, now: Micros, out: &mut Vec<Out>) {
        let mut sorted: Vec<&Arc<Block>> = blocks.collect();
        sorted.sort_by_key(|b| b.height);
        for b in sorted {
            if b.height == self.next_height() && self.block_extends_tip(b) {
                self.append(b.clone(), now, out);
                out.push(Out::Note(Note::Applied { height: b.height }));
            }
        }
    }

    fn drain_early_blocks(&mut self, now: Micros, out: &mut Vec<Out>) {
        while let Some(b) = self.early_blocks.remove(&self.next_height()) {
            if self.block_extends_tip(&b) {
                self.append(b.clone(), now, out);
                out.push(Out::Note(Note::Applied { height: b.height }));
            }
        }
        let h = self.next_height();
        self.early_blocks.retain(|&k, _| k >= h);
    }

    fn block_extends_tip(&self, b: &Block) -> bool {
        b.prev_hash == self.tip().block_hash && b.verify_self()
    }

    fn valid_proposal(&self, b: &Block, height: u64) -> bool {
        b.height == height
            && self.block_extends_tip(b)
            && b.body.iter().all(|tx| !self.is_committed(&tx.tx_hash))
            && b.header_meta == self.state.header_meta_after(height, &b.body)
    }

    fn build_block(&mut self, height: u64, view: u64) -> Option<Arc<Block>> {
        self.pending.retain(|(_, tx)| self.pending_set.contains(&tx.tx_hash));
        if self.pending.is_empty() {
            return None;
        }
        let body: Vec<Transaction> =
            self.pending.iter().take(self.cfg.batch_size).map(|(_, tx)| (**tx).clone()).collect();
        Some(Arc::new(self.block_from(height, view, body)))
    }

    fn block_from(&self, height: u64, view: u64, body: Vec<Transaction>) -> Block {
        let meta = self.state.header_meta_after(height, &body);
        Block::new(height, view, self.tip().block_hash, meta, body)
    }

    fn maybe_propose(&mut self, now: Micros, out: &mut Vec<Out>) {
        if !self.is_primary() || self.vc_target.is_some() {
            return;
        }
        let h = self.next_height();
        if self.slots.get(&(h, self.view)).is_some_and(|s| s.preprepare.is_some() || s.prepare_sent) {
            return;
        }
        self.pending.retain(|(_, tx)| self.pending_set.contains(&tx.tx_hash));
        let Some(&(oldest, _)) = self.pending.front() else { return };
        let due = oldest + self.cfg.batch_timeout_us;
        if self.pending.len() < self.cfg.batch_size && now < due {
            if self.batch_armed_at != Some(due) {
                self.batch_armed_at = Some(due);
                out.push(Out::Timer { at: due, kind: TimerKind::Batch });
            }
            return;
        }
        let view = self.view;
        let committee = self.others(self.cfg.committee(view, h));
        if self.fault == Some(Fault::Equivocate) {
            let block = self.build_block(h, view).expect("pending is non-empty");
            let mut alt_body = block.body.clone();
            if alt_body.len() > 1 {
                alt_body.reverse();
            } else {
                alt_body.clear();
            }
            let alt = Arc::new(self.block_from(h, view, alt_body));
            let slot = self.slots.entry((h, view)).or_default();
            slot.prepare_sent = true;
            slot.commit_sent = true;
            let half = committee.len() / 2;
            out.push(Out::Note(Note::Proposed { height: h, view }));
            out.push(Out::Send {
                to: committee[..half].to_vec(),
                msg: ConsensusMsg::PrePrepare { view, height: h, block },
            });
            out.push(Out::Send {
                to: committee[half..].to_vec(),
                msg: ConsensusMsg::PrePrepare { view, height: h, block: alt },
            });
            return;
        }
        let block = self.build_block(h, view).expect("pending is non-empty");
        self.slots.entry((h, view)).or_default().preprepare = Some(block.clone());
        out.push(Out::Note(Note::Proposed { height: h, view }));
        out.push(Out::Send { to: committee, msg: ConsensusMsg::PrePrepare { view, height: h, block } });
    }

    fn append(&mut self, block: Arc<Block>, now: Micros, out: &mut Vec<Out>) {
        self.state.apply_block(&block);
        for tx in &block.body {
            self.pending_set.remove(&tx.tx_hash);
            self.seen.insert(tx.tx_hash);
        }
        self.chain.push(block);
        let h = self.next_height();
        self.slots.retain(|&(sh, _), _| sh >= h);
        if self.pending_len() > 0 {
            self.arm_view_timer(now, out);
        } else {
            self.timer_epoch += 1;
        }
    }

    fn progress(&mut self, now: Micros, out: &mut Vec<Out>) {
        loop {
            let h = self.next_height();

            // a commit certificate from any view settles the height
            let mut certified: Option<(u64, Arc<Block>)> = None;
            for (&(_, v), slot) in self.slots.range((h, 0)..(h + 1, 0)) {
                let q = self.quorum_for(v, h);
                if let Some((d, _)) = slot.commits.iter().find(|(_, s)| s.len() >= q) {
                    if let Some(b) = slot.certified.get(d).or(slot.preprepare.as_ref().filter(|b| b.block_hash == *d)) {
                        certified = Some((v, b.clone()));
                        break;
                    }
                }
            }
            if let Some((v, block)) = certified {
                if !self.block_extends_tip(&block) {
                    out.push(Out::Note(Note::Rejected { reason: "certified block does not extend tip" }));
                    self.slots.retain(|&(sh, sv), _| !(sh == h && sv == v));
                    continue;
                }
                let proposer = self.cfg.primary(v);
                self.append(block.clone(), now, out);
                out.push(Out::Note(Note::Committed { height: h, view: v }));
                if self.cfg.algorithm == Algorithm::Rpbft && proposer == self.id {
                    let members = self.cfg.committee(v, h);
                    let rest: Vec<NodeId> = (0..self.cfg.n_nodes).filter(|m| !members.contains(m)).collect();
                    if !rest.is_empty() {
                        out.push(Out::Send { to: rest, msg: ConsensusMsg::Disseminate { view: v, block } });
                    }
                }
                self.drain_early_blocks(now, out);
                continue;
            }

            if self.vc_target.is_some() {
                break;
            }
            let view = self.view;
            let primary = self.cfg.primary(view);
            let quorum = self.quorum_for(view, h);
            let Some(pp) = self.slots.get(&(h, view)).and_then(|s| s.preprepare.clone()) else {
                break;
            };
            let digest = pp.block_hash;
            let mut changed = false;

            let prepare_sent = self.slots[&(h, view)].prepare_sent;
            if !prepare_sent {
                if !self.valid_proposal(&pp, h) {
                    out.push(Out::Note(Note::Rejected { reason: "invalid pre_prepare" }));
                    self.slots.remove(&(h, view));
                    break;
                }
                let to = self.others(self.cfg.committee(view, h));
                let me = self.id;
                let slot = self.slots.get_mut(&(h, view)).expect("slot exists");
                slot.prepare_sent = true;
                let voters = slot.prepares.entry(digest).or_default();
                voters.insert(primary);
                voters.insert(me);
                if me != primary {
                    out.push(Out::Send { to, msg: ConsensusMsg::Prepare { view, height: h, digest } });
                }
                changed = true;
            }

            let slot = self.slots.get(&(h, view)).expect("slot exists");
            let prepared = slot.prepares.get(&digest).map_or(0, BTreeSet::len);
            if slot.prepare_sent && !slot.commit_sent && prepared >= quorum {
                if prepared < quorum {
                    self.commits_sent_without_quorum += 1;
                }
                let to = self.others(self.cfg.committee(view, h));
                let me = self.id;
                let slot = self.slots.get_mut(&(h, view)).expect("slot exists");
                slot.commit_sent = true;
                slot.commits.entry(digest).or_default().insert(me);
                slot.certified.entry(digest).or_insert_with(|| pp.clone());
                out.push(Out::Send { to, msg: ConsensusMsg::Commit { view, height: h, digest, block: pp } });
                changed = true;
            }
            if !changed {
                break;
            }
        }
        self.maybe_propose(now, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn committee_rotates_and_keeps_primary() {
        let cfg = ConsensusConfig::rpbft(7, 10 * MS);
        assert_eq!(cfg.committee_size(), 5);
        let c1 = cfg.committee(0, 1);
        let c2 = cfg.committee(0, 2);
        assert_eq!(c1.len(), 5);
        assert!(c1.contains(&0) && c2.contains(&0));
        assert_ne!(c1, c2);
        assert_eq!(cfg.committee_quorum(), 3);
        assert_eq!(ConsensusConfig::rpbft(31, MS).committee_size(), 19);
        assert_eq!(ConsensusConfig::rpbft(4, MS).committee_size(), 4);
    }

    #[test]
    fn config_validation() {
        assert_eq!(ConsensusConfig::pbft(3, MS).validate(), Err(ConfigError::TooFewNodes(3)));
        assert_eq!(ConsensusConfig::pbft(6, MS).validate(), Err(ConfigError::NotThreeFPlusOne(6)));
        ConsensusConfig::pbft(31, MS).validate().unwrap();
        assert_eq!(ConsensusConfig::pbft(7, MS).f(), 2);
        assert_eq!(ConsensusConfig::pbft(7, MS).quorum(), 5);
        assert_eq!(ConsensusConfig::pbft(7, 10 * MS).view_timeout(), SEC);
        assert_eq!(ConsensusConfig::pbft(7, 200 * MS).view_timeout(), 2 * SEC);
    }
}
