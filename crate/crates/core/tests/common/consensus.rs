use std::collections::BTreeMap;

use ledgernet::chain::{Cluster, ConsensusConfig, ElementId, Fault, NodeId, Transaction, TxKind};
use ledgernet::sched::{Micros, MS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HEIGHTS: u64 = 3;

#[derive(Debug, Default, Clone)]
pub struct FaultReport {
    pub trials: usize,
    pub safety_violations: usize,
    /// Trials with at most f faults.
    pub bounded: usize,
    pub live: usize,
    pub worst_commit_us: Micros,
}

/// Time allowed for `HEIGHTS` commits when up to f+1 primaries in a row may
/// be faulty: one view timeout per skipped view plus slack for the rounds.
pub fn budget(cfg: &ConsensusConfig) -> Micros {
    (cfg.f() as u64 + 2) * cfg.view_timeout() + HEIGHTS * 20 * cfg.link_delay_us
}

/// One randomized trial: up to f+1 faulty replicas, a mix of crashes at
/// random instants and equivocating primaries.
pub fn trial(n: usize, seed: u64) -> (bool, bool, usize, Micros) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ConsensusConfig::pbft(n, 10 * MS);
    cfg.batch_size = 1;
    let f = cfg.f();
    let k = rng.gen_range(0..=f + 1);
    let mut faults = BTreeMap::new();
    let mut nodes: Vec<NodeId> = (0..n).collect();
    for i in 0..k {
        let pick = nodes.swap_remove(rng.gen_range(0..nodes.len()));
        // Bias towards the first primaries so view changes get exercised.
        let node = if i == 0 && rng.gen_bool(0.5) { cfg.primary(0) } else { pick };
        let fault = if rng.gen_bool(0.5) { Fault::Equivocate } else { Fault::Crash { at: rng.gen_range(0..100 * MS) } };
        faults.insert(node, fault);
    }
    let mut c = Cluster::with_faults(cfg.clone(), seed, faults.clone()).expect("valid config");
    let client = ElementId::new("client");
    for h in 0..HEIGHTS {
        let tx = Transaction::new(TxKind::Snapshot, seed.to_be_bytes().to_vec(), client.clone(), h + 1, c.now());
        c.submit(tx, rng.gen_range(0..n));
    }
    let deadline = c.now() + budget(&cfg);
    let live = c.run_while(deadline, |c| c.honest_min_height() >= HEIGHTS);
    let took = c.now();
    // Let stragglers finish so late divergence would still be caught.
    c.run_until(deadline + cfg.view_timeout());
    (c.is_consistent(), live, faults.len(), took)
}

pub fn run(n: usize, trials: usize, base_seed: u64) -> FaultReport {
    let f = (n - 1) / 3;
    let mut r = FaultReport { trials, ..Default::default() };
    for t in 0..trials {
        let (safe, live, k, took) = trial(n, base_seed.wrapping_mul(1_000_003) + t as u64);
        if !safe {
            r.safety_violations += 1;
        }
        if k <= f {
            r.bounded += 1;
            if live {
                r.live += 1;
                r.worst_commit_us = r.worst_commit_us.max(took);
            }
        }
    }
    r
}
