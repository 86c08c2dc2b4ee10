//! Consensus latency benchmark over the virtual bus.

use std::io::{self, Write};

use serde::Serialize;

use super::cluster::Cluster;
use super::replica::{Algorithm, ConfigError, ConsensusConfig};
use super::types::{ElementId, Transaction, TxKind};
use crate::sched::Micros;

#[derive(Debug, Clone, Serialize)]
pub struct RoundLatency {
    pub round: usize,
    pub height: u64,
    pub latency_us: Micros,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyStats {
    pub algorithm: Algorithm,
    pub n_nodes: usize,
    pub link_delay_us: Micros,
    pub rounds: Vec<RoundLatency>,
    pub mean_us: f64,
    pub p50_us: Micros,
    pub p95_us: Micros,
    /// Virtual time the whole measurement took.
    pub elapsed_us: Micros,
}

impl LatencyStats {
    pub fn mean_ms(&self) -> f64 {
        self.mean_us / 1000.0
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["algorithm", "nodes", "delay_ms", "round", "height", "latency_ms"])?;
        let alg = match self.algorithm {
            Algorithm::Pbft => "pbft",
            Algorithm::Rpbft => "rpbft",
        };
        for r in &self.rounds {
            wr.write_record([
                alg.to_string(),
                self.n_nodes.to_string(),
                format!("{}", self.link_delay_us as f64 / 1000.0),
                r.round.to_string(),
                r.height.to_string(),
                format!("{:.3}", r.latency_us as f64 / 1000.0),
            ])?;
        }
        wr.flush()
    }
}

/// Nearest-rank percentile over a sorted slice.
pub fn percentile(sorted: &[Micros], p: f64) -> Micros {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs `n_rounds` single-transaction rounds back to back. Each latency runs
/// from PrePrepare emission to the proposing primary's commit quorum; under
/// RPBFT it extends until every non-member has applied the disseminated
/// block.
pub fn measure_consensus_latency(cfg: &ConsensusConfig, n_rounds: usize, seed: u64) -> Result<LatencyStats, ConfigError> {
    let mut cfg = cfg.clone();
    cfg.batch_size = 1;
    let mut cluster = Cluster::new(cfg.clone(), seed)?;
    let client = ElementId::new("bench");
    let mut rounds = Vec::with_capacity(n_rounds);
    for round in 0..n_rounds {
        let tx = Transaction::new(TxKind::Snapshot, (round as u64).to_be_bytes().to_vec(), client.clone(), round as u64 + 1, cluster.now());
        let height = round as u64 + 1;
        cluster.submit(tx, 0);
        let deadline = cluster.now() + 60 * cfg.view_timeout();
        let all = cfg.n_nodes;
        let finished = cluster.run_while(deadline, |c| c.rounds().get(&height).is_some_and(|r| r.applied_at.len() == all));
        if !finished {
            continue;
        }
        let trace = &cluster.rounds()[&height];
        let (Some(start), Some(quorum)) = (trace.proposed_at, trace.quorum_at) else { continue };
        let end = match cfg.algorithm {
            Algorithm::Pbft => quorum,
            Algorithm::Rpbft => {
                let members = cfg.committee(trace.view, height);
                trace
                    .applied_at
                    .iter()
                    .filter(|(n, _)| !members.contains(n))
                    .map(|(_, &t)| t)
                    .max()
                    .unwrap_or(quorum)
                    .max(quorum)
            }
        };
        rounds.push(RoundLatency { round, height, latency_us: end - start });
    }
    let mut sorted: Vec<Micros> = rounds.iter().map(|r| r.latency_us).collect();
    sorted.sort_unstable();
    let mean_us = if sorted.is_empty() { 0.0 } else { sorted.iter().sum::<u64>() as f64 / sorted.len() as f64 };
    Ok(LatencyStats {
        algorithm: cfg.algorithm,
        n_nodes: cfg.n_nodes,
        link_delay_us: cfg.link_delay_us,
        p50_us: percentile(&sorted, 50.0),
        p95_us: percentile(&sorted, 95.0),
        mean_us,
        rounds,
        elapsed_us: cluster.now(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::MS;

    #[test]
    fn ideal_bus_gives_three_hops() {
        let cfg = ConsensusConfig { recv_cost_us: 0, send_cost_us: 0, jitter_frac: 0.0, ..ConsensusConfig::pbft(7, 10 * MS) };
        let stats = measure_consensus_latency(&cfg, 5, 1).unwrap();
        assert_eq!(stats.rounds.len(), 5);
        assert!(stats.rounds.iter().all(|r| r.latency_us == 30 * MS));
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        assert_eq!(percentile(&v, 50.0), 5);
        assert_eq!(percentile(&v, 95.0), 10);
        assert_eq!(percentile(&[], 50.0), 0);
    }
}
