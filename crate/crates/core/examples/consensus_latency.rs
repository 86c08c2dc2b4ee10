//! PBFT vs RPBFT commit latency across cluster sizes and link delays.
//! Pass a round count as the first argument (default 20).

use ledgernet::chain::{measure_consensus_latency, ConsensusConfig};
use ledgernet::sched::MS;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rounds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    println!("{:>6} {:>6} {:>9} {:>11} {:>11}", "nodes", "delay", "pbft ms", "rpbft ms", "ratio");
    for n in [7, 19, 31] {
        for delay_ms in [10, 20, 50, 100] {
            let p = measure_consensus_latency(&ConsensusConfig::pbft(n, delay_ms * MS), rounds, 1)?;
            let r = measure_consensus_latency(&ConsensusConfig::rpbft(n, delay_ms * MS), rounds, 1)?;
            println!(
                "{n:>6} {delay_ms:>4}ms {:>9.1} {:>11.1} {:>11.2}",
                p.mean_ms(),
                r.mean_ms(),
                r.mean_ms() / p.mean_ms()
            );
        }
    }
    Ok(())
}
