//! Runs the two-victim packet_in flood with and without the defense loop
//! and prints the per-second packet_in rate and controller load.

use ledgernet::simnet::{run, DefenseMode, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    for mode in [DefenseMode::None, DefenseMode::Auto] {
        let out = run(ScenarioSpec::ddos_basic(mode, seed))?;
        println!("defense={mode:?}");
        println!("{:>5} {:>10} {:>6}", "t_s", "pkt_in/s", "load");
        for r in &out.trace.rows {
            println!("{:>5.0} {:>10.0} {:>6.2}", r.t_s, r.packet_in_rate, r.controller_load);
        }
        for a in &out.trace.annotations {
            println!("  @{:.1}s {}", a.t_us as f64 / 1e6, a.label);
        }
        let acct = &out.accounting;
        println!(
            "frames injected={} delivered={} dropped={} pending={} chain height={}\n",
            acct.injected,
            acct.delivered,
            acct.dropped,
            acct.pending,
            out.ledger.chain_head().height
        );
    }
    Ok(())
}
