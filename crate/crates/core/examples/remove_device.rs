//! Removes switch S3 from a running network by intent and shows the mapping
//! and chain before and after.

use ledgernet::chain::ElementId;
use ledgernet::intent::{IntentRequest, Preference, Verb};
use ledgernet::sched::SEC;
use ledgernet::simnet::{DefenseMode, ScenarioSpec, World};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = ScenarioSpec::ddos_basic(DefenseMode::None, 4);
    spec.events.truncate(1);
    let mut world = World::new(spec)?;
    world.run_until(2 * SEC);
    println!("mapping before: {}", show(world.middleware().mapping()));

    let id = world.submit_intent(IntentRequest { verb: Verb::RemoveDevice, target: "S3".into(), preference: Preference::None })?;
    world.run_until(9 * SEC);

    let entry = world.engine().get(id).ok_or("intent vanished")?;
    for t in &entry.intent.history {
        let tx = t.tx_hash.map(|h| h.to_string()).unwrap_or_else(|| "-".into());
        println!("  {:>5.2}s {:?} tx {tx}", t.at as f64 / 1e6, t.status);
    }
    for p in &entry.policies {
        println!("  policy {} with {} actions", p.policy_id, p.actions.len());
    }
    println!("mapping after:  {}", show(world.middleware().mapping()));
    let acct = world.accounting();
    println!("frames delivered={} dropped={} drops={:?}", acct.delivered, acct.dropped, acct.drops);
    let head = world.ledger().chain_head();
    println!("chain height={} txs={}", head.height, head.total_tx_count);
    Ok(())
}

fn show(m: &std::collections::BTreeMap<ElementId, ElementId>) -> String {
    m.iter().map(|(s, c)| format!("{}->{}", s.as_str(), c.as_str())).collect::<Vec<_>>().join(" ")
}
