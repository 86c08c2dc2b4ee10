//! Registers a few elements, records transactions, exports the chain, and
//! shows that editing any exported block breaks verification.

use ledgernet::chain::{verify_export, ConsensusConfig, ElementId, Ledger, Role, TxKind};
use ledgernet::sched::MS;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut ledger = Ledger::new(ConsensusConfig::pbft(4, 10 * MS), 3)?;
    let mw = ElementId::new("MW");
    ledger.register(&mw, Role::Middleware, b"mw".to_vec())?;
    for dpid in 1..=3 {
        ledger.register(&ElementId::switch(dpid), Role::Switch, Vec::new())?;
    }
    for i in 0..5 {
        let r = ledger.submit_and_wait(TxKind::Snapshot, format!("snapshot {i}").into_bytes(), &mw)?;
        println!("snapshot {i} committed in block {}", r.block_height);
    }
    let head = ledger.chain_head();
    println!("head height={} hash={} txs={}", head.height, head.block_hash, head.total_tx_count);
    for rec in ledger.registry_view() {
        println!("  {:<4} {:?} {:?}", rec.element_id.as_str(), rec.role, rec.status);
    }

    let mut export = Vec::new();
    ledger.export(&mut export)?;
    println!("export verifies: {} blocks", verify_export(export.as_slice())?);

    let text = String::from_utf8(export)?;
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    // Flip one hex digit of the first snapshot payload.
    let target = lines.iter().position(|l| l.contains("\"Snapshot\"")).ok_or("no snapshot block")?;
    let mut block: serde_json::Value = serde_json::from_str(&lines[target])?;
    let payload = block["txs"][0]["payload"].as_str().ok_or("no payload")?.to_owned();
    let flipped = match payload.strip_prefix('0') {
        Some(rest) => format!("1{rest}"),
        None => format!("0{}", &payload[1..]),
    };
    block["txs"][0]["payload"] = flipped.into();
    lines[target] = block.to_string();
    let tampered = lines.join("\n");
    match verify_export(tampered.as_bytes()) {
        Ok(_) => println!("tampered export unexpectedly verified"),
        Err(e) => println!("tampered export rejected: {e}"),
    }
    Ok(())
}
