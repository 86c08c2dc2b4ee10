//! Serves the HTTP API on a free local port for a few seconds of virtual
//! time and drives it with the blocking client.

use ledgernet::gateway::{self, desk_scenario, Client, DeskConfig};
use ledgernet::intent::{IntentRequest, Preference, Verb};
use ledgernet::sched::SEC;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rt = tokio::runtime::Runtime::new()?;
    let desk = gateway::desk::start(DeskConfig { scenario: desk_scenario(2), speed: 0.0, ..Default::default() })?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let addr = listener.local_addr()?.to_string();
    rt.spawn(gateway::serve_on(listener, desk.clone()));
    println!("serving on http://{addr}");

    let client = Client::new(&addr);
    rt.block_on(desk.advance(SEC))?;
    println!("head {}", client.chain_head()?);
    let id = client.submit_intent(&IntentRequest { verb: Verb::RecalculatePaths, target: "S2".into(), preference: Preference::None })?;
    println!("submitted {id}");
    rt.block_on(desk.advance(7 * SEC))?;
    let intent_id = id["intent_id"].as_u64().ok_or("no id")?;
    println!("report status {}", client.report(intent_id)?["status"]);
    println!("mapping {}", client.mapping()?);

    let mut n = 0;
    client.events(0, |ev| {
        println!("  #{} {:?} {}", ev.seq, ev.kind, ev.payload);
        n += 1;
        n < 8
    })?;
    match client.block(10_000) {
        Ok(_) => println!("block 10000 exists?"),
        Err(e) => println!("block 10000: {e} (exit code {})", e.exit_code()),
    }
    Ok(())
}
