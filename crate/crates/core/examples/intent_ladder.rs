//! Protects h9 under each preference and floods it from 2 s. Prints the
//! stages each run walks through, the victim-link rate, and the final report.

use ledgernet::intent::{PlanStage, Preference, Verb};
use ledgernet::simnet::{run, EventKind, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for pref in [Preference::MaxProtection, Preference::MaxPerformance, Preference::None] {
        let out = run(ScenarioSpec::ladder(pref, 1))?;
        println!("== {}", out.name);
        for r in out.log.iter().filter(|r| r.kind == EventKind::StageChanged) {
            println!("  @{:>5.1}s {}", r.timestamp_us as f64 / 1e6, r.payload);
        }
        let victim_link = out.trace.rows.iter().map(|r| {
            let rate: f64 = r.link_rates.values().copied().fold(0.0, f64::max);
            (r.t_s, rate)
        });
        let line: Vec<String> = victim_link.map(|(t, b)| format!("{t:.0}:{:.0}", b / 1e3)).collect();
        println!("  victim link kB/s {}", line.join(" "));
        let protect = out.intents.iter().find(|e| e.intent.verb == Verb::ProtectService).ok_or("no protect intent")?;
        let stages: Vec<PlanStage> = protect.stage_log.clone();
        println!("  stages {stages:?}, now {:?}", protect.stage());
        if let Some(rep) = protect.last_report() {
            println!("  last verdict {:?} at stage {:?}, {} attacker flows named", rep.verdict, rep.stage, rep.attacker_flows.len());
        }
    }
    Ok(())
}
