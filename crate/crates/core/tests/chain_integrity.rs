mod common;

use ledgernet::chain::verify_export;
use ledgernet::simnet::{run, DefenseMode, ScenarioSpec};
use proptest::prelude::*;
use std::sync::OnceLock;

fn export() -> &'static [u8] {
    static EXPORT: OnceLock<Vec<u8>> = OnceLock::new();
    EXPORT.get_or_init(|| {
        let mut spec = ScenarioSpec::ddos_basic(DefenseMode::Auto, 5);
        spec.duration_ms = 8000;
        run(spec).unwrap().chain_export()
    })
}

#[test]
fn every_bundled_scenario_exports_a_valid_chain() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = run(ScenarioSpec::load(&path).unwrap()).unwrap();
        let n = verify_export(out.chain_export().as_slice()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(n as u64, out.ledger.chain_head().height + 1);
    }
}

#[test]
fn hundred_random_flips_all_detected() {
    let (detected, n) = common::chain::random_flips(export(), 100, 9);
    assert_eq!(detected, n);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(200) })]

    #[test]
    fn any_payload_flip_breaks_verification(pick in any::<prop::sample::Index>(), byte in any::<prop::sample::Index>(), mask in 1u8..=255) {
        let text = std::str::from_utf8(export()).unwrap();
        let sites: Vec<(usize, usize, usize)> = text
            .lines()
            .enumerate()
            .flat_map(|(li, l)| {
                let b: serde_json::Value = serde_json::from_str(l).unwrap();
                b["txs"].as_array().cloned().unwrap_or_default().into_iter().enumerate().filter_map(move |(ti, tx)| {
                    let len = tx["payload"].as_str().map_or(0, |s| s.len() / 2);
                    (len > 0).then_some((li, ti, len))
                })
            })
            .collect();
        let (line, tx, len) = sites[pick.index(sites.len())];
        let tampered = common::chain::flip(export(), line, tx, byte.index(len), mask);
        prop_assert!(verify_export(tampered.as_slice()).is_err());
    }
}
