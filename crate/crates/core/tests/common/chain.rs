use ledgernet::chain::verify_export;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Positions of every non-empty tx payload as (line, tx index).
fn payload_sites(lines: &[Value]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (li, b) in lines.iter().enumerate() {
        for (ti, tx) in b["txs"].as_array().into_iter().flatten().enumerate() {
            let len = tx["payload"].as_str().map_or(0, |s| s.len() / 2);
            if len > 0 {
                out.push((li, ti, len));
            }
        }
    }
    out
}

/// XORs one payload byte with a non-zero mask and re-serializes the export.
pub fn flip(export: &[u8], line: usize, tx: usize, byte: usize, mask: u8) -> Vec<u8> {
    let text = std::str::from_utf8(export).expect("utf8 export");
    let mut blocks: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).expect("json line")).collect();
    let hexed = blocks[line]["txs"][tx]["payload"].as_str().expect("payload").to_owned();
    let mut raw = hex::decode(hexed).expect("hex payload");
    raw[byte] ^= mask;
    blocks[line]["txs"][tx]["payload"] = Value::String(hex::encode(raw));
    let mut out = Vec::new();
    for b in blocks {
        out.extend(serde_json::to_vec(&b).expect("json"));
        out.push(b'\n');
    }
    out
}

/// Returns (detected, attempted).
pub fn random_flips(export: &[u8], n: usize, seed: u64) -> (usize, usize) {
    let text = std::str::from_utf8(export).expect("utf8 export");
    let blocks: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).expect("json line")).collect();
    let sites = payload_sites(&blocks);
    assert!(!sites.is_empty(), "export has no payloads");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut detected = 0;
    for _ in 0..n {
        let (line, tx, len) = sites[rng.gen_range(0..sites.len())];
        let tampered = flip(export, line, tx, rng.gen_range(0..len), rng.gen_range(1..=255));
        if verify_export(tampered.as_slice()).is_err() {
            detected += 1;
        }
    }
    (detected, n)
}
