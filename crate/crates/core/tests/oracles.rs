mod common;

use std::collections::BTreeSet;

use common::oracles::*;
use ledgernet::ofwire::{decode, encode, FrameBuffer};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(10_000) })]

    #[test]
    fn flow_lookup_equals_scan(ops in prop::collection::vec(table_op(), 0..40), (f, port) in frame()) {
        let t = build(&ops);
        let fast = t.find(&f, port).map(|e| e.seq);
        let slow = scan(&t, &f, port).map(|e| e.seq);
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn codec_round_trip(msg in message()) {
        let bytes = encode(&msg).unwrap();
        let (back, rest) = decode(&bytes).unwrap();
        prop_assert!(rest.is_empty());
        prop_assert_eq!(back, msg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(500) })]

    #[test]
    fn frame_buffer_reassembles_any_split(msgs in prop::collection::vec(message(), 1..8), cut in 1usize..64) {
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
        let mut buf = FrameBuffer::new();
        let mut got = Vec::new();
        for chunk in stream.chunks(cut) {
            buf.push(chunk);
            while let Some(f) = buf.next_frame().unwrap() {
                got.push(decode(&f).unwrap().0);
            }
        }
        prop_assert_eq!(buf.pending(), 0);
        prop_assert_eq!(got, msgs);
    }

    #[test]
    fn paths_survive_random_exclusions(idx in 0usize..5, mask in any::<u16>()) {
        let (_, t) = &bundled_topologies()[idx];
        let dpids: Vec<u64> = t.dpids().collect();
        let excluded: BTreeSet<u64> = dpids.iter().copied().filter(|d| mask & (1 << (d % 16)) != 0 && d % 3 == 0).collect();
        for &a in &dpids {
            for &b in &dpids {
                prop_assert_eq!(t.shortest_path(a, b, &excluded), brute_shortest(t, a, b, &excluded));
            }
        }
    }
}

#[test]
fn paths_equal_brute_force_on_bundled_topologies() {
    let none = BTreeSet::new();
    for (name, t) in bundled_topologies() {
        let dpids: Vec<u64> = t.dpids().collect();
        for &a in &dpids {
            for &b in &dpids {
                assert_eq!(t.shortest_path(a, b, &none), brute_shortest(&t, a, b, &none), "{name}: {a}->{b}");
            }
        }
    }
}

#[test]
fn recalculated_paths_equal_brute_force() {
    let n = recalculated_paths().unwrap();
    assert!(n > 0);
}
