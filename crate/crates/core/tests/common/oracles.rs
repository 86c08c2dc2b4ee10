use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use ledgernet::ofwire::{Action, FlowMod, FlowModCommand, Ipv4Prefix, MacAddr, MatchFields, OfBody, OfMessage, PacketIn, PacketOut, SwitchFeatures};
use ledgernet::simnet::{FlowEntry, FlowTable, Frame, ScenarioSpec, TopologySpec};
use proptest::prelude::*;

// Small value spaces so rules overlap and priorities tie.
fn mac() -> impl Strategy<Value = MacAddr> {
    (1u64..5).prop_map(MacAddr::from_u64)
}

fn ip() -> impl Strategy<Value = Ipv4Addr> {
    (0u32..4, 0u32..4).prop_map(|(a, b)| Ipv4Addr::new(10, 0, a as u8, b as u8))
}

fn prefix() -> impl Strategy<Value = Ipv4Prefix> {
    (ip(), prop::sample::select(vec![0u8, 16, 24, 30, 32])).prop_map(|(addr, len)| Ipv4Prefix { addr, len })
}

pub fn match_fields() -> impl Strategy<Value = MatchFields> {
    (
        prop::option::of(1u32..4),
        prop::option::of(mac()),
        prop::option::of(mac()),
        prop::option::of(prefix()),
        prop::option::of(prefix()),
    )
        .prop_map(|(in_port, eth_src, eth_dst, ipv4_src, ipv4_dst)| MatchFields { in_port, eth_src, eth_dst, ipv4_src, ipv4_dst })
}

pub fn table_op() -> impl Strategy<Value = FlowMod> {
    (
        match_fields(),
        0u16..4,
        prop::collection::vec((1u32..8).prop_map(Action::Output), 0..2),
        prop::sample::select(vec![
            FlowModCommand::Add,
            FlowModCommand::Add,
            FlowModCommand::Add,
            FlowModCommand::Delete,
            FlowModCommand::DeleteStrict,
            FlowModCommand::Modify,
        ]),
    )
        .prop_map(|(m, prio, actions, command)| FlowMod { command, ..FlowMod::add(m, prio, actions) })
}

pub fn frame() -> impl Strategy<Value = (Frame, u32)> {
    (mac(), mac(), ip(), ip(), 1u32..4).prop_map(|(eth_src, eth_dst, ipv4_src, ipv4_dst, port)| {
        (Frame { id: 0, eth_src, eth_dst, ipv4_src, ipv4_dst, size: 100 }, port)
    })
}

pub fn build(ops: &[FlowMod]) -> FlowTable {
    let mut t = FlowTable::default();
    for (i, op) in ops.iter().enumerate() {
        t.apply(op, i as u64);
    }
    t
}

/// Highest priority wins, then the earliest installed.
pub fn scan<'a>(t: &'a FlowTable, f: &Frame, port: u32) -> Option<&'a FlowEntry> {
    t.entries()
        .filter(|e| ledgernet::simnet::matches(&e.matches, f, port))
        .min_by_key(|e| (std::cmp::Reverse(e.priority), e.seq))
}

fn bytes(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), 0..max)
}

fn wire_prefix() -> impl Strategy<Value = Ipv4Prefix> {
    (any::<u32>(), 0u8..=32).prop_map(|(a, len)| {
        let p = Ipv4Prefix { addr: Ipv4Addr::from(a), len };
        Ipv4Prefix { addr: Ipv4Addr::from(a & p.mask()), len }
    })
}

fn wire_match() -> impl Strategy<Value = MatchFields> {
    (
        prop::option::of(any::<u32>()),
        prop::option::of(any::<[u8; 6]>().prop_map(MacAddr)),
        prop::option::of(any::<[u8; 6]>().prop_map(MacAddr)),
        prop::option::of(wire_prefix()),
        prop::option::of(wire_prefix()),
    )
        .prop_map(|(in_port, eth_src, eth_dst, ipv4_src, ipv4_dst)| MatchFields { in_port, eth_src, eth_dst, ipv4_src, ipv4_dst })
}

fn actions() -> impl Strategy<Value = Vec<Action>> {
    prop::collection::vec(any::<u32>().prop_map(Action::Output), 0..4)
}

fn command() -> impl Strategy<Value = FlowModCommand> {
    prop::sample::select(vec![
        FlowModCommand::Add,
        FlowModCommand::Modify,
        FlowModCommand::ModifyStrict,
        FlowModCommand::Delete,
        FlowModCommand::DeleteStrict,
    ])
}

fn flow_mod() -> impl Strategy<Value = FlowMod> {
    (
        (any::<u64>(), any::<u64>(), any::<u8>(), command(), any::<u16>(), any::<u16>()),
        (any::<u16>(), any::<u32>(), any::<u32>(), any::<u32>(), any::<u16>()),
        wire_match(),
        actions(),
    )
        .prop_map(
            |((cookie, cookie_mask, table_id, command, idle_timeout, hard_timeout), (priority, buffer_id, out_port, out_group, flags), matches, actions)| FlowMod {
                cookie,
                cookie_mask,
                table_id,
                command,
                idle_timeout,
                hard_timeout,
                priority,
                buffer_id,
                out_port,
                out_group,
                flags,
                matches,
                actions,
            },
        )
}

/// Messages the encoder accepts: packet_in frames are non-empty and
/// passthrough types lie outside the decoded subset.
pub fn message() -> impl Strategy<Value = OfMessage> {
    let body = prop_oneof![
        bytes(16).prop_map(OfBody::Hello),
        (any::<u16>(), any::<u16>(), bytes(64)).prop_map(|(err_type, code, data)| OfBody::Error { err_type, code, data }),
        bytes(64).prop_map(OfBody::EchoRequest),
        bytes(64).prop_map(OfBody::EchoReply),
        Just(OfBody::FeaturesRequest),
        (any::<u64>(), any::<u32>(), any::<u8>(), any::<u8>(), any::<u32>()).prop_map(|(datapath_id, n_buffers, n_tables, auxiliary_id, capabilities)| {
            OfBody::FeaturesReply(SwitchFeatures { datapath_id, n_buffers, n_tables, auxiliary_id, capabilities })
        }),
        (any::<u32>(), any::<u8>(), any::<u8>(), any::<u64>(), any::<u32>(), prop::collection::vec(any::<u8>(), 1..256)).prop_map(|(buffer_id, reason, table_id, cookie, in_port, frame)| {
            OfBody::PacketIn(PacketIn { buffer_id, reason, table_id, cookie, in_port, frame })
        }),
        (any::<u32>(), any::<u32>(), actions(), bytes(256))
            .prop_map(|(buffer_id, in_port, actions, data)| OfBody::PacketOut(PacketOut { buffer_id, in_port, actions, data })),
        flow_mod().prop_map(OfBody::FlowMod),
        (prop::sample::select(vec![4u8, 7, 8, 9, 11, 12, 15, 18, 19, 20, 29]), bytes(64))
            .prop_map(|(msg_type, payload)| OfBody::Passthrough { msg_type, payload }),
    ];
    (any::<u32>(), body).prop_map(|(xid, body)| OfMessage::new(xid, body))
}

/// Every topology the crate ships: the constructors and the scenario files.
pub fn bundled_topologies() -> Vec<(String, TopologySpec)> {
    let mut out = vec![
        ("default".to_string(), TopologySpec::default()),
        ("line(4,8)".to_string(), TopologySpec::line(4, 8)),
        ("line(8,8)".to_string(), TopologySpec::line(8, 8)),
        ("ring_with_chord(8,16)".to_string(), TopologySpec::ring_with_chord(8, 16)),
        ("ring_with_chord(12,24)".to_string(), TopologySpec::ring_with_chord(12, 24)),
    ];
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut files: Vec<_> = std::fs::read_dir(&dir).expect("scenarios dir").flatten().map(|e| e.path()).collect();
    files.sort();
    for p in files {
        let spec = ScenarioSpec::load(&p).expect("bundled scenario loads");
        out.push((p.file_name().unwrap().to_string_lossy().into_owned(), spec.topology));
    }
    out
}

/// Every simple path, by DFS; the answer is the shortest, smallest by
/// dpid sequence.
pub fn brute_shortest(t: &TopologySpec, from: u64, to: u64, excluded: &BTreeSet<u64>) -> Option<Vec<u64>> {
    fn dfs(t: &TopologySpec, path: &mut Vec<u64>, to: u64, excluded: &BTreeSet<u64>, best: &mut Option<Vec<u64>>) {
        let u = *path.last().unwrap();
        if u == to {
            let better = match best {
                None => true,
                Some(b) => (path.len(), &*path) < (b.len(), &*b),
            };
            if better {
                *best = Some(path.clone());
            }
            return;
        }
        if best.as_ref().is_some_and(|b| path.len() >= b.len()) {
            return;
        }
        let mut next: Vec<u64> = t.neighbors(u).into_iter().map(|(_, r)| r.dpid).collect();
        next.sort_unstable();
        next.dedup();
        for v in next {
            if !excluded.contains(&v) && !path.contains(&v) {
                path.push(v);
                dfs(t, path, to, excluded, best);
                path.pop();
            }
        }
    }
    if excluded.contains(&from) || excluded.contains(&to) {
        return None;
    }
    let mut best = None;
    dfs(t, &mut vec![from], to, excluded, &mut best);
    best
}

/// Removing each switch in turn from each bundled topology: the engine's
/// recalculated host-pair paths equal the brute-force answer. Returns the
/// number of paths compared.
pub fn recalculated_paths() -> Result<usize, String> {
    let mut compared = 0;
    for (name, t) in bundled_topologies() {
        for dpid in t.dpids() {
            let excluded = BTreeSet::from([dpid]);
            for (a, b, path) in ledgernet::intent::affected_paths(&t, &BTreeSet::new(), &excluded) {
                let oracle = brute_shortest(&t, a.attach.dpid, b.attach.dpid, &excluded);
                if Some(&path) != oracle.as_ref() {
                    return Err(format!("{name}: {} -> {} avoiding S{dpid}: {path:?} vs {oracle:?}", a.name, b.name));
                }
                compared += 1;
            }
        }
    }
    Ok(compared)
}
