//! Host traffic: constant-rate background pairs and the spoofed flood.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::frame::Frame;
use super::scenario::ScenarioError;
use super::topology::TopologySpec;
use crate::ofwire::MacAddr;
use crate::sched::{Micros, SEC};

/// Locally administered prefix for spoofed source MACs.
const SPOOF_MAC_BASE: u64 = 0x0200_0000_0000;

/// `n` distinct ordered host pairs.
pub fn background_pairs<R: Rng>(topo: &TopologySpec, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let h = topo.hosts.len();
    let mut all: Vec<(usize, usize)> = (0..h).flat_map(|a| (0..h).filter(move |b| *b != a).map(move |b| (a, b))).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

pub fn period_us(rate: f64) -> Option<Micros> {
    (rate.is_finite() && rate > 0.0).then(|| ((SEC as f64 / rate).round() as Micros).max(1))
}

/// `n` distinct addresses from 172.16.0.0/12, none belonging to a host.
pub fn spoofed_pool<R: Rng>(topo: &TopologySpec, n: usize, rng: &mut R) -> Vec<Ipv4Addr> {
    let taken: BTreeSet<Ipv4Addr> = topo.hosts.iter().map(|h| h.ip).collect();
    let mut seen = BTreeSet::new();
    let mut pool = Vec::with_capacity(n);
    while pool.len() < n.min(1 << 20) {
        let a = Ipv4Addr::from(0xAC10_0000u32 | rng.gen_range(1..(1u32 << 20)));
        if !taken.contains(&a) && seen.insert(a) {
            pool.push(a);
        }
    }
    pool
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackStream {
    pub victim: usize,
    pub attacker: usize,
    pub period_us: Micros,
    pub frame_size: u32,
}

/// One flood: a stream per victim, sources rotating over `pool`.
#[derive(Debug, Clone, Serialize)]
pub struct AttackPlan {
    pub streams: Vec<AttackStream>,
    pub pool: Vec<Ipv4Addr>,
}

impl AttackPlan {
    pub fn new<R: Rng>(
        topo: &TopologySpec,
        victims: &[String],
        attackers: &[String],
        spoofed: usize,
        rate: f64,
        frame_size: u32,
        rng: &mut R,
    ) -> Result<AttackPlan, ScenarioError> {
        let find = |n: &String| topo.host(n).map(|(i, _)| i).ok_or_else(|| ScenarioError::UnknownHost(n.clone()));
        let victims = victims.iter().map(find).collect::<Result<Vec<_>, _>>()?;
        let mut attackers = attackers.iter().map(find).collect::<Result<Vec<_>, _>>()?;
        if attackers.is_empty() {
            let victim_sw: BTreeSet<u64> = victims.iter().map(|&v| topo.hosts[v].attach.dpid).collect();
            let pick = (0..topo.hosts.len())
                .rev()
                .find(|i| !victims.contains(i) && !victim_sw.contains(&topo.hosts[*i].attach.dpid))
                .or_else(|| (0..topo.hosts.len()).rev().find(|i| !victims.contains(i)));
            attackers.extend(pick);
        }
        let Some(period_us) = period_us(rate) else {
            return Ok(AttackPlan { streams: Vec::new(), pool: Vec::new() });
        };
        if attackers.is_empty() {
            return Ok(AttackPlan { streams: Vec::new(), pool: Vec::new() });
        }
        let streams = victims
            .iter()
            .enumerate()
            .map(|(i, &victim)| AttackStream { victim, attacker: attackers[i % attackers.len()], period_us, frame_size })
            .collect();
        let pool = spoofed_pool(topo, spoofed.max(1), rng);
        Ok(AttackPlan { streams, pool })
    }

    /// The `k`-th frame of stream `s`, with a fresh source MAC per frame and
    /// a source address drawn from the pool by hashing `(s, k)`.
    pub fn frame(&self, topo: &TopologySpec, s: usize, k: u64, id: u64) -> Frame {
        let st = &self.streams[s];
        let v = &topo.hosts[st.victim];
        Frame {
            id,
            eth_src: MacAddr::from_u64(SPOOF_MAC_BASE | (id & 0xFF_FFFF_FFFF)),
            eth_dst: v.mac,
            ipv4_src: self.pool[(mix((s as u64) << 48 ^ k) % self.pool.len() as u64) as usize],
            ipv4_dst: v.ip,
            size: st.frame_size,
        }
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn host_frame(topo: &TopologySpec, src: usize, dst: usize, size: u32, id: u64) -> Frame {
    let (a, b) = (&topo.hosts[src], &topo.hosts[dst]);
    Frame { id, eth_src: a.mac, eth_dst: b.mac, ipv4_src: a.ip, ipv4_dst: b.ip, size }
}

pub fn announce_frame(topo: &TopologySpec, src: usize, id: u64) -> Frame {
    let a = &topo.hosts[src];
    Frame { id, eth_src: a.mac, eth_dst: super::frame::BROADCAST, ipv4_src: a.ip, ipv4_dst: Ipv4Addr::BROADCAST, size: 64 }
}
