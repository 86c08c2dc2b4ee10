use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::ofwire::MacAddr;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchSpec {
    pub dpid: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub dpid: u64,
    pub port: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: PortRef,
    pub b: PortRef,
    #[serde(default = "default_capacity")]
    pub capacity_bps: u64,
}

fn default_capacity() -> u64 {
    100_000_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostSpec {
    pub name: String,
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub attach: PortRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub switches: Vec<SwitchSpec>,
    pub links: Vec<LinkSpec>,
    pub hosts: Vec<HostSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("duplicate datapath id {0}")]
    DuplicateDatapathId(u64),
    #[error("duplicate address {0}")]
    DuplicateAddress(String),
    #[error("port S{}:{} used twice", .0.dpid, .0.port)]
    PortInUse(PortRef),
    #[error("unknown switch {0}")]
    UnknownSwitch(u64),
    #[error("switch graph is not connected")]
    Disconnected,
}

/// What sits behind a switch port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortPeer {
    Host(usize),
    Switch(PortRef),
}

pub const HOST_PORT_BASE: u32 = 1;
pub const TRUNK_PORT_BASE: u32 = 20;

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::ring_with_chord(6, 25)
    }
}

impl TopologySpec {
    /// `n` switches in a ring with one chord (2 to n-1 when n ≥ 5), hosts
    /// spread round-robin. Host i gets 10.0.0.i.
    pub fn ring_with_chord(n: u64, hosts: usize) -> TopologySpec {
        let switches: Vec<SwitchSpec> = (1..=n).map(|dpid| SwitchSpec { dpid }).collect();
        let mut next_trunk: BTreeMap<u64, u32> = BTreeMap::new();
        let mut trunk = |dpid: u64| {
            let p = next_trunk.entry(dpid).or_insert(TRUNK_PORT_BASE);
            *p += 1;
            PortRef { dpid, port: *p - 1 }
        };
        let mut links = Vec::new();
        if n >= 2 {
            let pairs: Vec<(u64, u64)> = if n == 2 { vec![(1, 2)] } else { (1..=n).map(|i| (i, i % n + 1)).collect() };
            for (a, b) in pairs {
                links.push(LinkSpec { a: trunk(a), b: trunk(b), capacity_bps: default_capacity() });
            }
        }
        if n >= 5 {
            links.push(LinkSpec { a: trunk(2), b: trunk(n - 1), capacity_bps: default_capacity() });
        }
        TopologySpec { switches, links, hosts: spread_hosts(n, hosts) }
    }

    /// Switches 1..=n in a line.
    pub fn line(n: u64, hosts: usize) -> TopologySpec {
        let switches: Vec<SwitchSpec> = (1..=n).map(|dpid| SwitchSpec { dpid }).collect();
        let links = (1..n)
            .map(|i| LinkSpec {
                a: PortRef { dpid: i, port: TRUNK_PORT_BASE + 1 },
                b: PortRef { dpid: i + 1, port: TRUNK_PORT_BASE },
                capacity_bps: default_capacity(),
            })
            .collect();
        TopologySpec { switches, links, hosts: spread_hosts(n, hosts) }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut dpids = BTreeSet::new();
        for s in &self.switches {
            if !dpids.insert(s.dpid) {
                return Err(TopologyError::DuplicateDatapathId(s.dpid));
            }
        }
        let mut ports = BTreeSet::new();
        let mut claim = |p: PortRef| {
            if !dpids.contains(&p.dpid) {
                return Err(TopologyError::UnknownSwitch(p.dpid));
            }
            if !ports.insert(p) {
                return Err(TopologyError::PortInUse(p));
            }
            Ok(())
        };
        for l in &self.links {
            claim(l.a)?;
            claim(l.b)?;
        }
        let (mut ips, mut macs, mut names) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
        for h in &self.hosts {
            claim(h.attach)?;
            if !ips.insert(h.ip) {
                return Err(TopologyError::DuplicateAddress(h.ip.to_string()));
            }
            if !macs.insert(h.mac) {
                return Err(TopologyError::DuplicateAddress(h.mac.to_string()));
            }
            if !names.insert(h.name.as_str()) {
                return Err(TopologyError::DuplicateAddress(h.name.clone()));
            }
        }
        if let Some(first) = self.switches.first() {
            let seen = self.reachable(first.dpid, &BTreeSet::new());
            if seen.len() != self.switches.len() {
                return Err(TopologyError::Disconnected);
            }
        }
        Ok(())
    }

    pub fn dpids(&self) -> impl Iterator<Item = u64> + '_ {
        self.switches.iter().map(|s| s.dpid)
    }

    pub fn host(&self, name: &str) -> Option<(usize, &HostSpec)> {
        self.hosts.iter().enumerate().find(|(_, h)| h.name == name)
    }

    pub fn host_by_ip(&self, ip: Ipv4Addr) -> Option<(usize, &HostSpec)> {
        self.hosts.iter().enumerate().find(|(_, h)| h.ip == ip)
    }

    /// Every port with its peer.
    pub fn port_map(&self) -> BTreeMap<PortRef, PortPeer> {
        let mut m = BTreeMap::new();
        for l in &self.links {
            m.insert(l.a, PortPeer::Switch(l.b));
            m.insert(l.b, PortPeer::Switch(l.a));
        }
        for (i, h) in self.hosts.iter().enumerate() {
            m.insert(h.attach, PortPeer::Host(i));
        }
        m
    }

    /// Ports facing hosts on `dpid`.
    pub fn edge_ports(&self, dpid: u64) -> Vec<u32> {
        let mut v: Vec<u32> = self.hosts.iter().filter(|h| h.attach.dpid == dpid).map(|h| h.attach.port).collect();
        v.sort_unstable();
        v
    }

    pub fn is_edge_port(&self, p: PortRef) -> bool {
        self.hosts.iter().any(|h| h.attach == p)
    }

    /// Neighbors of `dpid` as (local port, remote port), ordered by remote dpid.
    pub fn neighbors(&self, dpid: u64) -> Vec<(PortRef, PortRef)> {
        let mut v: Vec<(PortRef, PortRef)> = self
            .links
            .iter()
            .filter_map(|l| {
                if l.a.dpid == dpid {
                    Some((l.a, l.b))
                } else if l.b.dpid == dpid {
                    Some((l.b, l.a))
                } else {
                    None
                }
            })
            .collect();
        v.sort_by_key(|(local, remote)| (remote.dpid, local.port));
        v
    }

    /// Port on `from` leading to neighbor `to` (lowest port if parallel).
    pub fn port_toward(&self, from: u64, to: u64) -> Option<u32> {
        self.neighbors(from).into_iter().find(|(_, r)| r.dpid == to).map(|(l, _)| l.port)
    }

    fn reachable(&self, from: u64, excluded: &BTreeSet<u64>) -> BTreeSet<u64> {
        let mut seen = BTreeSet::from([from]);
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            for (_, r) in self.neighbors(u) {
                if !excluded.contains(&r.dpid) && seen.insert(r.dpid) {
                    stack.push(r.dpid);
                }
            }
        }
        seen
    }

    /// Fewest-hop switch path; among equals, the lexicographically smallest
    /// dpid sequence.
    pub fn shortest_path(&self, from: u64, to: u64, excluded: &BTreeSet<u64>) -> Option<Vec<u64>> {
        if excluded.contains(&from) || excluded.contains(&to) {
            return None;
        }
        let mut heap = BinaryHeap::from([Reverse((0usize, vec![from]))]);
        let mut done = BTreeSet::new();
        while let Some(Reverse((cost, path))) = heap.pop() {
            let u = *path.last().expect("non-empty");
            if !done.insert(u) {
                continue;
            }
            if u == to {
                return Some(path);
            }
            for (_, r) in self.neighbors(u) {
                if !excluded.contains(&r.dpid) && !done.contains(&r.dpid) {
                    let mut p = path.clone();
                    p.push(r.dpid);
                    heap.push(Reverse((cost + 1, p)));
                }
            }
        }
        None
    }
}

fn spread_hosts(n: u64, count: usize) -> Vec<HostSpec> {
    let mut next_port: BTreeMap<u64, u32> = BTreeMap::new();
    (1..=count)
        .map(|i| {
            let dpid = (i as u64 - 1) % n.max(1) + 1;
            let p = next_port.entry(dpid).or_insert(HOST_PORT_BASE);
            *p += 1;
            HostSpec {
                name: format!("h{i}"),
                ip: Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 0, 0, 0)) + i as u32),
                mac: MacAddr::from_u64(i as u64),
                attach: PortRef { dpid, port: *p - 1 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_six_by_twenty_five() {
        let t = TopologySpec::default();
        t.validate().unwrap();
        assert_eq!((t.switches.len(), t.hosts.len()), (6, 25));
        assert_eq!(t.host("h9").unwrap().1.ip, Ipv4Addr::new(10, 0, 0, 9));
    }

    #[test]
    fn duplicate_dpid_rejected() {
        let mut t = TopologySpec::line(2, 0);
        t.switches[1].dpid = 1;
        assert_eq!(t.validate(), Err(TopologyError::DuplicateDatapathId(1)));
    }

    #[test]
    fn single_switch_is_valid() {
        TopologySpec::line(1, 0).validate().unwrap();
    }

    #[test]
    fn path_ties_break_on_lowest_ids() {
        let t = TopologySpec::default();
        // ring 1..6 with chord 2-5
        assert_eq!(t.shortest_path(1, 4, &BTreeSet::new()), Some(vec![1, 2, 3, 4]));
        assert_eq!(t.shortest_path(1, 5, &BTreeSet::new()), Some(vec![1, 2, 5]));
        assert_eq!(t.shortest_path(2, 4, &BTreeSet::from([3])), Some(vec![2, 5, 4]));
    }
}
