use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::frame::Frame;
use crate::ofwire::{Action, FlowMod, FlowModCommand, MacAddr, MatchFields};
use crate::sched::{Micros, SEC};

pub fn matches(m: &MatchFields, f: &Frame, in_port: u32) -> bool {
    m.in_port.is_none_or(|p| p == in_port)
        && m.eth_src.is_none_or(|a| a == f.eth_src)
        && m.eth_dst.is_none_or(|a| a == f.eth_dst)
        && m.ipv4_src.is_none_or(|p| p.contains(f.ipv4_src))
        && m.ipv4_dst.is_none_or(|p| p.contains(f.ipv4_dst))
}

/// Every field `general` constrains is constrained identically in `m`.
fn covers(general: &MatchFields, m: &MatchFields) -> bool {
    (general.in_port.is_none() || general.in_port == m.in_port)
        && (general.eth_src.is_none() || general.eth_src == m.eth_src)
        && (general.eth_dst.is_none() || general.eth_dst == m.eth_dst)
        && (general.ipv4_src.is_none() || general.ipv4_src == m.ipv4_src)
        && (general.ipv4_dst.is_none() || general.ipv4_dst == m.ipv4_dst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowEntry {
    pub matches: MatchFields,
    pub priority: u16,
    pub actions: Vec<Action>,
    pub idle_timeout_s: u16,
    pub hard_timeout_s: u16,
    pub cookie: u64,
    pub installed_at: Micros,
    pub last_hit: Micros,
    pub packets: u64,
    pub bytes: u64,
    /// Insertion order; breaks priority ties.
    pub seq: u64,
}

impl FlowEntry {
    fn expired(&self, now: Micros) -> bool {
        (self.idle_timeout_s > 0 && now >= self.last_hit + u64::from(self.idle_timeout_s) * SEC)
            || (self.hard_timeout_s > 0 && now >= self.installed_at + u64::from(self.hard_timeout_s) * SEC)
    }
}

type MacPair = (MacAddr, MacAddr);

fn index_key(m: &MatchFields) -> Option<MacPair> {
    match (m.eth_src, m.eth_dst, m.ipv4_src, m.ipv4_dst) {
        (Some(s), Some(d), None, None) => Some((s, d)),
        _ => None,
    }
}

/// Priority-ordered table. Entries matching on a MAC pair only are hashed;
/// the rest are scanned in priority order.
#[derive(Debug, Default)]
pub struct FlowTable {
    entries: BTreeMap<u64, FlowEntry>,
    by_pair: HashMap<MacPair, Vec<u64>>,
    wild: BTreeSet<(Reverse<u16>, u64)>,
    next_seq: u64,
}

impl FlowTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &FlowEntry> {
        self.entries.values()
    }

    fn insert(&mut self, e: FlowEntry) {
        let seq = e.seq;
        match index_key(&e.matches) {
            Some(k) => self.by_pair.entry(k).or_default().push(seq),
            None => {
                self.wild.insert((Reverse(e.priority), seq));
            }
        }
        self.entries.insert(seq, e);
    }

    fn remove(&mut self, seq: u64) -> Option<FlowEntry> {
        let e = self.entries.remove(&seq)?;
        match index_key(&e.matches) {
            Some(k) => {
                if let Some(v) = self.by_pair.get_mut(&k) {
                    v.retain(|s| *s != seq);
                    if v.is_empty() {
                        self.by_pair.remove(&k);
                    }
                }
            }
            None => {
                self.wild.remove(&(Reverse(e.priority), seq));
            }
        }
        Some(e)
    }

    /// Applies a FlowMod; returns the number of entries touched.
    pub fn apply(&mut self, fm: &FlowMod, now: Micros) -> usize {
        match fm.command {
            FlowModCommand::Add => {
                let candidates: Vec<u64> = match index_key(&fm.matches) {
                    Some(k) => self.by_pair.get(&k).cloned().unwrap_or_default(),
                    None => self.wild.iter().filter(|(p, _)| p.0 == fm.priority).map(|(_, s)| *s).collect(),
                };
                let same: Vec<u64> = candidates
                    .into_iter()
                    .filter(|s| self.entries[s].priority == fm.priority && self.entries[s].matches == fm.matches)
                    .collect();
                for s in same {
                    self.remove(s);
                }
                let seq = self.next_seq;
                self.next_seq += 1;
                self.insert(FlowEntry {
                    matches: fm.matches,
                    priority: fm.priority,
                    actions: fm.actions.clone(),
                    idle_timeout_s: fm.idle_timeout,
                    hard_timeout_s: fm.hard_timeout,
                    cookie: fm.cookie,
                    installed_at: now,
                    last_hit: now,
                    packets: 0,
                    bytes: 0,
                    seq,
                });
                1
            }
            FlowModCommand::Modify | FlowModCommand::ModifyStrict => {
                let strict = fm.command == FlowModCommand::ModifyStrict;
                let mut n = 0;
                for e in self.entries.values_mut() {
                    let hit = if strict { e.priority == fm.priority && e.matches == fm.matches } else { covers(&fm.matches, &e.matches) };
                    if hit {
                        e.actions = fm.actions.clone();
                        n += 1;
                    }
                }
                n
            }
            FlowModCommand::Delete | FlowModCommand::DeleteStrict => {
                let strict = fm.command == FlowModCommand::DeleteStrict;
                let gone: Vec<u64> = self
                    .entries
                    .iter()
                    .filter(|(_, e)| if strict { e.priority == fm.priority && e.matches == fm.matches } else { covers(&fm.matches, &e.matches) })
                    .map(|(s, _)| *s)
                    .collect();
                for s in &gone {
                    self.remove(*s);
                }
                gone.len()
            }
        }
    }

    /// Highest-priority match; ties go to the earliest installed entry.
    pub fn find(&self, f: &Frame, in_port: u32) -> Option<&FlowEntry> {
        let wild = self
            .wild
            .iter()
            .map(|(_, s)| &self.entries[s])
            .find(|e| matches(&e.matches, f, in_port));
        let hashed = self
            .by_pair
            .get(&(f.eth_src, f.eth_dst))
            .into_iter()
            .flatten()
            .map(|s| &self.entries[s])
            .filter(|e| matches(&e.matches, f, in_port))
            .min_by_key(|e| (Reverse(e.priority), e.seq));
        match (wild, hashed) {
            (Some(a), Some(b)) => Some(if (Reverse(a.priority), a.seq) <= (Reverse(b.priority), b.seq) { a } else { b }),
            (a, b) => a.or(b),
        }
    }

    /// Looks up and counts a hit.
    pub fn lookup(&mut self, f: &Frame, in_port: u32, now: Micros) -> Option<Vec<Action>> {
        let seq = self.find(f, in_port)?.seq;
        let e = self.entries.get_mut(&seq).expect("found");
        e.packets += 1;
        e.bytes += u64::from(f.size);
        e.last_hit = now;
        Some(e.actions.clone())
    }

    /// Removes timed-out entries and returns them.
    pub fn expire(&mut self, now: Micros) -> Vec<FlowEntry> {
        let gone: Vec<u64> = self.entries.iter().filter(|(_, e)| e.expired(now)).map(|(s, _)| *s).collect();
        gone.into_iter().filter_map(|s| self.remove(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::ofwire::Ipv4Prefix;

    fn frame(src: u64, dst: u64) -> Frame {
        Frame {
            id: 0,
            eth_src: MacAddr::from_u64(src),
            eth_dst: MacAddr::from_u64(dst),
            ipv4_src: Ipv4Addr::new(10, 0, 0, src as u8),
            ipv4_dst: Ipv4Addr::new(10, 0, 0, dst as u8),
            size: 100,
        }
    }

    fn pair(src: u64, dst: u64) -> MatchFields {
        MatchFields { eth_src: Some(MacAddr::from_u64(src)), eth_dst: Some(MacAddr::from_u64(dst)), ..Default::default() }
    }

    #[test]
    fn drop_rule_beats_forwarding() {
        let mut t = FlowTable::default();
        t.apply(&FlowMod::add(pair(1, 2), 10, vec![Action::Output(3)]), 0);
        assert_eq!(t.lookup(&frame(1, 2), 1, 0), Some(vec![Action::Output(3)]));
        let drop = MatchFields { ipv4_src: Some(Ipv4Prefix::host(Ipv4Addr::new(10, 0, 0, 1))), ..Default::default() };
        t.apply(&FlowMod::add(drop, 1000, vec![]), 0);
        assert_eq!(t.lookup(&frame(1, 2), 1, 0), Some(vec![]));
        assert_eq!(t.lookup(&frame(4, 2), 1, 0), None);
    }

    #[test]
    fn add_replaces_identical_and_idle_expires() {
        let mut t = FlowTable::default();
        t.apply(&FlowMod::add(pair(1, 2), 10, vec![Action::Output(3)]).with_idle_timeout(10), 0);
        t.apply(&FlowMod::add(pair(1, 2), 10, vec![Action::Output(4)]).with_idle_timeout(10), 0);
        assert_eq!(t.len(), 1);
        t.lookup(&frame(1, 2), 1, 5 * SEC);
        assert!(t.expire(14 * SEC).is_empty());
        assert_eq!(t.expire(15 * SEC).len(), 1);
    }

    #[test]
    fn non_strict_delete_covers_more_specific() {
        let mut t = FlowTable::default();
        t.apply(&FlowMod::add(pair(1, 2), 10, vec![]), 0);
        t.apply(&FlowMod::add(pair(3, 2), 10, vec![]), 0);
        let mut del = FlowMod::add(MatchFields { eth_dst: Some(MacAddr::from_u64(2)), ..Default::default() }, 0, vec![]);
        del.command = FlowModCommand::Delete;
        assert_eq!(t.apply(&del, 0), 2);
        assert!(t.is_empty());
    }
}
