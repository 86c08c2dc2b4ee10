//! Monitoring and detection: sliding windows over per-interval samples, a
//! packet_in flood detector, defense synthesis per ladder stage, and the
//! controller load model.

mod defense;
mod load;
mod trace;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::sched::{Micros, MS, SEC};

pub use defense::{synthesize, DefenseAction, DefenseError, DefenseProfile, IpStage, RateLimit, RateTarget};
pub use load::LoadMeter;
pub use trace::{Annotation, MetricsRow, MetricsTrace};

/// Identifies a switch port as "S<dpid>:<port>".
pub type LinkId = String;

pub fn link_id(dpid: u64, port: u32) -> LinkId {
    format!("S{dpid}:{port}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub in_port: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// Bytes and frames leaving a port.
    Port,
    /// Bytes and frames arriving on a port.
    PortRx,
    /// packet_in messages a switch raised for one flow key.
    PacketIn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficSample {
    pub kind: SampleKind,
    pub switch: u64,
    pub port: u32,
    pub byte_count: u64,
    pub packet_count: u64,
    pub flow: Option<FlowKey>,
    /// Start of the sampling interval.
    pub timestamp_us: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnomalyKind {
    PacketInFlood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub switch: u64,
    pub in_port: u32,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    /// packet_in per second over the window.
    pub rate: f64,
    pub byte_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub victim: Ipv4Addr,
    /// Ranked by rate, highest first; never empty.
    pub offenders: Vec<Offender>,
    pub rate: f64,
    pub baseline: f64,
    pub window: (Micros, Micros),
    pub raised_at: Micros,
}

impl Anomaly {
    /// Ingress (switch, port) pairs carrying the flood, ranked by rate.
    pub fn offending_links(&self) -> Vec<(u64, u32, f64)> {
        let mut by_link: BTreeMap<(u64, u32), f64> = BTreeMap::new();
        for o in &self.offenders {
            *by_link.entry((o.switch, o.in_port)).or_default() += o.rate;
        }
        let mut v: Vec<(u64, u32, f64)> = by_link.into_iter().map(|((s, p), r)| (s, p, r)).collect();
        v.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardConfig {
    pub k: f64,
    pub sustain_us: Micros,
    pub window_us: Micros,
    pub bucket_us: Micros,
    /// packet_in per second below which a baseline is never set.
    pub baseline_floor: f64,
    pub warmup_us: Micros,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig { k: 5.0, sustain_us: SEC, window_us: SEC, bucket_us: 100 * MS, baseline_floor: 10.0, warmup_us: 2 * SEC }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GuardEvent {
    AnomalyRaised(Anomaly),
    AnomalyCleared { victim: Ipv4Addr, at: Micros },
}

#[derive(Default)]
struct VictimState {
    buckets: BTreeMap<u64, f64>,
    offenders: BTreeMap<(u64, u32, Ipv4Addr), BTreeMap<u64, (f64, f64)>>,
    baseline_sum: f64,
    baseline_n: u64,
    above_since: Option<Micros>,
    active: Option<Anomaly>,
}

pub struct Guard {
    cfg: GuardConfig,
    started: Option<Micros>,
    evaluated_to: Micros,
    victims: BTreeMap<Ipv4Addr, VictimState>,
    links: BTreeMap<LinkId, BTreeMap<u64, (f64, f64)>>,
    ingress: BTreeMap<LinkId, BTreeMap<u64, (f64, f64)>>,
    stale: u64,
}

impl Guard {
    pub fn new(cfg: GuardConfig) -> Self {
        Guard { cfg, started: None, evaluated_to: 0, victims: BTreeMap::new(), links: BTreeMap::new(), ingress: BTreeMap::new(), stale: 0 }
    }

    pub fn config(&self) -> &GuardConfig {
        &self.cfg
    }

    pub fn stale_samples(&self) -> u64 {
        self.stale
    }

    fn bucket(&self, t: Micros) -> u64 {
        t / self.cfg.bucket_us
    }

    fn window_buckets(&self) -> u64 {
        (self.cfg.window_us / self.cfg.bucket_us).max(1)
    }

    /// Adds a sample to its window. Samples older than the current window are
    /// dropped and counted.
    pub fn ingest(&mut self, s: &TrafficSample) -> bool {
        if self.started.is_none() {
            self.started = Some(s.timestamp_us);
        }
        if s.timestamp_us + self.cfg.window_us < self.evaluated_to {
            self.stale += 1;
            return false;
        }
        let b = self.bucket(s.timestamp_us);
        match s.kind {
            SampleKind::Port => {
                let e = self.links.entry(link_id(s.switch, s.port)).or_default().entry(b).or_default();
                e.0 += s.byte_count as f64;
                e.1 += s.packet_count as f64;
            }
            SampleKind::PortRx => {
                let e = self.ingress.entry(link_id(s.switch, s.port)).or_default().entry(b).or_default();
                e.0 += s.byte_count as f64;
                e.1 += s.packet_count as f64;
            }
            SampleKind::PacketIn => {
                let Some(flow) = s.flow else { return false };
                let v = self.victims.entry(flow.dst).or_default();
                *v.buckets.entry(b).or_default() += s.packet_count as f64;
                let e = v.offenders.entry((s.switch, flow.in_port, flow.src)).or_default().entry(b).or_default();
                e.0 += s.packet_count as f64;
                e.1 += s.byte_count as f64;
            }
        }
        true
    }

    fn range(&self, now: Micros) -> std::ops::Range<u64> {
        let end = self.bucket(now);
        end.saturating_sub(self.window_buckets())..end
    }

    fn window_secs(&self) -> f64 {
        self.cfg.window_us as f64 / SEC as f64
    }

    /// packet_in per second toward `victim` over the window ending at `now`.
    pub fn packet_in_rate(&self, victim: Ipv4Addr, now: Micros) -> f64 {
        let r = self.range(now);
        self.victims.get(&victim).map_or(0.0, |v| v.buckets.range(r).map(|(_, c)| c).sum::<f64>()) / self.window_secs()
    }

    /// Bytes per second leaving `link` over the window ending at `now`.
    pub fn link_rate(&self, link: &str, now: Micros) -> f64 {
        let r = self.range(now);
        self.links.get(link).map_or(0.0, |l| l.range(r).map(|(_, (b, _))| b).fold(0.0, |a, b| a + b)) / self.window_secs()
    }

    /// Bytes per second arriving on `link` over the window ending at `now`.
    pub fn ingress_rate(&self, link: &str, now: Micros) -> f64 {
        let r = self.range(now);
        self.ingress.get(link).map_or(0.0, |l| l.range(r).map(|(_, (b, _))| b).fold(0.0, |a, b| a + b)) / self.window_secs()
    }

    /// Per-bucket byte rates of `link` for buckets in [from, to).
    pub fn link_bucket_rates(&self, link: &str, from: Micros, to: Micros) -> Vec<f64> {
        let per_s = SEC as f64 / self.cfg.bucket_us as f64;
        let (a, b) = (self.bucket(from), self.bucket(to));
        (a..b)
            .map(|i| self.links.get(link).and_then(|l| l.get(&i)).map_or(0.0, |(bytes, _)| bytes * per_s))
            .collect()
    }

    pub fn baseline(&self, victim: Ipv4Addr) -> f64 {
        self.victims.get(&victim).map_or(self.cfg.baseline_floor, |v| self.baseline_of(v))
    }

    fn baseline_of(&self, v: &VictimState) -> f64 {
        let mean = if v.baseline_n == 0 { 0.0 } else { v.baseline_sum / v.baseline_n as f64 };
        mean.max(self.cfg.baseline_floor)
    }

    /// Flows toward `victim` seen in the window, ranked by rate.
    pub fn offenders(&self, victim: Ipv4Addr, now: Micros) -> Vec<Offender> {
        let Some(v) = self.victims.get(&victim) else { return Vec::new() };
        let r = self.range(now);
        let secs = self.window_secs();
        let mut out: Vec<Offender> = v
            .offenders
            .iter()
            .filter_map(|(&(switch, in_port, src), series)| {
                let (n, bytes) = series.range(r.clone()).fold((0.0, 0.0), |acc, (_, &(c, b))| (acc.0 + c, acc.1 + b));
                (n > 0.0).then(|| Offender { switch, in_port, src, dst: victim, rate: n / secs, byte_rate: bytes / secs })
            })
            .collect();
        out.sort_by(|a, b| b.rate.total_cmp(&a.rate).then((a.switch, a.in_port, a.src).cmp(&(b.switch, b.in_port, b.src))));
        out
    }

    /// Runs the detector for the window ending at `now`.
    pub fn evaluate(&mut self, now: Micros) -> Vec<GuardEvent> {
        self.evaluated_to = self.evaluated_to.max(now);
        let mut events = Vec::new();
        let warm = self.started.is_some_and(|s| now >= s + self.cfg.warmup_us);
        let per_s = SEC as f64 / self.cfg.bucket_us as f64;
        let last_bucket = self.bucket(now).checked_sub(1);
        let victims: Vec<Ipv4Addr> = self.victims.keys().copied().collect();
        for victim in victims {
            let rate = self.packet_in_rate(victim, now);
            let offenders = self.offenders(victim, now);
            let v = &self.victims[&victim];
            let baseline = self.baseline_of(v);
            let threshold = self.cfg.k * baseline;
            let above = rate > threshold;
            let last = last_bucket.and_then(|b| v.buckets.get(&b)).copied().unwrap_or(0.0) * per_s;
            let sustain = self.cfg.sustain_us;
            let window = (now.saturating_sub(self.cfg.window_us), now);
            let v = self.victims.get_mut(&victim).expect("listed");
            if above {
                let since = *v.above_since.get_or_insert(now);
                if warm && v.active.is_none() && now - since >= sustain && !offenders.is_empty() {
                    let a = Anomaly { kind: AnomalyKind::PacketInFlood, victim, offenders, rate, baseline, window, raised_at: now };
                    v.active = Some(a.clone());
                    events.push(GuardEvent::AnomalyRaised(a));
                } else if let Some(a) = v.active.as_mut() {
                    a.rate = rate;
                    a.window = window;
                    if !offenders.is_empty() {
                        a.offenders = offenders;
                    }
                }
            } else {
                v.above_since = None;
                if v.active.take().is_some() {
                    events.push(GuardEvent::AnomalyCleared { victim, at: now });
                }
                if last <= threshold {
                    v.baseline_sum += last;
                    v.baseline_n += 1;
                }
            }
            // keep a little more than one window of history
            let keep_from = self.bucket(now).saturating_sub(3 * self.window_buckets());
            let v = self.victims.get_mut(&victim).expect("listed");
            v.buckets = v.buckets.split_off(&keep_from);
            v.offenders.retain(|_, s| {
                *s = s.split_off(&keep_from);
                !s.is_empty()
            });
        }
        let keep_from = self.bucket(now).saturating_sub(60 * self.window_buckets());
        for series in self.links.values_mut().chain(self.ingress.values_mut()) {
            *series = series.split_off(&keep_from);
        }
        events
    }

    pub fn active(&self, victim: Ipv4Addr) -> Option<&Anomaly> {
        self.victims.get(&victim).and_then(|v| v.active.as_ref())
    }

    pub fn active_anomalies(&self) -> impl Iterator<Item = &Anomaly> {
        self.victims.values().filter_map(|v| v.active.as_ref())
    }
}
