use std::collections::VecDeque;

use crate::sched::Micros;

/// Single-server FIFO work queue with a fixed service cost per job; the
/// controller's processing loop.
#[derive(Debug, Clone)]
pub struct LoadMeter {
    service_us: Micros,
    capacity: usize,
    next_free: Micros,
    busy: VecDeque<(Micros, Micros)>,
    accepted: u64,
    dropped: u64,
}

impl LoadMeter {
    pub fn new(service_us: Micros, capacity: usize) -> Self {
        assert!(service_us > 0, "service cost must be positive");
        LoadMeter { service_us, capacity, next_free: 0, busy: VecDeque::new(), accepted: 0, dropped: 0 }
    }

    pub fn service_us(&self) -> Micros {
        self.service_us
    }

    /// Jobs in the system (queued or in service) at `t`.
    pub fn queue_len(&self, t: Micros) -> usize {
        self.next_free.saturating_sub(t).div_ceil(self.service_us) as usize
    }

    /// Enqueues a job arriving at `t`; returns its completion time, or None
    /// if the queue is full.
    pub fn arrive(&mut self, t: Micros) -> Option<Micros> {
        if self.queue_len(t) >= self.capacity {
            self.dropped += 1;
            return None;
        }
        let start = t.max(self.next_free);
        let end = start + self.service_us;
        self.next_free = end;
        match self.busy.back_mut() {
            Some(last) if last.1 >= start => last.1 = end,
            _ => self.busy.push_back((start, end)),
        }
        self.accepted += 1;
        Some(end)
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Busy-time fraction over [from, to).
    pub fn busy_fraction(&self, from: Micros, to: Micros) -> f64 {
        if to <= from {
            return 0.0;
        }
        let busy: Micros = self
            .busy
            .iter()
            .map(|&(a, b)| b.min(to).saturating_sub(a.max(from)))
            .sum();
        (busy as f64 / (to - from) as f64).clamp(0.0, 1.0)
    }

    /// Forgets busy periods that ended before `t`.
    pub fn prune(&mut self, t: Micros) {
        while self.busy.front().is_some_and(|&(_, b)| b < t) {
            self.busy.pop_front();
        }
    }
}
