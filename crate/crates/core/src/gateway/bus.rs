//! Sequenced event fan-out with a bounded replay ring.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::sched::Micros;
use crate::simnet::EventKind;

pub const DEFAULT_RING: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub timestamp_us: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StreamError {
    #[error("sequence {requested} was evicted; oldest retained is {oldest}")]
    SeqTooOld { requested: u64, oldest: u64 },
    #[error("sequence {requested} is ahead of the stream head {next}")]
    SeqAhead { requested: u64, next: u64 },
}

struct Ring {
    events: VecDeque<Arc<ApiEvent>>,
    next: u64,
}

/// Publisher side is single-writer; any number of subscribers replay from
/// the ring and then follow the live tail.
#[derive(Clone)]
pub struct EventBus {
    ring: Arc<Mutex<Ring>>,
    live: broadcast::Sender<Arc<ApiEvent>>,
    capacity: usize,
}

pub struct Subscription {
    pub replay: Vec<Arc<ApiEvent>>,
    pub live: broadcast::Receiver<Arc<ApiEvent>>,
    /// First seq the live tail must deliver.
    pub resume_at: u64,
}

impl EventBus {
    pub fn new(capacity: usize) -> Self {
        let (live, _) = broadcast::channel(capacity.max(16));
        EventBus { ring: Arc::new(Mutex::new(Ring { events: VecDeque::new(), next: 0 })), live, capacity: capacity.max(1) }
    }

    pub fn publish(&self, kind: EventKind, payload: serde_json::Value, timestamp_us: Micros) -> u64 {
        let mut ring = self.ring.lock().expect("bus lock");
        let seq = ring.next;
        ring.next += 1;
        let ev = Arc::new(ApiEvent { seq, kind, payload, timestamp_us });
        ring.events.push_back(ev.clone());
        while ring.events.len() > self.capacity {
            ring.events.pop_front();
        }
        // Sent under the lock so a concurrent subscribe sees each event exactly once.
        let _ = self.live.send(ev);
        seq
    }

    pub fn next_seq(&self) -> u64 {
        self.ring.lock().expect("bus lock").next
    }

    pub fn oldest_seq(&self) -> u64 {
        let ring = self.ring.lock().expect("bus lock");
        ring.events.front().map_or(ring.next, |e| e.seq)
    }

    pub fn subscribe(&self, from_seq: u64) -> Result<Subscription, StreamError> {
        let ring = self.ring.lock().expect("bus lock");
        let oldest = ring.events.front().map_or(ring.next, |e| e.seq);
        if from_seq < oldest {
            return Err(StreamError::SeqTooOld { requested: from_seq, oldest });
        }
        if from_seq > ring.next {
            return Err(StreamError::SeqAhead { requested: from_seq, next: ring.next });
        }
        let replay = ring.events.iter().skip((from_seq - oldest) as usize).cloned().collect();
        Ok(Subscription { replay, live: self.live.subscribe(), resume_at: ring.next })
    }

    /// Everything retained from `from_seq` on, without following.
    pub fn snapshot_from(&self, from_seq: u64) -> Result<Vec<Arc<ApiEvent>>, StreamError> {
        self.subscribe(from_seq).map(|s| s.replay)
    }
}
