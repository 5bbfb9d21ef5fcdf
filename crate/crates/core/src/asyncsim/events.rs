//! Simulated clock and event queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Event kinds, in tie-break order for simultaneous events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    UploadArrival = 0,
    TrainDone = 1,
    DownlinkArrival = 2,
}

#[derive(Debug)]
struct Entry<P> {
    time: f64,
    kind: EventKind,
    node: usize,
    seq: u64,
    payload: P,
}

impl<P> Entry<P> {
    fn key(&self) -> (f64, EventKind, usize, u64) {
        (self.time, self.kind, self.node, self.seq)
    }
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // Reversed so that BinaryHeap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        let (t1, k1, n1, s1) = self.key();
        let (t2, k2, n2, s2) = other.key();
        t2.total_cmp(&t1)
            .then(k2.cmp(&k1))
            .then(n2.cmp(&n1))
            .then(s2.cmp(&s1))
    }
}

/// Min-heap keyed by `(time, kind, node, insertion sequence)`.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    now: f64,
    seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: 0.0,
            seq: 0,
        }
    }
}

#[derive(Debug)]
pub struct Event<P> {
    pub time: f64,
    pub kind: EventKind,
    pub node: usize,
    pub payload: P,
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Schedule at absolute time `time`; times in the past are clamped to now.
    pub fn schedule(&mut self, time: f64, kind: EventKind, node: usize, payload: P) {
        let time = time.max(self.now);
        self.seq += 1;
        self.heap.push(Entry {
            time,
            kind,
            node,
            seq: self.seq,
            payload,
        });
    }

    pub fn pop(&mut self) -> Option<Event<P>> {
        let e = self.heap.pop()?;
        self.now = e.time;
        Some(Event {
            time: e.time,
            kind: e.kind,
            node: e.node,
            payload: e.payload,
        })
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
