use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use super::{Micros, SimError};

/// Opaque handle returned by [`EventQueue::schedule`], used for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug)]
struct Entry<E> {
    time: Micros,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Discrete-event queue ordered by `(time, insertion sequence)`.
///
/// Equal-time events pop in the order they were scheduled. The queue also
/// owns the simulation clock: `now` only moves forward, and scheduling an
/// event before `now` is a causality violation.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    cancelled: HashSet<u64>,
    next_seq: u64,
    now: Micros,
    dispatched: u64,
    trace: Option<Vec<(Micros, u64)>>,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            next_seq: 0,
            now: 0,
            dispatched: 0,
            trace: None,
        }
    }

    /// Records `(time, sequence)` of every popped event.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> Option<&[(Micros, u64)]> {
        self.trace.as_deref()
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// Total events dispatched over the queue's lifetime.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Number of live (not cancelled) pending events.
    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn schedule(&mut self, time: Micros, payload: E) -> Result<EventHandle, SimError> {
        if time < self.now {
            return Err(SimError::CausalityViolation {
                now: self.now,
                requested: time,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { time, seq, payload }));
        Ok(EventHandle(seq))
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let pending = self.heap.iter().any(|Reverse(e)| e.seq == handle.0);
        pending && self.cancelled.insert(handle.0)
    }

    /// Pending live events, in no particular order.
    pub fn pending(&self) -> impl Iterator<Item = (Micros, &E)> {
        self.heap
            .iter()
            .filter(|Reverse(e)| !self.cancelled.contains(&e.seq))
            .map(|Reverse(e)| (e.time, &e.payload))
    }

    fn peek_time(&mut self) -> Option<Micros> {
        while let Some(Reverse(top)) = self.heap.peek() {
            if self.cancelled.remove(&top.seq) {
                self.heap.pop();
                continue;
            }
            return Some(top.time);
        }
        None
    }

    /// Pops the earliest live event and advances `now` to its time.
    pub fn pop(&mut self) -> Option<(Micros, E)> {
        self.peek_time()?;
        let Reverse(entry) = self.heap.pop()?;
        debug_assert!(entry.time >= self.now);
        self.now = entry.time;
        self.dispatched += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push((entry.time, entry.seq));
        }
        Some((entry.time, entry.payload))
    }

    /// Dispatches every event with time `<= t_end` through `handler`, which
    /// may schedule further events. Returns the number dispatched.
    ///
    /// Afterwards `now` is `t_end` if events remain beyond the horizon,
    /// otherwise the time of the last dispatched event.
    pub fn run_until<F>(&mut self, t_end: Micros, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, Micros, E),
    {
        let mut count = 0;
        while let Some(t) = self.peek_time() {
            if t > t_end {
                self.now = self.now.max(t_end);
                break;
            }
            let (t, payload) = self.pop().expect("peeked event");
            handler(self, t, payload);
            count += 1;
        }
        count
    }
}
