//! Single-queue discrete-event engine.
//!
//! Events are ordered by `(at, seq)` where `seq` is a global insertion
//! counter, so events scheduled for the same instant run in the order they
//! were scheduled. The engine is generic over the payload and knows nothing
//! about the radio model; the simulation drives it through [`Engine::run_until`]
//! or by popping events one at a time with [`Engine::pop_until`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone)]
pub struct Event<E> {
    pub at: SimTime,
    pub seq: u64,
    pub kind: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug)]
pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<E>>,
    processed: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Enqueues `kind` at `at` and returns its sequence number.
    ///
    /// Panics if `at` lies before the engine clock: scheduling into the past
    /// is a logic error in the caller, never a recoverable condition.
    pub fn schedule(&mut self, at: SimTime, kind: E) -> u64 {
        assert!(
            at >= self.now,
            "event scheduled in the past: at={} now={}",
            at,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event { at, seq, kind });
        seq
    }

    pub fn schedule_in(&mut self, delay: SimDuration, kind: E) -> u64 {
        let at = self.now + delay;
        self.schedule(at, kind)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.at)
    }

    /// Pops the next event if it is due at or before `end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event<E>> {
        match self.queue.peek() {
            Some(e) if e.at <= end => {
                let ev = self.queue.pop().expect("peeked");
                debug_assert!(ev.at >= self.now);
                self.now = ev.at;
                self.processed += 1;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Moves the clock forward to `t` without processing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes every event with `at <= end` in `(at, seq)` order, then sets
    /// the clock to `end`. The handler may schedule further events.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F)
    where
        F: FnMut(&mut Engine<E>, Event<E>),
    {
        while let Some(ev) = self.pop_until(end) {
            handler(self, ev);
        }
        self.advance_to(end);
    }
}
