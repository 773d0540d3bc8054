//! Deterministic discrete-event core.
//!
//! Events carry an absolute fire time in integer picoseconds and a sequence
//! number assigned at insertion. The queue dispatches in `(time, sequence)`
//! order, so two runs fed the same inputs produce the same trace.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Absolute simulation time in picoseconds since the start of the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn ps(self) -> u64 {
        self.0
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    pub fn saturating_sub(self, ps: u64) -> Self {
        SimTime(self.0.saturating_sub(ps))
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl Sub<SimTime> for SimTime {
    type Output = u64;
    fn sub(self, rhs: SimTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

/// A dispatched (or pending) event.
#[derive(Debug, Clone)]
pub struct Event<E> {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub payload: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_time == other.fire_time && self.sequence == other.sequence
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .cmp(&self.fire_time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Entity/action labels used by the optional event-trace dump.
pub trait TraceLabel {
    fn entity(&self) -> String;
    fn action(&self) -> String;
}

/// The global clock plus pending-event queue.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<E>>,
    dispatched: u64,
    trace: Option<Box<dyn Write>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            dispatched: 0,
            trace: None,
        }
    }

    /// Enables the per-event trace dump: one `time_ps,sequence,entity,action`
    /// line per dispatched event.
    pub fn set_trace(&mut self, sink: Box<dyn Write>) {
        self.trace = Some(sink);
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.fire_time)
    }

    /// Enqueues `payload` to fire at `at`. Scheduling before the current
    /// clock is a timing bug in the caller.
    pub fn schedule(&mut self, at: SimTime, payload: E) -> Result<u64, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { now: self.now, at });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_time: at,
            sequence,
            payload,
        });
        Ok(sequence)
    }

    /// Pops the next event if it fires at or before `end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event<E>>
    where
        E: TraceLabel,
    {
        if self.queue.peek()?.fire_time > end {
            return None;
        }
        let ev = self.queue.pop()?;
        debug_assert!(ev.fire_time >= self.now);
        self.now = ev.fire_time;
        self.dispatched += 1;
        if let Some(sink) = self.trace.as_mut() {
            // Trace output is best effort; a broken sink must not alter the run.
            let _ = writeln!(
                sink,
                "{},{},{},{}",
                ev.fire_time.0,
                ev.sequence,
                ev.payload.entity(),
                ev.payload.action()
            );
        }
        Some(ev)
    }

    /// Moves the clock forward to `t` with no dispatch. No-op if `t` is in the past.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn flush_trace(&mut self) {
        if let Some(sink) = self.trace.as_mut() {
            let _ = sink.flush();
        }
    }

    /// Dispatches every event with `fire_time <= end` through `handler`, then
    /// leaves the clock at `end`. Handler errors abort the loop.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> Result<(), SimError>
    where
        E: TraceLabel,
        F: FnMut(&mut Scheduler<E>, Event<E>) -> Result<(), SimError>,
    {
        while let Some(ev) = self.pop_until(end) {
            handler(self, ev)?;
        }
        self.advance_to(end);
        Ok(())
    }
}
