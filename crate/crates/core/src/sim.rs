//! Deterministic discrete-event scheduler on a virtual clock.
//!
//! Events fire in `(fire_at, seq)` order, so equal fire times run in the
//! order they were scheduled. The scheduler owns no domain state; callers
//! drive it with a handler that may schedule further events.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::{self, Write as _};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Something an event carries. The label appears in the trace.
pub trait SimAction {
    fn label(&self) -> Cow<'_, str>;
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("invalid delay {0}")]
pub struct InvalidDelay(pub f64);

/// A handler failure, tagged with the event that raised it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("event seq={seq} action={action} at t={at:.9} failed: {source}")]
pub struct SimError<E: fmt::Display> {
    pub at: f64,
    pub seq: u64,
    pub action: String,
    pub source: E,
}

/// Identifies a scheduled event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

struct Entry<A> {
    fire_at: f64,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Entry<A> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<A> Eq for Entry<A> {}

impl<A> PartialOrd for Entry<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Entry<A> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .total_cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

pub struct Scheduler<A> {
    now: f64,
    next_seq: u64,
    queue: BinaryHeap<Entry<A>>,
    trace: Option<String>,
    executed: u64,
}

impl<A: SimAction> Default for Scheduler<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A: SimAction> Scheduler<A> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            trace: None,
            executed: 0,
        }
    }

    /// Enables the one-line-per-event trace.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(String::new());
        self
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn trace(&self) -> Option<&str> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.as_mut().map(std::mem::take)
    }

    pub fn schedule(&mut self, delay: f64, action: A) -> Result<EventHandle, InvalidDelay> {
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(InvalidDelay(delay));
        }
        Ok(self.push(self.now + delay, action))
    }

    /// Schedules at an absolute time; times in the past are clamped to now.
    pub fn schedule_at(&mut self, at: f64, action: A) -> EventHandle {
        self.push(at.max(self.now), action)
    }

    fn push(&mut self, fire_at: f64, action: A) -> EventHandle {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Entry { fire_at, seq, action });
        EventHandle(seq)
    }

    /// Pops the next event and advances the clock to its fire time.
    pub fn pop(&mut self) -> Option<(EventHandle, A)> {
        let e = self.queue.pop()?;
        debug_assert!(e.fire_at >= self.now);
        self.now = e.fire_at;
        self.executed += 1;
        if let Some(tr) = self.trace.as_mut() {
            let _ = writeln!(tr, "t={:.9} seq={} action={}", e.fire_at, e.seq, e.action.label());
        }
        Some((EventHandle(e.seq), e.action))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.queue.peek().map(|e| e.fire_at)
    }

    /// Runs events until the queue is empty and returns the final clock.
    pub fn run_until_idle<E, F>(&mut self, mut handler: F) -> Result<f64, SimError<E>>
    where
        E: fmt::Display,
        F: FnMut(&mut Self, A) -> Result<(), E>,
    {
        while let Some((h, action)) = self.pop() {
            let label = action.label().into_owned();
            handler(self, action).map_err(|source| SimError {
                at: self.now,
                seq: h.0,
                action: label,
                source,
            })?;
        }
        Ok(self.now)
    }

    /// Like [`run_until_idle`](Self::run_until_idle) but sleeps so that one
    /// virtual second takes `scale` real seconds.
    pub fn run_paced<E, F>(&mut self, scale: f64, mut handler: F) -> Result<f64, SimError<E>>
    where
        E: fmt::Display,
        F: FnMut(&mut Self, A) -> Result<(), E>,
    {
        let origin = Instant::now();
        let start = self.now;
        while let Some(at) = self.peek_time() {
            let target = Duration::from_secs_f64(((at - start) * scale).max(0.0));
            let elapsed = origin.elapsed();
            if target > elapsed {
                std::thread::sleep(target - elapsed);
            }
            let (h, action) = self.pop().expect("peeked");
            let label = action.label().into_owned();
            handler(self, action).map_err(|source| SimError {
                at: self.now,
                seq: h.0,
                action: label,
                source,
            })?;
        }
        Ok(self.now)
    }
}

/// A source of seconds, virtual or real.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

/// A clock that moves only when told to.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<Mutex<f64>>);

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, t: f64) {
        let mut g = self.0.lock().unwrap();
        assert!(t >= *g, "clock must not go backwards");
        *g = t;
    }

    pub fn advance(&self, dt: f64) {
        assert!(dt >= 0.0);
        *self.0.lock().unwrap() += dt;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        *self.0.lock().unwrap()
    }
}

/// Seconds since construction.
#[derive(Debug, Clone)]
pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl WallClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
