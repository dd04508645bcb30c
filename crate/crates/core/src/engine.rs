//! Deterministic discrete-event core.
//!
//! Events are ordered by `(fire_time, seq)` where `seq` is a counter assigned
//! at scheduling time, so two events for the same millisecond fire in the order
//! they were scheduled. The queue is a `BTreeMap` keyed on that pair, which
//! makes cancellation an exact removal instead of a tombstone.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};

/// Simulated time in integer milliseconds.
pub type Millis = u64;

/// Rounds a non-negative real number of milliseconds half-up.
pub fn round_ms(x: f64) -> Millis {
    debug_assert!(x >= 0.0, "negative duration {x}");
    (x + 0.5).floor() as Millis
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle {
    pub fire_time: Millis,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_time: Millis,
    pub seq: u64,
    pub payload: P,
}

/// What the engine needs to know about a payload: a trace label, the two
/// endpoints, and whether dispatching it mints a block.
pub trait Traced {
    fn kind(&self) -> &'static str;
    fn src(&self) -> u32;
    fn dst(&self) -> u32;
    fn mints_block(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCondition {
    /// Stop right after the N-th block-minting event has been dispatched.
    BlockCountReached(u64),
    /// Dispatch every event with `fire_time <= T`.
    TimeReached(Millis),
    /// Run until the queue is empty.
    Exhausted,
}

pub trait Handler<P> {
    fn handle(&mut self, sched: &mut Scheduler<P>, event: Event<P>) -> Result<()>;
}

/// 64-bit FNV-1a over the binary trace fields.
#[derive(Debug, Clone, Copy)]
struct TraceHash(u64);

impl TraceHash {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    fn feed(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }
}

impl Default for TraceHash {
    fn default() -> Self {
        TraceHash(Self::OFFSET)
    }
}

pub struct Scheduler<P> {
    now: Millis,
    next_seq: u64,
    queue: BTreeMap<(Millis, u64), P>,
    dispatched: u64,
    blocks_dispatched: u64,
    hash: TraceHash,
    trace: Option<Box<dyn Write>>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: 0,
            next_seq: 0,
            queue: BTreeMap::new(),
            dispatched: 0,
            blocks_dispatched: 0,
            hash: TraceHash::default(),
            trace: None,
        }
    }

    /// Writes one `time,seq,kind,src,dst` line per dispatched event.
    /// Writes `time,seq,kind,src,dst` per dispatched event. Attach before the
    /// first dispatch; the header goes out with the first event.
    pub fn with_trace(mut self, sink: Box<dyn Write>) -> Self {
        self.trace = Some(sink);
        self
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn blocks_dispatched(&self) -> u64 {
        self.blocks_dispatched
    }

    /// Hash over every dispatched `(time, seq, kind, src, dst)` so far.
    pub fn trace_hash(&self) -> u64 {
        self.hash.0
    }

    pub fn schedule(&mut self, fire_time: Millis, payload: P) -> Result<EventHandle> {
        if fire_time < self.now {
            return Err(Error::ScheduleInPast {
                at: fire_time,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((fire_time, seq), payload);
        Ok(EventHandle { fire_time, seq })
    }

    pub fn schedule_in(&mut self, delay: Millis, payload: P) -> EventHandle {
        self.schedule(self.now + delay, payload)
            .expect("relative schedule is never in the past")
    }

    /// Removes a pending event. Returns false if it already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.queue.remove(&(handle.fire_time, handle.seq)).is_some()
    }

    pub fn peek_time(&self) -> Option<Millis> {
        self.queue.first_key_value().map(|(&(t, _), _)| t)
    }

    pub fn flush_trace(&mut self) -> Result<()> {
        if let Some(sink) = self.trace.as_mut() {
            sink.flush().map_err(|e| Error::io("trace", e))?;
        }
        Ok(())
    }
}

impl<P: Traced> Scheduler<P> {
    /// Pops the next event, advancing the clock to its fire time.
    pub fn pop(&mut self) -> Result<Option<Event<P>>> {
        let Some(((fire_time, seq), payload)) = self.queue.pop_first() else {
            return Ok(None);
        };
        debug_assert!(fire_time >= self.now);
        self.now = fire_time;
        self.dispatched += 1;
        if payload.mints_block() {
            self.blocks_dispatched += 1;
        }

        let kind = payload.kind();
        let (src, dst) = (payload.src(), payload.dst());
        self.hash.feed(&fire_time.to_le_bytes());
        self.hash.feed(&seq.to_le_bytes());
        self.hash.feed(kind.as_bytes());
        self.hash.feed(&src.to_le_bytes());
        self.hash.feed(&dst.to_le_bytes());
        if let Some(sink) = self.trace.as_mut() {
            if self.dispatched == 1 {
                writeln!(sink, "time,seq,kind,src,dst").map_err(|e| Error::io("trace", e))?;
            }
            writeln!(sink, "{fire_time},{seq},{kind},{src},{dst}").map_err(|e| Error::io("trace", e))?;
        }

        Ok(Some(Event {
            fire_time,
            seq,
            payload,
        }))
    }

    /// Dispatches events in `(fire_time, seq)` order until `stop` holds or the
    /// queue drains. Block counts are cumulative over the scheduler's lifetime.
    pub fn run<H: Handler<P>>(&mut self, handler: &mut H, stop: StopCondition) -> Result<()> {
        loop {
            match stop {
                StopCondition::BlockCountReached(n) if self.blocks_dispatched >= n => break,
                StopCondition::TimeReached(t) => match self.peek_time() {
                    Some(next) if next <= t => {}
                    _ => break,
                },
                _ => {}
            }
            let Some(event) = self.pop()? else { break };
            handler.handle(self, event)?;
        }
        self.flush_trace()
    }
}
