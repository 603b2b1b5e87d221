//! Deterministic discrete-event scheduler hosting one state machine per actor.
//!
//! Events are processed one at a time in the global order
//! `(time, actor id, seq)`; a handler runs to completion before the next
//! event is looked at. Handlers never touch the network or the queue
//! directly: they act through a [`Context`], which also gives read-only
//! access to a shared environment snapshot `E` and collects effects `X` for
//! the caller to apply between steps.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::transport::{
    ActorId, Datagram, Destination, Network, NetworkConfig, TransportError, TransportStats,
};

pub const DEFAULT_SPAWN_CAP: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("event time {time} is before the current time {now}")]
    TimeInPast { time: f64, now: f64 },
    #[error("timer delay must be strictly positive, got {0}")]
    NonPositiveDelay(f64),
    #[error("actor {0} is dead")]
    DeadActor(ActorId),
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error("actor {0} is already registered")]
    DuplicateActor(ActorId),
    #[error("handler of actor {actor} exceeded the per-event spawn cap of {cap}")]
    SpawnCapExceeded { actor: ActorId, cap: usize },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Error returned by an actor's handler. The actor is marked dead.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandlerError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Crash,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    TimerFired(String),
    MessageDelivered(Datagram),
    FaultInjected(FaultKind),
    Tick,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::TimerFired(tag) => write!(f, "timer:{tag}"),
            EventKind::MessageDelivered(d) => write!(f, "message:{}:{}", d.src, d.seq),
            EventKind::FaultInjected(FaultKind::Crash) => write!(f, "fault:crash"),
            EventKind::Tick => write!(f, "tick"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub actor: ActorId,
    pub kind: EventKind,
    pub seq: u64,
}

/// A finite state machine driven by events.
pub trait Actor<E, X> {
    fn handle(&mut self, event: &Event, ctx: &mut Context<'_, E, X>) -> Result<(), HandlerError>;

    /// Name of the current state; must be one of [`Actor::states`].
    fn state(&self) -> &'static str;

    fn states(&self) -> &'static [&'static str];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActorRecord {
    pub id: ActorId,
    pub fsm_state: &'static str,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FailureReason {
    Crash,
    HandlerPanic(String),
    HandlerError(HandlerError),
    InvalidState(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorFailure {
    pub time: f64,
    pub actor: ActorId,
    pub reason: FailureReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub actor: ActorId,
    pub kind: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.time, self.actor, self.kind)
    }
}

#[derive(Debug)]
enum Pending {
    Event(EventKind),
    /// The network has something due for this actor.
    NetworkWake,
}

#[derive(Debug)]
struct Entry {
    time: f64,
    actor: ActorId,
    seq: u64,
    item: Pending,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.actor.cmp(&other.actor))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Entry>>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, actor: ActorId, item: Pending) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { time, actor, seq, item }));
        seq
    }

    fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    fn pop(&mut self) -> Option<Entry> {
        self.heap.pop().map(|Reverse(e)| e)
    }
}

/// Handle given to an actor while it processes one event.
pub struct Context<'a, E, X> {
    now: f64,
    me: ActorId,
    env: &'a E,
    queue: &'a mut EventQueue,
    network: &'a mut Network,
    net_rng: &'a mut ChaCha8Rng,
    alive: &'a BTreeMap<ActorId, bool>,
    effects: &'a mut Vec<(ActorId, X)>,
    spawned: usize,
    cap: usize,
}

impl<E, X> Context<'_, E, X> {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn id(&self) -> ActorId {
        self.me
    }

    pub fn env(&self) -> &E {
        self.env
    }

    fn spawn(&mut self) -> Result<(), RuntimeError> {
        if self.spawned >= self.cap {
            return Err(RuntimeError::SpawnCapExceeded { actor: self.me, cap: self.cap });
        }
        self.spawned += 1;
        Ok(())
    }

    /// Sends a datagram now. Returns the number of copies that will be
    /// delivered (dropped copies are not reported to the sender).
    pub fn send(&mut self, dst: impl Into<Destination>, payload: &[u8]) -> Result<usize, RuntimeError> {
        self.spawn()?;
        let out = self.network.send(self.me, dst.into(), payload, self.now, self.net_rng)?;
        let mut live = 0;
        for dg in out {
            if let Some(at) = dg.deliver_at {
                self.queue.push(at, dg.dst, Pending::NetworkWake);
                live += 1;
            }
        }
        Ok(live)
    }

    pub fn schedule_timer(&mut self, delay: f64, tag: impl Into<String>) -> Result<(), RuntimeError> {
        if !(delay > 0.0) {
            return Err(RuntimeError::NonPositiveDelay(delay));
        }
        self.spawn()?;
        self.queue
            .push(self.now + delay, self.me, Pending::Event(EventKind::TimerFired(tag.into())));
        Ok(())
    }

    /// Enqueues an arbitrary event for any live actor at `time ≥ now`.
    pub fn enqueue(&mut self, time: f64, actor: ActorId, kind: EventKind) -> Result<(), RuntimeError> {
        if time < self.now {
            return Err(RuntimeError::TimeInPast { time, now: self.now });
        }
        match self.alive.get(&actor) {
            None => return Err(RuntimeError::UnknownActor(actor)),
            Some(false) => return Err(RuntimeError::DeadActor(actor)),
            Some(true) => {}
        }
        self.spawn()?;
        self.queue.push(time, actor, Pending::Event(kind));
        Ok(())
    }

    pub fn emit(&mut self, effect: X) {
        self.effects.push((self.me, effect));
    }
}

struct Slot<E, X> {
    actor: Box<dyn Actor<E, X>>,
}

pub struct Runtime<E, X> {
    now: f64,
    queue: EventQueue,
    slots: BTreeMap<ActorId, Slot<E, X>>,
    alive: BTreeMap<ActorId, bool>,
    network: Network,
    net_rng: ChaCha8Rng,
    effects: Vec<(ActorId, X)>,
    failures: Vec<ActorFailure>,
    trace: Option<Vec<TraceRecord>>,
    spawn_cap: usize,
}

impl<E, X> Runtime<E, X> {
    pub fn new(network: NetworkConfig, seed: u64) -> Result<Self, RuntimeError> {
        Ok(Self {
            now: 0.0,
            queue: EventQueue::default(),
            slots: BTreeMap::new(),
            alive: BTreeMap::new(),
            network: Network::new(network)?,
            net_rng: ChaCha8Rng::seed_from_u64(seed),
            effects: Vec::new(),
            failures: Vec::new(),
            trace: None,
            spawn_cap: DEFAULT_SPAWN_CAP,
        })
    }

    pub fn with_spawn_cap(mut self, cap: usize) -> Self {
        self.spawn_cap = cap;
        self
    }

    /// Records every processed event for later inspection.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn add_actor(&mut self, id: ActorId, actor: Box<dyn Actor<E, X>>) -> Result<(), RuntimeError> {
        if self.slots.contains_key(&id) {
            return Err(RuntimeError::DuplicateActor(id));
        }
        self.slots.insert(id, Slot { actor });
        self.alive.insert(id, true);
        self.network.register(id);
        Ok(())
    }

    pub fn is_alive(&self, id: ActorId) -> bool {
        self.alive.get(&id).copied().unwrap_or(false)
    }

    pub fn record(&self, id: ActorId) -> Option<ActorRecord> {
        self.slots.get(&id).map(|s| ActorRecord {
            id,
            fsm_state: s.actor.state(),
            alive: self.is_alive(id),
        })
    }

    pub fn records(&self) -> Vec<ActorRecord> {
        self.slots.keys().filter_map(|&id| self.record(id)).collect()
    }

    fn check_target(&self, actor: ActorId) -> Result<(), RuntimeError> {
        match self.alive.get(&actor) {
            None => Err(RuntimeError::UnknownActor(actor)),
            Some(false) => Err(RuntimeError::DeadActor(actor)),
            Some(true) => Ok(()),
        }
    }

    /// Inserts an event; returns its sequence number.
    pub fn enqueue_event(&mut self, time: f64, actor: ActorId, kind: EventKind) -> Result<u64, RuntimeError> {
        if !(time >= self.now) {
            return Err(RuntimeError::TimeInPast { time, now: self.now });
        }
        self.check_target(actor)?;
        Ok(self.queue.push(time, actor, Pending::Event(kind)))
    }

    pub fn schedule_timer(&mut self, actor: ActorId, delay: f64, tag: impl Into<String>) -> Result<(), RuntimeError> {
        if !(delay > 0.0) {
            return Err(RuntimeError::NonPositiveDelay(delay));
        }
        self.check_target(actor)?;
        self.queue
            .push(self.now + delay, actor, Pending::Event(EventKind::TimerFired(tag.into())));
        Ok(())
    }

    /// Schedules a fail-stop crash of `actor` at time `at`.
    pub fn inject_fault(&mut self, actor: ActorId, at: f64) -> Result<(), RuntimeError> {
        if !self.slots.contains_key(&actor) {
            return Err(RuntimeError::UnknownActor(actor));
        }
        if !(at >= self.now) {
            return Err(RuntimeError::TimeInPast { time: at, now: self.now });
        }
        self.queue
            .push(at, actor, Pending::Event(EventKind::FaultInjected(FaultKind::Crash)));
        Ok(())
    }

    fn kill(&mut self, actor: ActorId, time: f64, reason: FailureReason) {
        if let Some(a) = self.alive.get_mut(&actor) {
            if *a {
                *a = false;
                self.network.mark_dead(actor);
                self.failures.push(ActorFailure { time, actor, reason });
            }
        }
    }

    /// Processes every event with `time ≤ until`, then sets `now = until`.
    /// Returns the number of events handled (including applied faults).
    pub fn advance(&mut self, until: f64, env: &E) -> Result<usize, RuntimeError> {
        if !(until >= self.now) {
            return Err(RuntimeError::TimeInPast { time: until, now: self.now });
        }
        let mut processed = 0;
        while self.queue.peek_time().is_some_and(|t| t <= until) {
            let entry = self.queue.pop().expect("peeked");
            self.now = entry.time;
            let alive = self.is_alive(entry.actor);
            let events: Vec<EventKind> = match entry.item {
                Pending::NetworkWake => {
                    // Polling a dead actor's inbox accounts its datagrams as dropped.
                    self.network
                        .poll(entry.actor, entry.time)
                        .into_iter()
                        .map(EventKind::MessageDelivered)
                        .collect()
                }
                Pending::Event(kind) => vec![kind],
            };
            if !alive {
                continue;
            }
            for kind in events {
                if !self.is_alive(entry.actor) {
                    break;
                }
                let seq = entry.seq;
                if let Some(trace) = self.trace.as_mut() {
                    trace.push(TraceRecord {
                        time: entry.time,
                        actor: entry.actor,
                        kind: kind.to_string(),
                    });
                }
                processed += 1;
                if kind == EventKind::FaultInjected(FaultKind::Crash) {
                    self.kill(entry.actor, entry.time, FailureReason::Crash);
                    continue;
                }
                let event = Event { time: entry.time, actor: entry.actor, kind, seq };
                if let Some(reason) = self.dispatch(&event, env) {
                    self.kill(entry.actor, entry.time, reason);
                }
            }
        }
        self.now = until;
        Ok(processed)
    }

    fn dispatch(&mut self, event: &Event, env: &E) -> Option<FailureReason> {
        let Runtime {
            queue,
            slots,
            alive,
            network,
            net_rng,
            effects,
            spawn_cap,
            ..
        } = self;
        let slot = slots.get_mut(&event.actor).expect("registered actor");
        let mut ctx = Context {
            now: event.time,
            me: event.actor,
            env,
            queue,
            network,
            net_rng,
            alive,
            effects,
            spawned: 0,
            cap: *spawn_cap,
        };
        let actor = &mut slot.actor;
        match catch_unwind(AssertUnwindSafe(|| actor.handle(event, &mut ctx))) {
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "handler panicked".to_string());
                Some(FailureReason::HandlerPanic(msg))
            }
            Ok(Err(e)) => Some(FailureReason::HandlerError(e)),
            Ok(Ok(())) => {
                let state = slot.actor.state();
                (!slot.actor.states().contains(&state)).then_some(FailureReason::InvalidState(state))
            }
        }
    }

    /// Removes and returns effects emitted by handlers, in emission order.
    pub fn drain_effects(&mut self) -> Vec<(ActorId, X)> {
        std::mem::take(&mut self.effects)
    }

    pub fn failures(&self) -> &[ActorFailure] {
        &self.failures
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn transport_stats(&self) -> TransportStats {
        self.network.stats()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn pending_events(&self) -> usize {
        self.queue.heap.len()
    }
}
