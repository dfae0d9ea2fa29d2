//! Event-driven engine for asynchronous message passing.
//!
//! A [`Configuration`] holds every processor's state together with the
//! message buffer. An [`Event`] names the stepping processor, the buffered
//! message it receives (or none), and the random outcomes its step consumed.
//! Everything nondeterministic about an execution lives in the order of events
//! and in those outcomes, so a trace of events replays bit for bit.

mod engine;
mod scheduler;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::ChoiceDistribution;
use crate::payload::Payload;

pub use engine::{
    apply_event, run_schedule, run_until, Configuration, RunError, RunOutcome, StopCondition,
    StopReason,
};
pub use scheduler::{BenignFair, ProcessorCoins, SchedulerPolicy, Step};
pub use trace::{read_ndjson, Trace, TraceRecord};

/// Processor identity, `1..=n`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessorId(u32);

impl ProcessorId {
    /// Panics on zero; identities are 1-based.
    pub fn new(index: u32) -> Self {
        assert!(index >= 1, "processor ids start at 1");
        ProcessorId(index)
    }

    pub fn index(self) -> u32 {
        self.0
    }

    /// Zero-based position for indexing into per-processor vectors.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_slot(slot: usize) -> Self {
        ProcessorId(slot as u32 + 1)
    }

    pub fn all(n: usize) -> impl DoubleEndedIterator<Item = ProcessorId> + ExactSizeIterator {
        (0..n).map(ProcessorId::from_slot)
    }
}

impl fmt::Debug for ProcessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for ProcessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One invocation of the broadcast primitive: its originator and round.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub origin: ProcessorId,
    pub round: u32,
}

impl fmt::Debug for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.origin, self.round)
    }
}

/// Wire-level message role within a broadcast instance.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum WireKind {
    /// Plain send; receipt is acceptance.
    Send,
    Initial,
    Echo,
    Ready,
}

impl WireKind {
    fn tag(self) -> &'static str {
        match self {
            WireKind::Send => "send",
            WireKind::Initial => "init",
            WireKind::Echo => "echo",
            WireKind::Ready => "ready",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Message {
    /// Stamped by the engine with the stepping processor; never forged.
    pub sender: ProcessorId,
    pub round: u32,
    pub payload: Payload,
    pub broadcast_instance: InstanceId,
    pub kind: WireKind,
}

/// Buffer key. Content addressed, so the same logical message has the same
/// key regardless of how other instances interleave.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct MessageKey {
    pub to: ProcessorId,
    pub instance: InstanceId,
    pub kind: WireKind,
    pub from: ProcessorId,
}

impl fmt::Display for MessageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}>{}:{}:{}.{}",
            self.from,
            self.to,
            self.kind.tag(),
            self.instance.origin,
            self.instance.round
        )
    }
}

/// A send request produced by a step; the engine fills in the sender.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Outgoing {
    pub to: ProcessorId,
    pub kind: WireKind,
    pub instance: InstanceId,
    pub payload: Payload,
}

/// `(p, m, r_p)`: processor, received message (by key) and the outcomes of
/// every random choice made during the step.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Event {
    pub processor: ProcessorId,
    pub received: Option<MessageKey>,
    pub local_randomness: Option<Vec<u32>>,
}

impl Event {
    pub fn empty(processor: ProcessorId) -> Self {
        Event {
            processor,
            received: None,
            local_randomness: None,
        }
    }

    pub fn deliver(key: MessageKey) -> Self {
        Event {
            processor: key.to,
            received: Some(key),
            local_randomness: None,
        }
    }
}

/// Ordered events, each applicable to the configuration left by its
/// predecessors.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub events: Vec<Event>,
}

impl Schedule {
    pub fn new(events: Vec<Event>) -> Self {
        Schedule { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn concat(mut self, other: Schedule) -> Schedule {
        self.events.extend(other.events);
        self
    }
}

/// What a processor asks for when its step needs randomness.
#[derive(Debug)]
pub struct CoinRequest<'a> {
    pub processor: ProcessorId,
    /// Round stamped on the message being chosen.
    pub round: u32,
    pub dist: &'a ChoiceDistribution,
}

/// Source of random outcomes for processor steps. The returned value is an
/// index into `req.dist.entries()` with nonzero mass.
pub trait CoinSource {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError>;
}

/// Per-processor protocol logic driven by the engine.
pub trait Process: Clone + fmt::Debug {
    /// Handles one step: an optional received message, local computation
    /// (possibly random), and the sends it produces.
    fn step(
        &mut self,
        me: ProcessorId,
        received: Option<&Message>,
        coins: &mut dyn CoinSource,
    ) -> Result<Vec<Outgoing>, SimError>;

    fn decision(&self) -> Option<u8>;

    /// Highest round whose protocol step has been taken (0 before start).
    fn completed_round(&self) -> u32;

    /// True until the processor has taken its initial step.
    fn needs_start(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("event {index:?} not applicable: {processor:?} cannot receive {key:?}")]
    NotApplicable {
        index: Option<usize>,
        processor: ProcessorId,
        key: Option<MessageKey>,
    },
    #[error("replayed step of {0:?} asked for more random outcomes than recorded")]
    CoinsExhausted(ProcessorId),
    #[error("outcome {outcome} is not a valid choice for {processor:?} in round {round}")]
    BadOutcome {
        processor: ProcessorId,
        round: u32,
        outcome: usize,
    },
    #[error("protocol error at {processor:?}: {reason}")]
    Protocol {
        processor: ProcessorId,
        reason: String,
    },
}
