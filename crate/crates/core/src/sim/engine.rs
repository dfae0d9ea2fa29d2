use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use super::{
    CoinRequest, CoinSource, Event, Message, MessageKey, Process, ProcessorId, Schedule,
    SchedulerPolicy, SimError, Trace,
};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Buffered {
    message: Message,
    /// Engine step count when the message was enqueued.
    enqueued_at: u64,
}

/// Internal states of all processors plus the message buffer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration<P> {
    processes: Vec<P>,
    faulty: Vec<bool>,
    buffer: BTreeMap<MessageKey, Buffered>,
    /// Buffered keys by (enqueue step, key), oldest first.
    by_age: BTreeMap<(u64, MessageKey), ()>,
    steps: u64,
}

impl<P: Process> Configuration<P> {
    pub fn new(processes: Vec<P>, faulty: Vec<bool>) -> Self {
        assert_eq!(processes.len(), faulty.len());
        Configuration {
            processes,
            faulty,
            buffer: BTreeMap::new(),
            by_age: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.processes.len()
    }

    pub fn process(&self, id: ProcessorId) -> &P {
        &self.processes[id.slot()]
    }

    pub fn processes(&self) -> &[P] {
        &self.processes
    }

    pub fn is_faulty(&self, id: ProcessorId) -> bool {
        self.faulty[id.slot()]
    }

    pub fn good(&self) -> impl Iterator<Item = ProcessorId> + '_ {
        ProcessorId::all(self.n()).filter(|p| !self.is_faulty(*p))
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn buffered(&self, key: &MessageKey) -> Option<&Message> {
        self.buffer.get(key).map(|b| &b.message)
    }

    pub fn buffered_keys(&self) -> impl Iterator<Item = &MessageKey> {
        self.buffer.keys()
    }

    /// Buffered keys oldest first, with the step at which each was enqueued.
    pub fn by_age(&self) -> impl Iterator<Item = (u64, &MessageKey)> {
        self.by_age.keys().map(|(s, k)| (*s, k))
    }

    /// Whether `event` can be applied: its message is absent or buffered for
    /// the stepping processor.
    pub fn is_applicable(&self, event: &Event) -> bool {
        match &event.received {
            None => true,
            Some(k) => k.to == event.processor && self.buffer.contains_key(k),
        }
    }

    pub fn all_good_decided(&self) -> bool {
        self.good().all(|p| self.process(p).decision().is_some())
    }

    /// Stable digest of the whole configuration.
    pub fn digest(&self) -> u64
    where
        P: Hash,
    {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    /// Applies an event in place, replaying its recorded random outcomes.
    pub fn apply(&mut self, event: &Event) -> Result<(), SimError> {
        let mut coins = Replay {
            processor: event.processor,
            outcomes: event.local_randomness.as_deref().unwrap_or(&[]),
            next: 0,
        };
        self.step_inner(event.processor, event.received, &mut coins)?;
        if coins.next != coins.outcomes.len() {
            return Err(SimError::Protocol {
                processor: event.processor,
                reason: format!(
                    "{} recorded outcomes left unused",
                    coins.outcomes.len() - coins.next
                ),
            });
        }
        Ok(())
    }

    /// Takes a step drawing fresh outcomes from `coins` and returns the event
    /// that records it.
    pub fn step(
        &mut self,
        processor: ProcessorId,
        received: Option<MessageKey>,
        coins: &mut dyn CoinSource,
    ) -> Result<Event, SimError> {
        let mut rec = Recording {
            inner: coins,
            outcomes: Vec::new(),
        };
        self.step_inner(processor, received, &mut rec)?;
        Ok(Event {
            processor,
            received,
            local_randomness: (!rec.outcomes.is_empty()).then_some(rec.outcomes),
        })
    }

    fn step_inner(
        &mut self,
        processor: ProcessorId,
        received: Option<MessageKey>,
        coins: &mut dyn CoinSource,
    ) -> Result<(), SimError> {
        let not_applicable = || SimError::NotApplicable {
            index: None,
            processor,
            key: received,
        };
        if processor.slot() >= self.processes.len() {
            return Err(not_applicable());
        }
        let message = match received {
            None => None,
            Some(key) => {
                if key.to != processor {
                    return Err(not_applicable());
                }
                let b = self.buffer.remove(&key).ok_or_else(not_applicable)?;
                self.by_age.remove(&(b.enqueued_at, key));
                Some(b.message)
            }
        };
        let out = self.processes[processor.slot()].step(processor, message.as_ref(), coins)?;
        self.steps += 1;
        for o in out {
            let key = MessageKey {
                to: o.to,
                instance: o.instance,
                kind: o.kind,
                from: processor,
            };
            let message = Message {
                sender: processor,
                round: o.instance.round,
                payload: o.payload,
                broadcast_instance: o.instance,
                kind: o.kind,
            };
            if let Some(old) = self.buffer.insert(
                key,
                Buffered {
                    message,
                    enqueued_at: self.steps,
                },
            ) {
                // a content-addressed key is sent at most once per instance
                return Err(SimError::Protocol {
                    processor,
                    reason: format!("duplicate send {key} (previous {:?})", old.message.kind),
                });
            }
            self.by_age.insert((self.steps, key), ());
        }
        Ok(())
    }
}

struct Replay<'a> {
    processor: crate::sim::ProcessorId,
    outcomes: &'a [u32],
    next: usize,
}

impl CoinSource for Replay<'_> {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        let o = *self
            .outcomes
            .get(self.next)
            .ok_or(SimError::CoinsExhausted(self.processor))? as usize;
        self.next += 1;
        match req.dist.entries().get(o) {
            Some((_, m)) if *m > 0.0 => Ok(o),
            _ => Err(SimError::BadOutcome {
                processor: req.processor,
                round: req.round,
                outcome: o,
            }),
        }
    }
}

struct Recording<'a> {
    inner: &'a mut dyn CoinSource,
    outcomes: Vec<u32>,
}

impl CoinSource for Recording<'_> {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        let o = self.inner.choose(req)?;
        match req.dist.entries().get(o) {
            Some((_, m)) if *m > 0.0 => {}
            _ => {
                return Err(SimError::BadOutcome {
                    processor: req.processor,
                    round: req.round,
                    outcome: o,
                })
            }
        }
        self.outcomes.push(o as u32);
        Ok(o)
    }
}

/// Returns the successor configuration `e(C)`.
pub fn apply_event<P: Process>(
    config: &Configuration<P>,
    event: &Event,
) -> Result<Configuration<P>, SimError> {
    let mut next = config.clone();
    next.apply(event)?;
    Ok(next)
}

/// Left fold of [`apply_event`]; the error reports the index of the first
/// inapplicable event.
pub fn run_schedule<P: Process>(
    config: &Configuration<P>,
    schedule: &Schedule,
) -> Result<(Configuration<P>, Trace), SimError> {
    let mut c = config.clone();
    for (i, e) in schedule.events.iter().enumerate() {
        c.apply(e).map_err(|err| match err {
            SimError::NotApplicable { processor, key, .. } => SimError::NotApplicable {
                index: Some(i),
                processor,
                key,
            },
            other => other,
        })?;
    }
    Ok((c, Trace::new(schedule.events.clone())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopCondition {
    AllGoodDecided,
    /// Every good processor has taken its step for this round.
    RoundCap(u32),
    /// Fails with [`RunError::CapExceeded`] once this many events ran.
    EventCap(u64),
    /// Buffer empty and nobody left to start.
    Quiescent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    AllGoodDecided,
    RoundCap,
    Quiescent,
    /// The policy had nothing more to schedule.
    PolicyDone,
}

#[derive(Debug)]
pub struct RunOutcome<P> {
    pub config: Configuration<P>,
    pub trace: Trace,
    pub reason: StopReason,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError<P: std::fmt::Debug> {
    #[error("event cap of {cap} reached after {} events", trace.len())]
    CapExceeded {
        cap: u64,
        config: Box<Configuration<P>>,
        trace: Trace,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn stop_reason<P: Process>(
    config: &Configuration<P>,
    stops: &[StopCondition],
) -> Option<StopReason> {
    for s in stops {
        match *s {
            StopCondition::AllGoodDecided if config.all_good_decided() => {
                return Some(StopReason::AllGoodDecided)
            }
            StopCondition::RoundCap(k)
                if config
                    .good()
                    .all(|p| config.process(p).completed_round() >= k) =>
            {
                return Some(StopReason::RoundCap)
            }
            StopCondition::Quiescent
                if config.buffer.is_empty()
                    && config.processes.iter().all(|p| !p.needs_start()) =>
            {
                return Some(StopReason::Quiescent)
            }
            _ => {}
        }
    }
    None
}

/// Repeatedly asks `policy` for the next step and applies it until one of
/// `stops` holds.
pub fn run_until<P: Process, S: SchedulerPolicy<P> + ?Sized>(
    config: Configuration<P>,
    policy: &mut S,
    stops: &[StopCondition],
) -> Result<RunOutcome<P>, RunError<P>> {
    let cap = stops.iter().find_map(|s| match s {
        StopCondition::EventCap(m) => Some(*m),
        _ => None,
    });
    let mut config = config;
    let mut events = Vec::new();
    loop {
        if let Some(reason) = stop_reason(&config, stops) {
            return Ok(RunOutcome {
                config,
                trace: Trace::new(events),
                reason,
            });
        }
        if let Some(cap) = cap {
            if events.len() as u64 >= cap {
                return Err(RunError::CapExceeded {
                    cap,
                    config: Box::new(config),
                    trace: Trace::new(events),
                });
            }
        }
        let Some(step) = policy.next_step(&config) else {
            return Ok(RunOutcome {
                config,
                trace: Trace::new(events),
                reason: StopReason::PolicyDone,
            });
        };
        let mut coins = PolicyCoins {
            policy: &mut *policy,
        };
        let event = config.step(step.processor, step.received, &mut coins)?;
        policy.observe(&config, &event);
        events.push(event);
    }
}

struct PolicyCoins<'a, S: ?Sized> {
    policy: &'a mut S,
}

impl<S: ?Sized> CoinSource for PolicyCoins<'_, S>
where
    S: CoinSource,
{
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        self.policy.choose(req)
    }
}
