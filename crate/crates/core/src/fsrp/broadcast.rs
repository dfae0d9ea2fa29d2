use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::payload::Payload;
use crate::sim::{
    CoinSource, Event, InstanceId, Message, MessageKey, Outgoing, Process, ProcessorId, Schedule,
    SimError, WireKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BroadcastKind {
    /// Origin sends to everyone; receipt is acceptance.
    Trivial,
    /// Echo/ready reliable broadcast.
    Bracha,
}

impl BroadcastKind {
    pub fn name(self) -> &'static str {
        match self {
            BroadcastKind::Trivial => "trivial",
            BroadcastKind::Bracha => "bracha",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trivial" => Some(BroadcastKind::Trivial),
            "bracha" => Some(BroadcastKind::Bracha),
            _ => None,
        }
    }
}

/// Echo quorum: strictly more than `(n + t) / 2`.
pub fn echo_quorum(n: usize, t: usize) -> usize {
    (n + t) / 2 + 1
}

/// Messages the origin sends to start an instance.
pub fn initiate(
    kind: BroadcastKind,
    n: usize,
    instance: InstanceId,
    payload: &Payload,
) -> Vec<Outgoing> {
    let wire = match kind {
        BroadcastKind::Trivial => WireKind::Send,
        BroadcastKind::Bracha => WireKind::Initial,
    };
    to_all(n, wire, instance, payload)
}

fn to_all(n: usize, kind: WireKind, instance: InstanceId, payload: &Payload) -> Vec<Outgoing> {
    ProcessorId::all(n)
        .map(|to| Outgoing {
            to,
            kind,
            instance,
            payload: payload.clone(),
        })
        .collect()
}

/// Receiver-side state of one broadcast instance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BroadcastState {
    echoed: bool,
    readied: bool,
    accepted: Option<Payload>,
    echoes: BTreeMap<Payload, usize>,
    readies: BTreeMap<Payload, usize>,
}

impl BroadcastState {
    pub fn accepted(&self) -> Option<&Payload> {
        self.accepted.as_ref()
    }

    /// Handles one wire message of this instance. Returns the sends it
    /// triggers and the payload if this message caused acceptance.
    pub fn on_message(
        &mut self,
        kind: BroadcastKind,
        n: usize,
        t: usize,
        msg: &Message,
    ) -> Result<(Vec<Outgoing>, Option<Payload>), String> {
        let inst = msg.broadcast_instance;
        let mut out = Vec::new();
        match (kind, msg.kind) {
            (BroadcastKind::Trivial, WireKind::Send) => {
                if msg.sender != inst.origin {
                    return Err(format!(
                        "send for {inst:?} from non-origin {:?}",
                        msg.sender
                    ));
                }
            }
            (BroadcastKind::Bracha, WireKind::Initial) => {
                if msg.sender != inst.origin {
                    return Err(format!(
                        "initial for {inst:?} from non-origin {:?}",
                        msg.sender
                    ));
                }
                if !self.echoed {
                    self.echoed = true;
                    out.extend(to_all(n, WireKind::Echo, inst, &msg.payload));
                }
            }
            (BroadcastKind::Bracha, WireKind::Echo) => {
                let c = self.echoes.entry(msg.payload.clone()).or_default();
                *c += 1;
                if *c >= echo_quorum(n, t) && !self.readied {
                    self.readied = true;
                    out.extend(to_all(n, WireKind::Ready, inst, &msg.payload));
                }
            }
            (BroadcastKind::Bracha, WireKind::Ready) => {
                let c = self.readies.entry(msg.payload.clone()).or_default();
                *c += 1;
                let c = *c;
                if c > t && !self.readied {
                    self.readied = true;
                    out.extend(to_all(n, WireKind::Ready, inst, &msg.payload));
                }
            }
            (k, w) => return Err(format!("{w:?} message in a {} broadcast", k.name())),
        }
        let accept = match kind {
            BroadcastKind::Trivial => Some(&msg.payload),
            BroadcastKind::Bracha => self
                .readies
                .iter()
                .find(|(_, c)| **c > 2 * t)
                .map(|(p, _)| p),
        };
        let newly = match (accept, &self.accepted) {
            (Some(p), None) => {
                self.accepted = Some(p.clone());
                Some(p.clone())
            }
            _ => None,
        };
        Ok((out, newly))
    }
}

/// Deliveries that bring an instance to the brink of acceptance everywhere
/// without anyone accepting yet. Empty for the trivial broadcast.
///
/// Assumes the origin's initial messages are buffered. Each receiver gets
/// its initial message, then echoes from the lowest-index senders until it
/// reaches the quorum.
pub fn phase_one_keys(
    kind: BroadcastKind,
    n: usize,
    t: usize,
    instance: InstanceId,
) -> Vec<MessageKey> {
    if kind == BroadcastKind::Trivial {
        return Vec::new();
    }
    let mut keys: Vec<MessageKey> = ProcessorId::all(n)
        .map(|to| MessageKey {
            to,
            instance,
            kind: WireKind::Initial,
            from: instance.origin,
        })
        .collect();
    let q = echo_quorum(n, t);
    for to in ProcessorId::all(n) {
        keys.extend(ProcessorId::all(q).map(|from| MessageKey {
            to,
            instance,
            kind: WireKind::Echo,
            from,
        }));
    }
    keys
}

/// Deliveries that make `receiver` accept, assuming phase one is done.
pub fn accept_keys(
    kind: BroadcastKind,
    t: usize,
    instance: InstanceId,
    receiver: ProcessorId,
) -> Vec<MessageKey> {
    match kind {
        BroadcastKind::Trivial => vec![MessageKey {
            to: receiver,
            instance,
            kind: WireKind::Send,
            from: instance.origin,
        }],
        BroadcastKind::Bracha => ProcessorId::all(2 * t + 1)
            .map(|from| MessageKey {
                to: receiver,
                instance,
                kind: WireKind::Ready,
                from,
            })
            .collect(),
    }
}

/// A schedule realising acceptance order `pi` for one initiated instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BroadcastPlan {
    pub schedule: Schedule,
    /// `prefix_ends[i]` is the schedule length after which exactly
    /// `pi[..i]` have accepted.
    pub prefix_ends: Vec<usize>,
}

pub fn broadcast_schedule(
    kind: BroadcastKind,
    n: usize,
    t: usize,
    instance: InstanceId,
    pi: &[ProcessorId],
) -> BroadcastPlan {
    let mut events: Vec<Event> = phase_one_keys(kind, n, t, instance)
        .into_iter()
        .map(Event::deliver)
        .collect();
    let mut prefix_ends = vec![events.len()];
    for &p in pi {
        events.extend(
            accept_keys(kind, t, instance, p)
                .into_iter()
                .map(Event::deliver),
        );
        prefix_ends.push(events.len());
    }
    BroadcastPlan {
        schedule: Schedule::new(events),
        prefix_ends,
    }
}

/// A processor that only runs broadcast instances. On its first step it
/// initiates one instance per entry of `to_send`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BroadcastOnly {
    kind: BroadcastKind,
    n: usize,
    t: usize,
    to_send: Vec<(u32, Payload)>,
    started: bool,
    instances: BTreeMap<InstanceId, BroadcastState>,
    accepted: BTreeMap<InstanceId, Payload>,
}

impl BroadcastOnly {
    pub fn new(kind: BroadcastKind, n: usize, t: usize, to_send: Vec<(u32, Payload)>) -> Self {
        BroadcastOnly {
            kind,
            n,
            t,
            to_send,
            started: false,
            instances: BTreeMap::new(),
            accepted: BTreeMap::new(),
        }
    }

    pub fn accepted(&self) -> &BTreeMap<InstanceId, Payload> {
        &self.accepted
    }
}

impl Process for BroadcastOnly {
    fn step(
        &mut self,
        me: ProcessorId,
        received: Option<&Message>,
        _coins: &mut dyn CoinSource,
    ) -> Result<Vec<Outgoing>, SimError> {
        let mut out = Vec::new();
        if !self.started {
            self.started = true;
            for (round, p) in &self.to_send {
                out.extend(initiate(
                    self.kind,
                    self.n,
                    InstanceId {
                        origin: me,
                        round: *round,
                    },
                    p,
                ));
            }
        }
        if let Some(m) = received {
            let st = self.instances.entry(m.broadcast_instance).or_default();
            let (sends, acc) = st
                .on_message(self.kind, self.n, self.t, m)
                .map_err(|reason| SimError::Protocol {
                    processor: me,
                    reason,
                })?;
            out.extend(sends);
            if let Some(p) = acc {
                self.accepted.insert(m.broadcast_instance, p);
            }
        }
        Ok(out)
    }

    fn decision(&self) -> Option<u8> {
        None
    }

    fn completed_round(&self) -> u32 {
        0
    }

    fn needs_start(&self) -> bool {
        !self.started
    }
}
