use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::broadcast::{initiate, BroadcastKind, BroadcastState};
use super::protocol::{MessageMultiset, ProtocolFunction};
use super::validate::{
    AcceptedSet, MarkedSet, PerRound, ValidateError, ValidateKind, ValidatePolicy,
    ValidationContext,
};
use crate::payload::Payload;
use crate::sim::{
    CoinRequest, CoinSource, InstanceId, Message, Outgoing, Process, ProcessorId, SimError,
};

/// Configuration shared by every processor of one execution.
#[derive(Debug)]
pub struct ProcessorParams {
    pub n: usize,
    pub t: usize,
    pub protocol: Arc<dyn ProtocolFunction>,
    pub broadcast: BroadcastKind,
    pub validate: ValidateKind,
    /// Last round whose message is sent; the step of this round still
    /// decides.
    pub round_limit: u32,
    policy: Box<dyn ValidatePolicy>,
    fallback: PerRound,
}

impl ProcessorParams {
    pub fn new(
        n: usize,
        t: usize,
        protocol: Arc<dyn ProtocolFunction>,
        broadcast: BroadcastKind,
        validate: ValidateKind,
        round_limit: u32,
    ) -> Arc<Self> {
        Arc::new(ProcessorParams {
            n,
            t,
            protocol,
            broadcast,
            validate,
            round_limit,
            policy: validate.policy(),
            fallback: PerRound::new(),
        })
    }
}

/// Shared handle that takes no part in equality or hashing of the state.
#[derive(Clone)]
struct Shared(Arc<ProcessorParams>);

impl PartialEq for Shared {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Shared {}

impl Hash for Shared {
    fn hash<H: Hasher>(&self, _: &mut H) {}
}

impl fmt::Debug for Shared {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.protocol.name())
    }
}

/// One audited round step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: u32,
    /// Validated round-`k` messages when the step ran.
    pub validated_in_round: usize,
    /// Senders of the `n - t` set `S`.
    pub senders: Vec<ProcessorId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FsrpError {
    #[error("round {round}: protocol offered {size} outcomes, bound is {bound}")]
    SupportTooLarge {
        round: u32,
        size: usize,
        bound: usize,
    },
    #[error(transparent)]
    Validate(#[from] ValidateError),
}

/// A processor running the round skeleton on top of broadcast and
/// validation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Processor {
    params: Shared,
    input: u8,
    started: bool,
    /// Next round step to take.
    round: u32,
    instances: BTreeMap<InstanceId, BroadcastState>,
    accepted: AcceptedSet,
    validated: MarkedSet,
    /// Senders per round in the order their messages were validated.
    validation_order: BTreeMap<u32, Vec<ProcessorId>>,
    /// Accepted but not yet validated, keyed `(round, sender)`.
    pending: BTreeSet<(u32, ProcessorId)>,
    pool: MessageMultiset,
    sent: BTreeMap<u32, Payload>,
    inputs: BTreeMap<u32, MessageMultiset>,
    audit: Vec<RoundEntry>,
    decision: Option<(u8, u32)>,
    fell_back: bool,
}

impl Processor {
    pub fn new(params: Arc<ProcessorParams>, input: u8) -> Self {
        Processor {
            params: Shared(params),
            input,
            started: false,
            round: 1,
            instances: BTreeMap::new(),
            accepted: AcceptedSet::new(),
            validated: MarkedSet::new(),
            validation_order: BTreeMap::new(),
            pending: BTreeSet::new(),
            pool: MessageMultiset::new(),
            sent: BTreeMap::new(),
            inputs: BTreeMap::new(),
            audit: Vec::new(),
            decision: None,
            fell_back: false,
        }
    }

    pub fn params(&self) -> &Arc<ProcessorParams> {
        &self.params.0
    }

    pub fn input(&self) -> u8 {
        self.input
    }

    pub fn accepted(&self) -> &AcceptedSet {
        &self.accepted
    }

    pub fn validated(&self) -> &MarkedSet {
        &self.validated
    }

    /// Own payload of each round sent so far.
    pub fn sent(&self) -> &BTreeMap<u32, Payload> {
        &self.sent
    }

    /// `S ∪ S'` handed to the protocol function in each completed round.
    pub fn round_inputs(&self) -> &BTreeMap<u32, MessageMultiset> {
        &self.inputs
    }

    pub fn audit(&self) -> &[RoundEntry] {
        &self.audit
    }

    /// Decided bit and the round in which it was reached.
    pub fn decided(&self) -> Option<(u8, u32)> {
        self.decision
    }

    /// True once a chained search ran out of budget and per-round
    /// validation took over.
    pub fn fell_back(&self) -> bool {
        self.fell_back
    }

    fn broadcast(
        &mut self,
        me: ProcessorId,
        round: u32,
        payload: Payload,
        out: &mut Vec<Outgoing>,
    ) {
        let p = &self.params.0;
        out.extend(initiate(
            p.broadcast,
            p.n,
            InstanceId { origin: me, round },
            &payload,
        ));
        self.sent.insert(round, payload);
    }

    fn sample(
        &self,
        me: ProcessorId,
        round: u32,
        dist: &crate::dist::ChoiceDistribution,
        coins: &mut dyn CoinSource,
    ) -> Result<Payload, SimError> {
        let bound = self.params.0.protocol.max_support();
        let size = dist.positive_support().count();
        if size > bound {
            return Err(protocol_error(
                me,
                FsrpError::SupportTooLarge { round, size, bound },
            ));
        }
        let idx = coins.choose(&CoinRequest {
            processor: me,
            round,
            dist,
        })?;
        Ok(dist.entries()[idx].0.clone())
    }

    fn start(
        &mut self,
        me: ProcessorId,
        coins: &mut dyn CoinSource,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), SimError> {
        self.started = true;
        let dist = self.params.0.protocol.initial(self.input);
        let v = self.sample(me, 1, &dist, coins)?;
        self.broadcast(me, 1, v, out);
        Ok(())
    }

    /// Marks every newly valid accepted message, lowest round first.
    fn revalidate(&mut self, me: ProcessorId) -> Result<(), SimError> {
        let params = self.params.0.clone();
        let pending: Vec<(u32, ProcessorId)> = self.pending.iter().copied().collect();
        for (round, sender) in pending {
            let key = (sender, round);
            let payload = self.accepted[&key].clone();
            let policy: &dyn ValidatePolicy = if self.fell_back {
                &params.fallback
            } else {
                params.policy.as_ref()
            };
            let ctx = ValidationContext {
                pf: params.protocol.as_ref(),
                n: params.n,
                t: params.t,
                accepted: &self.accepted,
                validated: &self.validated,
                pool: &self.pool,
            };
            let ok = match policy.is_valid(key.0, key.1, &payload, &ctx) {
                Ok(ok) => ok,
                Err(e @ ValidateError::SearchBudgetExceeded { .. }) => {
                    log::warn!("{me:?}: {e}; falling back to per-round validation");
                    self.fell_back = true;
                    params
                        .fallback
                        .is_valid(key.0, key.1, &payload, &ctx)
                        .map_err(|e| protocol_error(me, e.into()))?
                }
            };
            if ok {
                self.validated.insert(key);
                self.pending.remove(&(round, sender));
                self.validation_order.entry(round).or_default().push(sender);
                self.pool.add(key.1, payload);
            }
        }
        Ok(())
    }

    fn advance(
        &mut self,
        me: ProcessorId,
        coins: &mut dyn CoinSource,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), SimError> {
        let params = self.params.0.clone();
        let quorum = params.n - params.t;
        while self.round <= params.round_limit && self.pool.round_len(self.round) >= quorum {
            let k = self.round;
            let senders: Vec<ProcessorId> = self.validation_order[&k]
                .iter()
                .take(quorum)
                .copied()
                .collect();
            let mut input = self.pool.before(k);
            for s in &senders {
                input.add(k, self.accepted[&(*s, k)].clone());
            }
            self.audit.push(RoundEntry {
                round: k,
                validated_in_round: self.pool.round_len(k),
                senders,
            });
            if self.decision.is_none() {
                if let Some(b) = params.protocol.decide(&input) {
                    self.decision = Some((b, k));
                }
            }
            if k < params.round_limit {
                let dist = params.protocol.next(k, &input);
                let v = self.sample(me, k + 1, &dist, coins)?;
                self.broadcast(me, k + 1, v, out);
            }
            self.inputs.insert(k, input);
            self.round = k + 1;
        }
        Ok(())
    }
}

fn protocol_error(processor: ProcessorId, e: FsrpError) -> SimError {
    SimError::Protocol {
        processor,
        reason: e.to_string(),
    }
}

impl Process for Processor {
    fn step(
        &mut self,
        me: ProcessorId,
        received: Option<&Message>,
        coins: &mut dyn CoinSource,
    ) -> Result<Vec<Outgoing>, SimError> {
        let mut out = Vec::new();
        if !self.started {
            self.start(me, coins, &mut out)?;
        }
        if let Some(m) = received {
            let params = self.params.0.clone();
            let st = self.instances.entry(m.broadcast_instance).or_default();
            let (sends, acc) = st
                .on_message(params.broadcast, params.n, params.t, m)
                .map_err(|reason| SimError::Protocol {
                    processor: me,
                    reason,
                })?;
            out.extend(sends);
            if let Some(p) = acc {
                let inst = m.broadcast_instance;
                self.accepted.insert((inst.origin, inst.round), p);
                self.pending.insert((inst.round, inst.origin));
                self.revalidate(me)?;
                self.advance(me, coins, &mut out)?;
            }
        }
        Ok(out)
    }

    fn decision(&self) -> Option<u8> {
        self.decision.map(|(b, _)| b)
    }

    fn completed_round(&self) -> u32 {
        self.round - 1
    }

    fn needs_start(&self) -> bool {
        !self.started
    }
}

/// Processors with the given inputs sharing one parameter set.
pub fn processors(params: &Arc<ProcessorParams>, inputs: &[u8]) -> Vec<Processor> {
    inputs
        .iter()
        .map(|b| Processor::new(params.clone(), *b))
        .collect()
}

/// Audits the round-entry rule: every round step ran only after `n - t`
/// distinct-sender messages of that round were validated, and `S` used
/// exactly `n - t` of them.
pub fn audit_round_entry(p: &Processor) -> Result<(), String> {
    let quorum = p.params().n - p.params().t;
    let mut last = 0;
    for e in p.audit() {
        if e.round != last + 1 {
            return Err(format!("round {} stepped after round {last}", e.round));
        }
        let distinct: BTreeSet<_> = e.senders.iter().collect();
        if e.validated_in_round < quorum || e.senders.len() != quorum || distinct.len() != quorum {
            return Err(format!("round {} entered with {:?}", e.round, e));
        }
        last = e.round;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsrp::protocol::{BenOrStyle, PointMassMajority};
    use crate::sim::{run_until, BenignFair, Configuration, StopCondition};

    fn run(
        pf: Arc<dyn ProtocolFunction>,
        inputs: &[u8],
        kind: BroadcastKind,
        seed: u64,
    ) -> Configuration<Processor> {
        let n = inputs.len();
        let params = ProcessorParams::new(n, 1, pf, kind, ValidateKind::PerRound, 16);
        let config = Configuration::new(processors(&params, inputs), vec![false; n]);
        let mut s = BenignFair::new(n, seed);
        run_until(
            config,
            &mut s,
            &[
                StopCondition::AllGoodDecided,
                StopCondition::EventCap(1_000_000),
            ],
        )
        .unwrap()
        .config
    }

    #[test]
    fn unanimous_zero_decides_zero() {
        for kind in [BroadcastKind::Trivial, BroadcastKind::Bracha] {
            let c = run(Arc::new(BenOrStyle { n: 4, t: 1 }), &[0; 4], kind, 3);
            for p in c.processes() {
                assert_eq!(p.decided(), Some((0, 2)));
                audit_round_entry(p).unwrap();
            }
        }
    }

    #[test]
    fn deterministic_protocol_never_asks_for_more_than_one_outcome() {
        let c = run(
            Arc::new(PointMassMajority),
            &[1, 0, 1, 1],
            BroadcastKind::Trivial,
            9,
        );
        assert!(c.processes().iter().all(|p| p.decision() == Some(1)));
    }

    #[derive(Debug)]
    struct TooWide;

    impl ProtocolFunction for TooWide {
        fn name(&self) -> &str {
            "too-wide"
        }
        fn max_support(&self) -> usize {
            1
        }
        fn initial(&self, _: u8) -> crate::dist::ChoiceDistribution {
            crate::dist::ChoiceDistribution::uniform([crate::fsrp::vote(0), crate::fsrp::vote(1)])
                .unwrap()
        }
        fn next(&self, _: u32, _: &MessageMultiset) -> crate::dist::ChoiceDistribution {
            unreachable!()
        }
        fn decide(&self, _: &MessageMultiset) -> Option<u8> {
            None
        }
    }

    #[test]
    fn oversized_support_is_rejected() {
        let params = ProcessorParams::new(
            4,
            1,
            Arc::new(TooWide),
            BroadcastKind::Trivial,
            ValidateKind::PerRound,
            4,
        );
        let mut c = Configuration::new(processors(&params, &[0; 4]), vec![false; 4]);
        let mut coins = crate::sim::ProcessorCoins::new(4, 0);
        let err = c.step(ProcessorId::new(1), None, &mut coins).unwrap_err();
        assert!(matches!(err, SimError::Protocol { .. }), "{err:?}");
    }
}
