use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::class::{ClassParams, LockstepClass};
use super::layout::GroupLayout;
use super::zfamily::{derive_permutations, mask_rounds, SchedulePermutations, ZFamily};
use crate::fsrp::{accept_keys, phase_one_keys, BroadcastKind, MessageMultiset, Processor};
use crate::sim::{
    CoinRequest, CoinSource, Configuration, InstanceId, Process, ProcessorId, SchedulerPolicy,
    SimError, Step,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayMismatch {
    #[error("{processor:?} finished round {round} at round {completed}")]
    Round {
        processor: ProcessorId,
        round: u32,
        completed: u32,
    },
    #[error("{processor:?} accepted {got} pairs after round {round}, Z holds {want}")]
    Accepted {
        processor: ProcessorId,
        round: u32,
        got: usize,
        want: usize,
    },
    #[error("{processor:?} fed a different multiset to N in round {round}")]
    Input { processor: ProcessorId, round: u32 },
    #[error("instance {instance:?} reached {receiver:?} out of permutation order")]
    Order {
        instance: InstanceId,
        receiver: ProcessorId,
    },
}

/// Hands each member of a group its share of the `D~` multiset: payloads
/// sorted canonically, assigned in member order.
#[derive(Clone, Debug)]
pub struct CanonicalCoins {
    params: ClassParams,
}

impl CanonicalCoins {
    pub fn new(params: ClassParams) -> Self {
        CanonicalCoins { params }
    }
}

impl CoinSource for CanonicalCoins {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        let bad = |reason: String| SimError::Protocol {
            processor: req.processor,
            reason,
        };
        let adj = self
            .params
            .adjusted(req.dist)
            .map_err(|e| bad(e.to_string()))?;
        let m = self.params.layout.member_index(req.processor);
        let payload = &adj.expected_multiset()[m];
        req.dist
            .index_of(payload)
            .ok_or_else(|| bad(format!("{payload} not in distribution")))
    }
}

enum Item {
    Deliver(Step),
    /// Member finished round `i`.
    Check {
        member: ProcessorId,
        round: u32,
        group: usize,
    },
}

/// Schedules a lockstep execution: in round `i` every member of group `j`
/// (groups and members in index order) accepts `Z_i^j \ Z_{i-1}^j`, earlier
/// rounds first, so its round-`i` step sees exactly `Z_i^j`. Each broadcast
/// instance reaches its receivers in the order of `π_{p,k}`.
pub struct LockstepPolicy<C> {
    layout: GroupLayout,
    kind: BroadcastKind,
    z: ZFamily,
    perms: SchedulePermutations,
    target: Option<LockstepClass>,
    coins: C,
    rounds: u32,
    next_round: u32,
    queue: VecDeque<Item>,
    started: bool,
    phase_one: BTreeSet<InstanceId>,
    /// Receivers served so far per instance.
    served: BTreeMap<InstanceId, usize>,
    mismatch: Option<ReplayMismatch>,
    halted: bool,
}

impl<C: CoinSource> LockstepPolicy<C> {
    /// Drives rounds `1..=rounds` of `z`. With a `target`, every member's
    /// round input is compared against `S_i^j`.
    pub fn new(
        layout: GroupLayout,
        kind: BroadcastKind,
        z: ZFamily,
        target: Option<LockstepClass>,
        coins: C,
        rounds: u32,
    ) -> Self {
        let perms = derive_permutations(&z, &layout);
        LockstepPolicy {
            layout,
            kind,
            z,
            perms,
            target,
            coins,
            rounds,
            next_round: 1,
            queue: VecDeque::new(),
            started: false,
            phase_one: BTreeSet::new(),
            served: BTreeMap::new(),
            mismatch: None,
            halted: false,
        }
    }

    pub fn coins(&self) -> &C {
        &self.coins
    }

    pub fn coins_mut(&mut self) -> &mut C {
        &mut self.coins
    }

    pub fn into_coins(self) -> C {
        self.coins
    }

    pub fn mismatch(&self) -> Option<&ReplayMismatch> {
        self.mismatch.as_ref()
    }

    /// Last round planned so far.
    pub fn planned_through(&self) -> u32 {
        self.next_round - 1
    }

    /// Stops scheduling after the current step.
    pub fn halt(&mut self) {
        self.halted = true;
    }

    fn plan_round(&mut self, i: u32) {
        let e = i as usize;
        let n = self.layout.n();
        let t = self.layout.t();
        for j in 0..self.layout.groups() {
            let mut fresh: Vec<(u32, usize)> = Vec::new();
            for g in 0..self.layout.groups() {
                let prev = if e > 1 { self.z.z_mask(e - 1, j, g) } else { 0 };
                for k in mask_rounds(self.z.z_mask(e, j, g) & !prev) {
                    fresh.push((k, g));
                }
            }
            fresh.sort();
            for q in self.layout.members(j) {
                for &(k, g) in &fresh {
                    for p in self.layout.members(g) {
                        let inst = InstanceId {
                            origin: p,
                            round: k,
                        };
                        if self.phase_one.insert(inst) {
                            for key in phase_one_keys(self.kind, n, t, inst) {
                                self.queue.push_back(Item::Deliver(Step {
                                    processor: key.to,
                                    received: Some(key),
                                }));
                            }
                        }
                        let pos = self.served.entry(inst).or_default();
                        let pi = self.perms.permutation(&self.layout, p, k);
                        if pi[*pos] != q {
                            self.mismatch.get_or_insert(ReplayMismatch::Order {
                                instance: inst,
                                receiver: q,
                            });
                        }
                        *pos += 1;
                        for key in accept_keys(self.kind, t, inst, q) {
                            self.queue.push_back(Item::Deliver(Step {
                                processor: q,
                                received: Some(key),
                            }));
                        }
                    }
                }
                self.queue.push_back(Item::Check {
                    member: q,
                    round: i,
                    group: j,
                });
            }
        }
    }

    fn check(&mut self, config: &Configuration<Processor>, q: ProcessorId, i: u32, j: usize) {
        let p = config.process(q);
        if p.completed_round() != i {
            self.mismatch.get_or_insert(ReplayMismatch::Round {
                processor: q,
                round: i,
                completed: p.completed_round(),
            });
            return;
        }
        let want = self.z.pairs(&self.layout, i as usize, j);
        let got: BTreeSet<(ProcessorId, u32)> = p.accepted().keys().copied().collect();
        if got != want {
            self.mismatch.get_or_insert(ReplayMismatch::Accepted {
                processor: q,
                round: i,
                got: got.len(),
                want: want.len(),
            });
            return;
        }
        if let Some(target) = &self.target {
            let input: Option<&MessageMultiset> = p.round_inputs().get(&i);
            if input != Some(target.s_set(i as usize, j)) {
                self.mismatch.get_or_insert(ReplayMismatch::Input {
                    processor: q,
                    round: i,
                });
            }
        }
    }
}

impl<C: CoinSource> CoinSource for LockstepPolicy<C> {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        self.coins.choose(req)
    }
}

impl<C: CoinSource> SchedulerPolicy<Processor> for LockstepPolicy<C> {
    fn name(&self) -> &'static str {
        "adversary-lockstep"
    }

    fn next_step(&mut self, config: &Configuration<Processor>) -> Option<Step> {
        if self.halted || self.mismatch.is_some() {
            return None;
        }
        if !self.started {
            if let Some(p) = ProcessorId::all(config.n()).find(|p| config.process(*p).needs_start())
            {
                return Some(Step {
                    processor: p,
                    received: None,
                });
            }
            self.started = true;
        }
        loop {
            match self.queue.pop_front() {
                Some(Item::Deliver(s)) => return Some(s),
                Some(Item::Check {
                    member,
                    round,
                    group,
                }) => {
                    self.check(config, member, round, group);
                    if self.mismatch.is_some() {
                        return None;
                    }
                }
                None => {
                    if self.next_round > self.rounds {
                        return None;
                    }
                    let i = self.next_round;
                    self.next_round += 1;
                    self.plan_round(i);
                    if self.mismatch.is_some() {
                        return None;
                    }
                }
            }
        }
    }
}
