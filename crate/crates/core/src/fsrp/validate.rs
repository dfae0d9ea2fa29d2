use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::protocol::{MessageMultiset, ProtocolFunction};
use crate::payload::Payload;
use crate::sim::ProcessorId;

/// Default cap on candidate sets examined by one chained check.
pub const CHAINED_BUDGET: usize = 100_000;

/// `W+`: accepted messages keyed by `(sender, round)`.
pub type AcceptedSet = BTreeMap<(ProcessorId, u32), Payload>;

/// Keys of the messages a policy marks as validated.
pub type MarkedSet = BTreeSet<(ProcessorId, u32)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidateKind {
    PerRound,
    Chained,
}

impl ValidateKind {
    pub fn name(self) -> &'static str {
        match self {
            ValidateKind::PerRound => "per-round",
            ValidateKind::Chained => "chained",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per-round" => Some(ValidateKind::PerRound),
            "chained" => Some(ValidateKind::Chained),
            _ => None,
        }
    }

    pub fn policy(self) -> Box<dyn ValidatePolicy> {
        match self {
            ValidateKind::PerRound => Box::new(PerRound::new()),
            ValidateKind::Chained => Box::new(Chained::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidateError {
    #[error("chained search for {sender:?} round {round} exceeded {budget} candidate sets")]
    SearchBudgetExceeded {
        sender: ProcessorId,
        round: u32,
        budget: usize,
    },
}

/// What a policy can see when judging one candidate.
pub struct ValidationContext<'a> {
    pub pf: &'a dyn ProtocolFunction,
    pub n: usize,
    pub t: usize,
    pub accepted: &'a AcceptedSet,
    pub validated: &'a MarkedSet,
    /// Validated messages as a multiset, kept in step with `validated`.
    pub pool: &'a MessageMultiset,
}

impl ValidationContext<'_> {
    fn quorum(&self) -> u32 {
        (self.n - self.t) as u32
    }
}

pub trait ValidatePolicy: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Whether the round-`round` message of `sender` is valid given the
    /// messages already validated in `ctx`. Only lower rounds may matter.
    fn is_valid(
        &self,
        sender: ProcessorId,
        round: u32,
        payload: &Payload,
        ctx: &ValidationContext<'_>,
    ) -> Result<bool, ValidateError>;

    /// `V(W+)`: marks everything reachable by repeated application of
    /// [`is_valid`](Self::is_valid) in ascending round order.
    fn mark(
        &self,
        accepted: &AcceptedSet,
        pf: &dyn ProtocolFunction,
        n: usize,
        t: usize,
    ) -> Result<MarkedSet, ValidateError> {
        let mut validated = MarkedSet::new();
        let mut pool = MessageMultiset::new();
        let mut by_round: Vec<_> = accepted.iter().collect();
        by_round.sort_by_key(|((s, r), _)| (*r, *s));
        for ((s, r), p) in by_round {
            let ok = self.is_valid(
                *s,
                *r,
                p,
                &ValidationContext {
                    pf,
                    n,
                    t,
                    accepted,
                    validated: &validated,
                    pool: &pool,
                },
            )?;
            if ok {
                validated.insert((*s, *r));
                pool.add(*r, p.clone());
            }
        }
        Ok(validated)
    }
}

fn initial_support(pf: &dyn ProtocolFunction, payload: &Payload) -> bool {
    (0..2).any(|b| pf.initial(b).mass(payload) > 0.0)
}

/// Calls `f` on every count vector `c` with `c[i] <= avail[i]` and
/// `sum(c) == total`, in lexicographic order. Stops early when `f` returns
/// true and reports whether it did.
pub fn for_each_count_vector(avail: &[u32], total: u32, f: &mut dyn FnMut(&[u32]) -> bool) -> bool {
    fn go(
        avail: &[u32],
        left: u32,
        cur: &mut Vec<u32>,
        suffix: &[u32],
        f: &mut dyn FnMut(&[u32]) -> bool,
    ) -> bool {
        let i = cur.len();
        if i == avail.len() {
            return left == 0 && f(cur);
        }
        // remaining capacity after this slot bounds how low we may go
        let lo = left.saturating_sub(suffix[i + 1]);
        let hi = avail[i].min(left);
        for c in lo..=hi {
            cur.push(c);
            if go(avail, left - c, cur, suffix, f) {
                return true;
            }
            cur.pop();
        }
        false
    }
    let mut suffix = vec![0u32; avail.len() + 1];
    for i in (0..avail.len()).rev() {
        suffix[i] = suffix[i + 1] + avail[i];
    }
    if suffix[0] < total {
        return false;
    }
    go(
        avail,
        total,
        &mut Vec::with_capacity(avail.len()),
        &suffix,
        f,
    )
}

type SupportKey = (String, usize, usize, u32, Vec<(Payload, u32)>);

/// A round-`k` message is valid iff some `n - t` validated `(k-1)`-messages
/// put it in the support of `N(k-1, .)`. Round-1 messages must be in the
/// support of `N(0, 0)` or `N(0, 1)`.
#[derive(Default)]
pub struct PerRound {
    reachable: Mutex<HashMap<SupportKey, BTreeSet<Payload>>>,
}

impl PerRound {
    pub fn new() -> Self {
        Self::default()
    }

    fn reachable(&self, round: u32, ctx: &ValidationContext<'_>) -> BTreeSet<Payload> {
        let prev: Vec<(Payload, u32)> = ctx
            .pool
            .round(round - 1)
            .map(|(p, c)| (p.clone(), c))
            .collect();
        let key = (ctx.pf.name().to_string(), ctx.n, ctx.t, round, prev);
        if let Some(s) = self.reachable.lock().expect("cache lock").get(&key) {
            return s.clone();
        }
        let prev = &key.4;
        let avail: Vec<u32> = prev.iter().map(|(_, c)| *c).collect();
        let mut out = BTreeSet::new();
        for_each_count_vector(&avail, ctx.quorum(), &mut |cv| {
            let mut s = MessageMultiset::new();
            for ((p, _), c) in prev.iter().zip(cv) {
                s.add_n(round - 1, p.clone(), *c);
            }
            out.extend(ctx.pf.next(round - 1, &s).positive_support().cloned());
            false
        });
        self.reachable
            .lock()
            .expect("cache lock")
            .insert(key, out.clone());
        out
    }
}

impl fmt::Debug for PerRound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PerRound")
    }
}

impl ValidatePolicy for PerRound {
    fn name(&self) -> &'static str {
        "per-round"
    }

    fn is_valid(
        &self,
        _sender: ProcessorId,
        round: u32,
        payload: &Payload,
        ctx: &ValidationContext<'_>,
    ) -> Result<bool, ValidateError> {
        if round == 1 {
            return Ok(initial_support(ctx.pf, payload));
        }
        if ctx.pool.round_len(round - 1) < ctx.quorum() as usize {
            return Ok(false);
        }
        Ok(self.reachable(round, ctx).contains(payload))
    }
}

/// A round-`k` message of `p` is valid iff `p`'s messages `m_1..m_{k-1}` are
/// validated and there are nested validated sets `S_1 ⊂ … ⊂ S_{k-1}`, each
/// `S_i` holding exactly `n - t` round-`i` messages, with `m_1` in the
/// support of some `N(0, b)` and every `m_{i+1}` in the support of
/// `N(i, S_i)`.
#[derive(Debug, Clone)]
pub struct Chained {
    pub budget: usize,
}

impl Default for Chained {
    fn default() -> Self {
        Chained {
            budget: CHAINED_BUDGET,
        }
    }
}

struct ChainSearch<'a, 'c> {
    ctx: &'a ValidationContext<'c>,
    /// `history[i]` is the payload of `m_{i+1}`.
    history: Vec<&'a Payload>,
    failed: HashSet<(u32, MessageMultiset)>,
    visited: usize,
    budget: usize,
}

impl ChainSearch<'_, '_> {
    /// Can the chain be continued from `S_i = s`?
    fn extend(&mut self, i: u32, s: &MessageMultiset) -> Result<bool, ()> {
        self.visited += 1;
        if self.visited > self.budget {
            return Err(());
        }
        if !self
            .ctx
            .pf
            .next(i, s)
            .positive_support()
            .any(|p| p == self.history[i as usize])
        {
            return Ok(false);
        }
        if i as usize + 1 == self.history.len() {
            return Ok(true);
        }
        if self.failed.contains(&(i, s.clone())) {
            return Ok(false);
        }
        let next = i + 1;
        // S_{i+1}: every earlier (round, payload) count between S_i's and the
        // pool's, plus exactly n - t round-(i+1) messages from the pool
        let mut slots: Vec<(u32, Payload, u32, u32)> = Vec::new();
        for r in 1..next {
            for (p, avail) in self.ctx.pool.round(r) {
                slots.push((r, p.clone(), s.count(r, p), avail));
            }
        }
        let fresh: Vec<(Payload, u32)> = self
            .ctx
            .pool
            .round(next)
            .map(|(p, c)| (p.clone(), c))
            .collect();
        let fresh_avail: Vec<u32> = fresh.iter().map(|(_, c)| *c).collect();
        let mut found = Ok(false);
        let quorum = self.ctx.quorum();
        let mut earlier: Vec<u32> = slots.iter().map(|(_, _, lo, _)| *lo).collect();
        'outer: loop {
            let mut stop = false;
            let mut err = false;
            for_each_count_vector(&fresh_avail, quorum, &mut |cv| {
                let mut cand = MessageMultiset::new();
                for ((r, p, _, _), c) in slots.iter().zip(&earlier) {
                    cand.add_n(*r, p.clone(), *c);
                }
                for ((p, _), c) in fresh.iter().zip(cv) {
                    cand.add_n(next, p.clone(), *c);
                }
                match self.extend(next, &cand) {
                    Ok(true) => {
                        stop = true;
                        true
                    }
                    Ok(false) => false,
                    Err(()) => {
                        err = true;
                        true
                    }
                }
            });
            if err {
                return Err(());
            }
            if stop {
                found = Ok(true);
                break 'outer;
            }
            // odometer over the earlier-round counts
            let mut idx = 0;
            loop {
                if idx == slots.len() {
                    break 'outer;
                }
                if earlier[idx] < slots[idx].3 {
                    earlier[idx] += 1;
                    break;
                }
                earlier[idx] = slots[idx].2;
                idx += 1;
            }
        }
        if found == Ok(false) {
            self.failed.insert((i, s.clone()));
        }
        found
    }
}

impl ValidatePolicy for Chained {
    fn name(&self) -> &'static str {
        "chained"
    }

    fn is_valid(
        &self,
        sender: ProcessorId,
        round: u32,
        payload: &Payload,
        ctx: &ValidationContext<'_>,
    ) -> Result<bool, ValidateError> {
        let mut history = Vec::with_capacity(round as usize);
        for r in 1..round {
            if !ctx.validated.contains(&(sender, r)) {
                return Ok(false);
            }
            history.push(&ctx.accepted[&(sender, r)]);
        }
        history.push(payload);
        if !initial_support(ctx.pf, history[0]) {
            return Ok(false);
        }
        if round == 1 {
            return Ok(true);
        }
        let mut search = ChainSearch {
            ctx,
            history,
            failed: HashSet::new(),
            visited: 0,
            budget: self.budget,
        };
        // S_1: n - t round-1 messages from the pool
        let first: Vec<(Payload, u32)> = ctx.pool.round(1).map(|(p, c)| (p.clone(), c)).collect();
        let avail: Vec<u32> = first.iter().map(|(_, c)| *c).collect();
        let mut result = Ok(false);
        for_each_count_vector(&avail, ctx.quorum(), &mut |cv| {
            let mut s = MessageMultiset::new();
            for ((p, _), c) in first.iter().zip(cv) {
                s.add_n(1, p.clone(), *c);
            }
            match search.extend(1, &s) {
                Ok(false) => false,
                Ok(true) => {
                    result = Ok(true);
                    true
                }
                Err(()) => {
                    result = Err(ValidateError::SearchBudgetExceeded {
                        sender,
                        round,
                        budget: self.budget,
                    });
                    true
                }
            }
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsrp::protocol::{vote, BenOrStyle};

    fn pid(i: u32) -> ProcessorId {
        ProcessorId::new(i)
    }

    #[test]
    fn count_vectors_enumerate_exactly() {
        let mut seen = Vec::new();
        for_each_count_vector(&[2, 1, 3], 3, &mut |c| {
            seen.push(c.to_vec());
            false
        });
        let mut brute = Vec::new();
        for a in 0..=2 {
            for b in 0..=1 {
                for c in 0..=3 {
                    if a + b + c == 3 {
                        brute.push(vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(seen, brute);
        assert!(!for_each_count_vector(&[1, 1], 3, &mut |_| true));
    }

    #[test]
    fn empty_accepted_set_marks_nothing() {
        let pf = BenOrStyle { n: 4, t: 1 };
        for kind in [ValidateKind::PerRound, ValidateKind::Chained] {
            assert!(kind
                .policy()
                .mark(&AcceptedSet::new(), &pf, 4, 1)
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn garbage_round_two_payload_is_never_marked() {
        let pf = BenOrStyle { n: 4, t: 1 };
        let mut w = AcceptedSet::new();
        for i in 1..=4 {
            w.insert((pid(i), 1), vote(0));
        }
        w.insert((pid(1), 2), Payload::new(b"junk".to_vec()).unwrap());
        for kind in [ValidateKind::PerRound, ValidateKind::Chained] {
            let m = kind.policy().mark(&w, &pf, 4, 1).unwrap();
            assert_eq!(m.len(), 4, "{kind:?}");
            assert!(!m.contains(&(pid(1), 2)));
        }
    }

    #[test]
    fn chained_needs_the_senders_own_history() {
        // round-2 vote of p4 without p4's round-1 message
        let pf = BenOrStyle { n: 4, t: 1 };
        let mut w = AcceptedSet::new();
        for i in 1..=3 {
            w.insert((pid(i), 1), vote(0));
        }
        w.insert((pid(4), 2), vote(0));
        let per = PerRound::new().mark(&w, &pf, 4, 1).unwrap();
        let ch = Chained::default().mark(&w, &pf, 4, 1).unwrap();
        assert!(per.contains(&(pid(4), 2)));
        assert!(!ch.contains(&(pid(4), 2)));
    }

    #[test]
    fn chained_budget_is_enforced() {
        let pf = BenOrStyle { n: 4, t: 1 };
        let mut w = AcceptedSet::new();
        for i in 1..=4 {
            w.insert((pid(i), 1), vote(0));
            w.insert((pid(i), 2), vote(0));
        }
        let err = Chained { budget: 0 }.mark(&w, &pf, 4, 1).unwrap_err();
        assert!(matches!(
            err,
            ValidateError::SearchBudgetExceeded { round: 2, .. }
        ));
    }
}
