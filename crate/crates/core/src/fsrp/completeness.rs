use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::protocol::{MessageMultiset, ProtocolFunction};
use super::validate::{AcceptedSet, ValidatePolicy};
use crate::payload::Payload;
use crate::sim::ProcessorId;

/// Honest execution history: every processor's messages up to some round
/// and the nested sets each one fed to the protocol function.
#[derive(Clone, Debug)]
pub struct HonestHistory {
    pub n: usize,
    pub t: usize,
    /// `messages[(q, r)]` is `m_r` of `q`.
    pub messages: AcceptedSet,
    /// `sets[(q, r)]` is `S_r` of `q`, as `(sender, round)` keys.
    pub sets: BTreeMap<(ProcessorId, u32), BTreeSet<(ProcessorId, u32)>>,
}

impl HonestHistory {
    /// Builds a random history through round `k` (messages `m_1..m_k` for
    /// every processor).
    pub fn random(
        pf: &dyn ProtocolFunction,
        n: usize,
        t: usize,
        k: u32,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut messages = AcceptedSet::new();
        let mut sets: BTreeMap<(ProcessorId, u32), BTreeSet<(ProcessorId, u32)>> = BTreeMap::new();
        let all: Vec<ProcessorId> = ProcessorId::all(n).collect();
        for q in &all {
            let b = rng.random_range(0..2u8);
            let d = pf.initial(b);
            messages.insert((*q, 1), d.entries()[d.sample_index(rng.random())].0.clone());
        }
        for r in 1..k {
            for q in &all {
                let mut s = match r {
                    1 => BTreeSet::new(),
                    _ => sets[&(*q, r - 1)].clone(),
                };
                // occasionally see more of the previous round than S_{r-1} did
                if r > 1 && rng.random_bool(0.5) {
                    let extra = all.choose(rng).expect("n > 0");
                    s.insert((*extra, r - 1));
                }
                let mut senders = all.clone();
                senders.shuffle(rng);
                s.extend(senders[..n - t].iter().map(|p| (*p, r)));
                let input: MessageMultiset =
                    s.iter().map(|key| (key.1, messages[key].clone())).collect();
                let d = pf.next(r, &input);
                let v = d.entries()[d.sample_index(rng.random())].0.clone();
                messages.insert((*q, r + 1), v);
                sets.insert((*q, r), s);
            }
        }
        HonestHistory {
            n,
            t,
            messages,
            sets,
        }
    }

    /// Causal closure of `p`'s round-`k` message: `m_1..m_k` of `p` and,
    /// recursively, every set those messages were computed from.
    pub fn closure(&self, p: ProcessorId, k: u32) -> AcceptedSet {
        let mut keys = BTreeSet::new();
        let mut stack = vec![(p, k)];
        while let Some((q, r)) = stack.pop() {
            for i in 1..=r {
                if keys.insert((q, i)) && i > 1 {
                    stack.extend(self.sets[&(q, i - 1)].iter().copied());
                }
            }
        }
        keys.into_iter()
            .map(|key| (key, self.messages[&key].clone()))
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CompletenessReport {
    pub trials: usize,
    /// `(trial, sender, round)` of every honest message left unmarked.
    pub failures: Vec<(usize, ProcessorId, u32)>,
    pub errors: Vec<String>,
}

impl CompletenessReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.errors.is_empty()
    }
}

/// Builds `trials` random honest histories with `k` in `1..=k_max`, hands
/// the policy a superset of the causal closure of a random message `m_k`,
/// and checks that `m_k` is marked.
pub fn good_message_completeness_check(
    policy: &dyn ValidatePolicy,
    pf: &dyn ProtocolFunction,
    n: usize,
    t: usize,
    k_max: u32,
    trials: usize,
    seed: u64,
) -> CompletenessReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CompletenessReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let k = rng.random_range(1..=k_max);
        let h = HonestHistory::random(pf, n, t, k, &mut rng);
        let p = ProcessorId::from_slot(rng.random_range(0..n));
        let mut w = h.closure(p, k);
        let all: Vec<(&(ProcessorId, u32), &Payload)> = h.messages.iter().collect();
        for _ in 0..rng.random_range(0..=n) {
            let (key, v) = all.choose(&mut rng).expect("nonempty history");
            w.insert(**key, (*v).clone());
        }
        match policy.mark(&w, pf, n, t) {
            Ok(marked) if marked.contains(&(p, k)) => {}
            Ok(_) => report.failures.push((trial, p, k)),
            Err(e) => report.errors.push(format!("trial {trial}: {e}")),
        }
    }
    report
}
