use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::dist::ChoiceDistribution;
use crate::payload::Payload;

/// Tag byte of the vote payloads used by the reference protocols.
pub const VOTE_TAG: u8 = b'v';

pub fn vote(bit: u8) -> Payload {
    Payload::tagged_bit(VOTE_TAG, bit)
}

/// Reads a reference-protocol vote back out of a payload.
pub fn vote_bit(p: &Payload) -> Option<u8> {
    match p.as_bytes() {
        [VOTE_TAG, b @ (0 | 1)] => Some(*b),
        _ => None,
    }
}

/// Multiset of `(round, payload)` pairs with sender identities erased.
///
/// This is the only thing a protocol function ever sees, so permuting the
/// senders attached to validated messages cannot change its output.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageMultiset {
    counts: BTreeMap<(u32, Payload), u32>,
}

impl MessageMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, round: u32, payload: Payload) {
        self.add_n(round, payload, 1);
    }

    pub fn add_n(&mut self, round: u32, payload: Payload, n: u32) {
        if n > 0 {
            *self.counts.entry((round, payload)).or_default() += n;
        }
    }

    pub fn extend(&mut self, other: &MessageMultiset) {
        for ((r, p), c) in &other.counts {
            self.add_n(*r, p.clone(), *c);
        }
    }

    pub fn count(&self, round: u32, payload: &Payload) -> u32 {
        // BTreeMap lookup needs an owned key; clone is cheap for short payloads
        self.counts
            .get(&(round, payload.clone()))
            .copied()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.values().map(|c| *c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Payload, u32)> {
        self.counts.iter().map(|((r, p), c)| (*r, p, *c))
    }

    /// Payload counts of a single round.
    pub fn round(&self, round: u32) -> impl Iterator<Item = (&Payload, u32)> {
        self.counts
            .range((round, Payload::new(Vec::new()).expect("empty payload"))..)
            .take_while(move |((r, _), _)| *r == round)
            .map(|((_, p), c)| (p, *c))
    }

    pub fn round_len(&self, round: u32) -> usize {
        self.round(round).map(|(_, c)| c as usize).sum()
    }

    pub fn max_round(&self) -> Option<u32> {
        self.counts.keys().next_back().map(|(r, _)| *r)
    }

    /// The sub-multiset of pairs with round `< round`.
    pub fn before(&self, round: u32) -> MessageMultiset {
        MessageMultiset {
            counts: self
                .counts
                .iter()
                .filter(|((r, _), _)| *r < round)
                .map(|(k, c)| (k.clone(), *c))
                .collect(),
        }
    }

    /// Whether `self` is contained in `other` as a multiset.
    pub fn is_sub_multiset(&self, other: &MessageMultiset) -> bool {
        self.counts
            .iter()
            .all(|((r, p), c)| other.count(*r, p) >= *c)
    }
}

impl fmt::Debug for MessageMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(
                self.counts
                    .iter()
                    .map(|((r, p), c)| (format!("{r}:{p}"), c)),
            )
            .finish()
    }
}

impl FromIterator<(u32, Payload)> for MessageMultiset {
    fn from_iter<I: IntoIterator<Item = (u32, Payload)>>(iter: I) -> Self {
        let mut m = MessageMultiset::new();
        for (r, p) in iter {
            m.add(r, p);
        }
        m
    }
}

/// The protocol function `N` of a fully symmetric round protocol.
pub trait ProtocolFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Global bound `R` on the number of random alternatives.
    fn max_support(&self) -> usize;

    /// `N(0, b)`: distribution of the round-1 message for input bit `b`.
    fn initial(&self, input: u8) -> ChoiceDistribution;

    /// `N(k, S u S')`: distribution of the round `k + 1` message.
    fn next(&self, round: u32, messages: &MessageMultiset) -> ChoiceDistribution;

    /// Deterministic decision on the validated multiset.
    fn decide(&self, messages: &MessageMultiset) -> Option<u8>;
}

fn tally_votes(messages: &MessageMultiset, round: u32) -> [u32; 2] {
    let mut votes = [0u32; 2];
    for (p, c) in messages.round(round) {
        if let Some(b) = vote_bit(p) {
            votes[b as usize] += c;
        }
    }
    votes
}

/// Decides `b` once every round-`k` message (k >= 2) is a vote for `b`.
fn unanimous_decision(messages: &MessageMultiset) -> Option<u8> {
    let k = messages.max_round()?;
    if k < 2 {
        return None;
    }
    let total = messages.round_len(k) as u32;
    let votes = tally_votes(messages, k);
    (0..2u8).find(|&b| total > 0 && votes[b as usize] == total)
}

/// Ben-Or style reference protocol: keep a vote that has more than
/// `(n + t) / 2` support among this round's messages, otherwise flip a fair
/// coin.
#[derive(Debug, Clone)]
pub struct BenOrStyle {
    pub n: usize,
    pub t: usize,
}

impl ProtocolFunction for BenOrStyle {
    fn name(&self) -> &str {
        "benor-style"
    }

    fn max_support(&self) -> usize {
        2
    }

    fn initial(&self, input: u8) -> ChoiceDistribution {
        ChoiceDistribution::point(vote(input))
    }

    fn next(&self, round: u32, messages: &MessageMultiset) -> ChoiceDistribution {
        let votes = tally_votes(messages, round);
        for b in 0..2u8 {
            if 2 * votes[b as usize] as usize > self.n + self.t {
                return ChoiceDistribution::point(vote(b));
            }
        }
        ChoiceDistribution::uniform([vote(0), vote(1)]).expect("two distinct payloads")
    }

    fn decide(&self, messages: &MessageMultiset) -> Option<u8> {
        unanimous_decision(messages)
    }
}

/// Deterministic member of the class: vote for this round's majority (ties
/// go to 0).
#[derive(Debug, Clone)]
pub struct PointMassMajority;

impl ProtocolFunction for PointMassMajority {
    fn name(&self) -> &str {
        "point-mass-deterministic"
    }

    fn max_support(&self) -> usize {
        1
    }

    fn initial(&self, input: u8) -> ChoiceDistribution {
        ChoiceDistribution::point(vote(input))
    }

    fn next(&self, round: u32, messages: &MessageMultiset) -> ChoiceDistribution {
        let votes = tally_votes(messages, round);
        ChoiceDistribution::point(vote(u8::from(votes[1] > votes[0])))
    }

    fn decide(&self, messages: &MessageMultiset) -> Option<u8> {
        unanimous_decision(messages)
    }
}

type Constructor = Box<dyn Fn(usize, usize) -> Arc<dyn ProtocolFunction> + Send + Sync>;

/// Name-keyed protocol plug-ins. Constructors receive `(n, t)`.
pub struct ProtocolRegistry {
    entries: BTreeMap<String, Constructor>,
}

impl ProtocolRegistry {
    pub fn empty() -> Self {
        ProtocolRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("benor-style", |n, t| Arc::new(BenOrStyle { n, t }));
        r.register("point-mass-deterministic", |_, _| {
            Arc::new(PointMassMajority)
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, ctor: F)
    where
        F: Fn(usize, usize) -> Arc<dyn ProtocolFunction> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Box::new(ctor));
    }

    pub fn build(&self, name: &str, n: usize, t: usize) -> Option<Arc<dyn ProtocolFunction>> {
        self.entries.get(name).map(|c| c(n, t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl Default for ProtocolRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl fmt::Debug for ProtocolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn votes(round: u32, zeros: u32, ones: u32) -> MessageMultiset {
        let mut m = MessageMultiset::new();
        m.add_n(round, vote(0), zeros);
        m.add_n(round, vote(1), ones);
        m
    }

    #[test]
    fn benor_thresholds_at_n25_t5() {
        let pf = BenOrStyle { n: 25, t: 5 };
        assert_eq!(
            pf.next(1, &votes(1, 16, 4)),
            ChoiceDistribution::point(vote(0))
        );
        // 15 is not more than (25 + 5) / 2
        assert_eq!(pf.next(1, &votes(1, 15, 5)).len(), 2);
        assert_eq!(
            pf.next(3, &votes(3, 2, 18)),
            ChoiceDistribution::point(vote(1))
        );
    }

    #[test]
    fn benor_decides_only_on_unanimous_rounds_after_the_first() {
        let pf = BenOrStyle { n: 25, t: 5 };
        assert_eq!(pf.decide(&votes(1, 20, 0)), None);
        let mut m = votes(1, 20, 0);
        m.extend(&votes(2, 20, 0));
        assert_eq!(pf.decide(&m), Some(0));
        let mut m = votes(1, 20, 0);
        m.extend(&votes(2, 19, 1));
        assert_eq!(pf.decide(&m), None);
    }

    #[test]
    fn support_never_exceeds_two() {
        let pf = BenOrStyle { n: 10, t: 2 };
        for z in 0..=8 {
            assert!(pf.next(1, &votes(1, z, 8 - z)).len() <= pf.max_support());
        }
    }

    #[test]
    fn multiset_round_view() {
        let mut m = votes(1, 2, 3);
        m.extend(&votes(2, 1, 0));
        assert_eq!(m.round_len(1), 5);
        assert_eq!(m.round_len(2), 1);
        assert_eq!(m.round_len(3), 0);
        assert_eq!(m.max_round(), Some(2));
        assert_eq!(m.before(2), votes(1, 2, 3));
        assert!(votes(1, 1, 1).is_sub_multiset(&m));
        assert!(!votes(1, 3, 0).is_sub_multiset(&m));
    }

    #[test]
    fn registry_builds_defaults() {
        let reg = ProtocolRegistry::with_defaults();
        assert_eq!(reg.build("benor-style", 25, 5).unwrap().max_support(), 2);
        assert!(reg.build("nope", 25, 5).is_none());
        assert_eq!(reg.names().count(), 2);
    }
}
