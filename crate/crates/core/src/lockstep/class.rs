use std::sync::Arc;

use super::layout::GroupLayout;
use super::zfamily::{mask_rounds, ZFamily};
use crate::dist::{adjust_bounded, AdjustedDistribution, ChoiceDistribution, DistError, Rational};
use crate::fsrp::{MessageMultiset, ProtocolFunction};
use crate::payload::Payload;

/// Everything a class derivation depends on besides inputs and `z`.
#[derive(Clone, Debug)]
pub struct ClassParams {
    pub layout: GroupLayout,
    pub pf: Arc<dyn ProtocolFunction>,
    pub eps: Rational,
}

impl ClassParams {
    pub fn new(layout: GroupLayout, pf: Arc<dyn ProtocolFunction>, eps: Rational) -> Self {
        ClassParams { layout, pf, eps }
    }

    /// `D~` of `d` at this layout's `t` and the protocol's `R`.
    pub fn adjusted(&self, d: &ChoiceDistribution) -> Result<AdjustedDistribution, DistError> {
        adjust_bounded(
            &d.positive_part(),
            self.layout.t() as u64,
            self.eps,
            self.pf.max_support(),
        )
    }
}

/// Half of the window `(0, 1/R^2 - 1/t)` in which the adjustment is defined.
pub fn lemma_one_eps(t: usize, r: usize) -> Rational {
    let r2 = (r * r) as i128;
    (Rational::new(1, r2) - Rational::new(1, t as i128)) / Rational::from_integer(2)
}

/// An `E`-round lockstep execution class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LockstepClass {
    /// Input bit of each group.
    pub inputs: Vec<u8>,
    pub z: ZFamily,
    /// `group_messages[k - 1][g]`: the `t` round-`k` payloads of group `g`,
    /// in member order.
    pub group_messages: Vec<Vec<Vec<Payload>>>,
    /// `s[i - 1][j]`: `S_i^j`, the multiset group `j` feeds to `N` in round
    /// `i`.
    pub s: Vec<Vec<MessageMultiset>>,
    /// First round in which each group decides, and the bit.
    pub decisions: Vec<Option<(u8, u32)>>,
}

impl LockstepClass {
    pub fn horizon(&self) -> usize {
        self.z.rounds()
    }

    pub fn groups(&self) -> usize {
        self.inputs.len()
    }

    pub fn s_set(&self, i: usize, j: usize) -> &MessageMultiset {
        &self.s[i - 1][j]
    }

    /// Groups that never decide within the horizon.
    pub fn undecided_groups(&self) -> Vec<usize> {
        (0..self.groups())
            .filter(|j| self.decisions[*j].is_none())
            .collect()
    }

    /// Round-`k` payload of member `m` of group `g`.
    pub fn payload(&self, g: usize, m: usize, k: u32) -> &Payload {
        &self.group_messages[k as usize - 1][g][m]
    }
}

/// Builds the class of `inputs` and `z`: each group's round-`k` messages are
/// the `t` payloads of `D~` of `N(k-1, S_{k-1}^g)` (`N(0, b_g)` for `k = 1`),
/// sorted and handed to members in index order, and `S_i^j` collects the
/// payloads of every pair in `Z_i^j`.
pub fn derive_class(
    params: &ClassParams,
    inputs: &[u8],
    z: ZFamily,
) -> Result<LockstepClass, DistError> {
    let g = params.layout.groups();
    assert_eq!(inputs.len(), g);
    assert_eq!(z.groups(), g);
    let e = z.rounds();
    let pf = params.pf.as_ref();

    let mut group_messages: Vec<Vec<Vec<Payload>>> = Vec::with_capacity(e);
    let mut group_sets: Vec<Vec<MessageMultiset>> = Vec::with_capacity(e);
    let mut s: Vec<Vec<MessageMultiset>> = Vec::with_capacity(e);
    let mut decisions = vec![None; g];
    for i in 1..=e {
        let mut msgs = Vec::with_capacity(g);
        for (j, b) in inputs.iter().enumerate() {
            let d = if i == 1 {
                pf.initial(*b)
            } else {
                pf.next(i as u32 - 1, &s[i - 2][j])
            };
            msgs.push(params.adjusted(&d)?.expected_multiset());
        }
        group_sets.push(
            msgs.iter()
                .map(|m| m.iter().map(|p| (i as u32, p.clone())).collect())
                .collect(),
        );
        group_messages.push(msgs);
        let mut row = Vec::with_capacity(g);
        for (j, decision) in decisions.iter_mut().enumerate() {
            let mut set = MessageMultiset::new();
            for sender in 0..g {
                for k in mask_rounds(z.z_mask(i, j, sender)) {
                    set.extend(&group_sets[k as usize - 1][sender]);
                }
            }
            if decision.is_none() {
                *decision = pf.decide(&set).map(|b| (b, i as u32));
            }
            row.push(set);
        }
        s.push(row);
    }
    Ok(LockstepClass {
        inputs: inputs.to_vec(),
        z,
        group_messages,
        s,
        decisions,
    })
}
