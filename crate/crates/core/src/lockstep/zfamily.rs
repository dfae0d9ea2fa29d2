use std::collections::BTreeSet;

use super::layout::GroupLayout;
use crate::sim::ProcessorId;

/// Largest horizon the round bitmasks can hold.
pub const MAX_ROUNDS: usize = 127;

/// Set of rounds as a bitmask; bit `k` stands for round `k`.
pub type RoundMask = u128;

pub fn rounds_upto(i: usize) -> RoundMask {
    // bits 1..=i
    ((1u128 << (i + 1)) - 1) & !1
}

pub fn mask_rounds(m: RoundMask) -> impl Iterator<Item = u32> {
    (1..=MAX_ROUNDS as u32).filter(move |k| m >> k & 1 == 1)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ZError {
    #[error("z[{round}][{group}] is not the complement of a single group")]
    MalformedZ { round: usize, group: usize },
    #[error("z family has shape {got:?}, expected {want:?}")]
    Shape {
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("horizon {0} outside 1..={MAX_ROUNDS}")]
    Horizon(usize),
}

/// The raw sets `z_i^j` (each the complement of one group) and the derived
/// sets `Z_i^j` of `(sender, round)` pairs.
///
/// Indices are zero-based: `excluded[i - 1][j]` is the group missing from
/// `z_i^j`, and `z[i - 1][j][g]` holds the rounds `k` with `(p, k) ∈ Z_i^j`
/// for the members `p` of group `g`. Group closure holds by construction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ZFamily {
    groups: usize,
    excluded: Vec<Vec<usize>>,
    z: Vec<Vec<Vec<RoundMask>>>,
}

impl ZFamily {
    /// Applies the recurrence to `excluded`, an `E x groups` table.
    pub fn derive(groups: usize, excluded: Vec<Vec<usize>>) -> Result<Self, ZError> {
        let e = excluded.len();
        if e == 0 || e > MAX_ROUNDS {
            return Err(ZError::Horizon(e));
        }
        for (i, row) in excluded.iter().enumerate() {
            if row.len() != groups {
                return Err(ZError::Shape {
                    got: (e, row.len()),
                    want: (e, groups),
                });
            }
            if let Some(j) = row.iter().position(|x| *x >= groups) {
                return Err(ZError::MalformedZ {
                    round: i + 1,
                    group: j,
                });
            }
        }
        let mut z: Vec<Vec<Vec<RoundMask>>> = Vec::with_capacity(e);
        for i in 1..=e {
            let row = &excluded[i - 1];
            let mut cur = vec![vec![0 as RoundMask; groups]; groups];
            for j in 0..groups {
                let heard = |g: usize| g != row[j];
                for (g, slot) in cur[j].iter_mut().enumerate() {
                    if i == 1 {
                        if heard(g) {
                            *slot = 1 << 1;
                        }
                        continue;
                    }
                    let prev = &z[i - 2];
                    let mut m = prev[j][g];
                    if heard(g) {
                        m |= rounds_upto(i);
                    }
                    for (jp, prev_jp) in prev.iter().enumerate() {
                        if heard(jp) {
                            m |= prev_jp[g];
                        }
                    }
                    *slot = m;
                }
            }
            z.push(cur);
        }
        Ok(ZFamily {
            groups,
            excluded,
            z,
        })
    }

    /// Derives from explicit processor sets, rejecting any `z_i^j` that is
    /// not a group complement.
    pub fn from_sets(
        layout: &GroupLayout,
        sets: &[Vec<BTreeSet<ProcessorId>>],
    ) -> Result<Self, ZError> {
        let g = layout.groups();
        let mut excluded = Vec::with_capacity(sets.len());
        for (i, row) in sets.iter().enumerate() {
            if row.len() != g {
                return Err(ZError::Shape {
                    got: (sets.len(), row.len()),
                    want: (sets.len(), g),
                });
            }
            let mut ex = Vec::with_capacity(g);
            for (j, s) in row.iter().enumerate() {
                let malformed = ZError::MalformedZ {
                    round: i + 1,
                    group: j,
                };
                let missing: Vec<usize> = (0..g)
                    .filter(|gi| layout.members(*gi).all(|p| !s.contains(&p)))
                    .collect();
                let full = (0..g)
                    .filter(|gi| !missing.contains(gi))
                    .all(|gi| layout.members(gi).all(|p| s.contains(&p)));
                let in_range = s.iter().all(|p| p.slot() < layout.n());
                if missing.len() != 1 || !full || !in_range {
                    return Err(malformed);
                }
                ex.push(missing[0]);
            }
            excluded.push(ex);
        }
        Self::derive(g, excluded)
    }

    /// Canonical start: every `z_i^j` misses the last group.
    pub fn canonical(groups: usize, rounds: usize) -> Result<Self, ZError> {
        Self::derive(groups, vec![vec![groups - 1; groups]; rounds])
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn rounds(&self) -> usize {
        self.excluded.len()
    }

    /// Group missing from `z_i^j` (1-based round, 0-based groups).
    pub fn excluded(&self, i: usize, j: usize) -> usize {
        self.excluded[i - 1][j]
    }

    pub fn excluded_table(&self) -> &[Vec<usize>] {
        &self.excluded
    }

    /// Whether `z_i^j` contains group `g`.
    pub fn hears(&self, i: usize, j: usize, g: usize) -> bool {
        self.excluded[i - 1][j] != g
    }

    /// Rounds `k` with `(p, k) ∈ Z_i^j` for `p` in group `g`.
    pub fn z_mask(&self, i: usize, j: usize, g: usize) -> RoundMask {
        self.z[i - 1][j][g]
    }

    pub fn contains(&self, i: usize, j: usize, g: usize, k: u32) -> bool {
        self.z_mask(i, j, g) >> k & 1 == 1
    }

    /// `Z_i^j` as explicit `(processor, round)` pairs.
    pub fn pairs(&self, layout: &GroupLayout, i: usize, j: usize) -> BTreeSet<(ProcessorId, u32)> {
        let mut out = BTreeSet::new();
        for g in 0..self.groups {
            for k in mask_rounds(self.z_mask(i, j, g)) {
                out.extend(layout.members(g).map(|p| (p, k)));
            }
        }
        out
    }

    /// Smallest `i` with `(p, k) ∈ Z_i^j` for `p` in group `g`.
    pub fn first_round(&self, j: usize, g: usize, k: u32) -> Option<usize> {
        (1..=self.rounds()).find(|i| self.contains(*i, j, g, k))
    }

    /// Checks monotonicity `Z_{i-1}^j ⊆ Z_i^j`, the round bound `k <= i`, and
    /// that the round-`i` part of `Z_i^j` is exactly `z_i^j`.
    pub fn check_invariants(&self) -> Result<(), String> {
        for i in 1..=self.rounds() {
            for j in 0..self.groups {
                for g in 0..self.groups {
                    let m = self.z_mask(i, j, g);
                    if m & !rounds_upto(i) != 0 {
                        return Err(format!("Z[{i}][{j}] has rounds beyond {i} for group {g}"));
                    }
                    if i > 1 && self.z_mask(i - 1, j, g) & !m != 0 {
                        return Err(format!("Z[{}][{j}] not contained in Z[{i}][{j}]", i - 1));
                    }
                    if (m >> i & 1 == 1) != self.hears(i, j, g) {
                        return Err(format!(
                            "round-{i} part of Z[{i}][{j}] differs from z for group {g}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `π_{p,k}` for every sender group and round: groups ordered by the first
/// round in which they hold `(p, k)`, never-holding groups last, ties by
/// group index. Members of a group share their permutations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchedulePermutations {
    /// `order[g][k - 1]` is the group order for senders in group `g`.
    order: Vec<Vec<Vec<usize>>>,
    t: usize,
}

pub fn derive_permutations(zf: &ZFamily, layout: &GroupLayout) -> SchedulePermutations {
    let g = zf.groups();
    let order = (0..g)
        .map(|sender| {
            (1..=zf.rounds() as u32)
                .map(|k| {
                    let mut groups: Vec<usize> = (0..g).collect();
                    groups
                        .sort_by_key(|j| (zf.first_round(*j, sender, k).unwrap_or(usize::MAX), *j));
                    groups
                })
                .collect()
        })
        .collect();
    SchedulePermutations {
        order,
        t: layout.t(),
    }
}

impl SchedulePermutations {
    pub fn group_order(&self, sender_group: usize, round: u32) -> &[usize] {
        &self.order[sender_group][round as usize - 1]
    }

    /// `π_{p,k}` as processors, groups in block order, members by index.
    pub fn permutation(
        &self,
        layout: &GroupLayout,
        p: ProcessorId,
        round: u32,
    ) -> Vec<ProcessorId> {
        self.group_order(layout.group_of(p), round)
            .iter()
            .flat_map(|g| layout.members(*g))
            .collect()
    }
}
