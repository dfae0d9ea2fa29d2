use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::Rational;
use crate::sim::ProcessorId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("t = {t} does not divide n = {n}")]
    NotDivisible { n: usize, t: usize },
    #[error("t must be positive")]
    ZeroT,
    #[error("c * t = {0} is not a positive integer")]
    FaultyNotIntegral(String),
    #[error("{faulty} faulty members do not fit in a group of {t}")]
    TooManyFaulty { faulty: usize, t: usize },
}

/// `n / t` contiguous groups of `t` processors. The last `faulty_per_group`
/// members of each group are the faulty ones.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupLayout {
    n: usize,
    t: usize,
    faulty_per_group: usize,
}

impl GroupLayout {
    pub fn new(n: usize, t: usize, faulty_per_group: usize) -> Result<Self, LayoutError> {
        if t == 0 {
            return Err(LayoutError::ZeroT);
        }
        if n % t != 0 {
            return Err(LayoutError::NotDivisible { n, t });
        }
        if faulty_per_group > t {
            return Err(LayoutError::TooManyFaulty {
                faulty: faulty_per_group,
                t,
            });
        }
        Ok(GroupLayout {
            n,
            t,
            faulty_per_group,
        })
    }

    /// Layout with `c * t` faulty members per group.
    pub fn with_fraction(n: usize, t: usize, c: Rational) -> Result<Self, LayoutError> {
        let ct = c * Rational::from_integer(t as i128);
        if !ct.is_integer() || ct <= Rational::from_integer(0) {
            return Err(LayoutError::FaultyNotIntegral(ct.to_string()));
        }
        Self::new(n, t, ct.to_integer() as usize)
    }

    /// `groups` groups of `t` processors.
    pub fn grouped(groups: usize, t: usize, faulty_per_group: usize) -> Result<Self, LayoutError> {
        Self::new(groups * t, t, faulty_per_group)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn groups(&self) -> usize {
        self.n / self.t
    }

    pub fn faulty_per_group(&self) -> usize {
        self.faulty_per_group
    }

    pub fn good_per_group(&self) -> usize {
        self.t - self.faulty_per_group
    }

    /// Zero-based group of `p`.
    pub fn group_of(&self, p: ProcessorId) -> usize {
        p.slot() / self.t
    }

    /// Position of `p` inside its group.
    pub fn member_index(&self, p: ProcessorId) -> usize {
        p.slot() % self.t
    }

    pub fn members(
        &self,
        group: usize,
    ) -> impl DoubleEndedIterator<Item = ProcessorId> + ExactSizeIterator {
        (group * self.t..(group + 1) * self.t).map(ProcessorId::from_slot)
    }

    pub fn is_faulty(&self, p: ProcessorId) -> bool {
        self.member_index(p) >= self.good_per_group()
    }

    pub fn faulty_mask(&self) -> Vec<bool> {
        ProcessorId::all(self.n)
            .map(|p| self.is_faulty(p))
            .collect()
    }

    /// Per-processor inputs from per-group bits.
    pub fn expand_inputs(&self, per_group: &[u8]) -> Vec<u8> {
        assert_eq!(per_group.len(), self.groups());
        ProcessorId::all(self.n)
            .map(|p| per_group[self.group_of(p)])
            .collect()
    }
}

impl fmt::Debug for GroupLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GroupLayout({} x {}, {} faulty each)",
            self.groups(),
            self.t,
            self.faulty_per_group
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_layout() {
        let l = GroupLayout::with_fraction(25, 5, Rational::new(1, 5)).unwrap();
        assert_eq!(l.groups(), 5);
        assert_eq!(l.faulty_per_group(), 1);
        assert_eq!(l.faulty_mask().iter().filter(|f| **f).count(), 5);
        assert!(l.is_faulty(ProcessorId::new(5)));
        assert!(!l.is_faulty(ProcessorId::new(6)));
        assert_eq!(l.group_of(ProcessorId::new(6)), 1);
        assert_eq!(
            l.members(4).map(|p| p.index()).collect::<Vec<_>>(),
            vec![21, 22, 23, 24, 25]
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            GroupLayout::new(24, 5, 1),
            Err(LayoutError::NotDivisible { .. })
        ));
        assert!(GroupLayout::with_fraction(4, 1, Rational::new(1, 4)).is_err());
    }
}
