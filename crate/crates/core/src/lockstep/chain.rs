use super::class::{derive_class, ClassParams, LockstepClass};
use super::zfamily::{ZError, ZFamily};
use crate::dist::DistError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChainError {
    #[error("horizon E = {0} is too small; need E >= 1")]
    HorizonTooSmall(usize),
    #[error(transparent)]
    Z(#[from] ZError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Pending `(group, round)` goals of the generator, zero-based groups.
pub type GeneratorList = Vec<(usize, usize)>;

/// Streams the chain `C_0, C_1, …, C_L` from all-zero to all-one inputs.
///
/// The recursion runs on an explicit list. With last pair `(g, r)` it looks
/// for the smallest `i >= r` (then smallest `j != g`) such that `z_i^j`
/// contains group `g`. If there is one, `(j, i + 1)` is pushed. Otherwise
/// the pair is popped after rewriting `z_{r-1}^g` to exclude the previous
/// group, or, for a lone pair, group `g` flips its input to 1. Every change
/// emits a class.
pub struct ChainGenerator {
    params: ClassParams,
    inputs: Vec<u8>,
    excluded: Vec<Vec<usize>>,
    list: GeneratorList,
    emitted_first: bool,
    done: bool,
    emitted: usize,
}

pub fn chain_generator(params: ClassParams, horizon: usize) -> Result<ChainGenerator, ChainError> {
    if horizon < 1 {
        return Err(ChainError::HorizonTooSmall(horizon));
    }
    let g = params.layout.groups();
    let canonical = ZFamily::canonical(g, horizon)?;
    Ok(ChainGenerator {
        params,
        inputs: vec![0; g],
        excluded: canonical.excluded_table().to_vec(),
        list: vec![(0, 1)],
        emitted_first: false,
        done: false,
        emitted: 0,
    })
}

impl ChainGenerator {
    pub fn params(&self) -> &ClassParams {
        &self.params
    }

    pub fn list(&self) -> &GeneratorList {
        &self.list
    }

    fn horizon(&self) -> usize {
        self.excluded.len()
    }

    /// Smallest `(i, j)` with `i >= from`, `j != g` and `g ∈ z_i^j`.
    fn first_hearing(&self, g: usize, from: usize) -> Option<(usize, usize)> {
        (from..=self.horizon()).find_map(|i| {
            (0..self.excluded[i - 1].len())
                .find(|j| *j != g && self.excluded[i - 1][*j] != g)
                .map(|j| (i, j))
        })
    }

    fn assert_list(&self) {
        let e = self.horizon();
        assert_eq!(self.list[0].1, 1, "list must start at round 1");
        for w in self.list.windows(2) {
            let ((g0, r0), (_, r1)) = (w[0], w[1]);
            assert!(r1 > r0, "list rounds not increasing: {:?}", self.list);
            assert!(r1 <= e + 1, "list round {r1} exceeds E + 1");
            assert_eq!(
                self.first_hearing(g0, r0).map(|(i, _)| i + 1),
                Some(r1),
                "list/z relationship broken at {:?}",
                w
            );
        }
    }

    fn emit(&mut self) -> Result<LockstepClass, ChainError> {
        let z = ZFamily::derive(self.params.layout.groups(), self.excluded.clone())?;
        self.emitted += 1;
        Ok(derive_class(&self.params, &self.inputs, z)?)
    }

    fn advance(&mut self) -> Result<Option<LockstepClass>, ChainError> {
        if !self.emitted_first {
            self.emitted_first = true;
            return self.emit().map(Some);
        }
        if self.done {
            return Ok(None);
        }
        loop {
            self.assert_list();
            let &(g, r) = self.list.last().expect("list is never empty");
            if let Some((i, j)) = self.first_hearing(g, r) {
                self.list.push((j, i + 1));
                continue;
            }
            if self.list.len() >= 2 {
                let prev = self.list[self.list.len() - 2].0;
                self.excluded[r - 2][g] = prev;
                self.list.pop();
            } else {
                self.inputs[g] = 1;
                if g + 1 == self.params.layout.groups() {
                    self.done = true;
                } else {
                    self.list = vec![(g + 1, 1)];
                }
            }
            return self.emit().map(Some);
        }
    }
}

impl Iterator for ChainGenerator {
    type Item = Result<LockstepClass, ChainError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.advance().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsrp::PointMassMajority;
    use crate::lockstep::{lemma_one_eps, GroupLayout};
    use std::sync::Arc;

    fn params(groups: usize) -> ClassParams {
        ClassParams::new(
            GroupLayout::grouped(groups, 5, 1).unwrap(),
            Arc::new(PointMassMajority),
            lemma_one_eps(5, 1),
        )
    }

    #[test]
    fn single_group_chain_has_two_classes() {
        let chain: Vec<_> = chain_generator(params(1), 4)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain[0].inputs, vec![0]);
        assert_eq!(chain[1].inputs, vec![1]);
    }

    #[test]
    fn three_groups_terminate_at_all_ones() {
        let chain: Vec<_> = chain_generator(params(3), 4)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(chain.first().unwrap().inputs, vec![0, 0, 0]);
        assert_eq!(chain.last().unwrap().inputs, vec![1, 1, 1]);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        assert!(matches!(
            chain_generator(params(2), 0),
            Err(ChainError::HorizonTooSmall(0))
        ));
    }
}
