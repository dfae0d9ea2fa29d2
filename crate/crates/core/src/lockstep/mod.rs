//! Lockstep execution classes.
//!
//! Processors are split into groups of `t`. In a class every member of a
//! group has the same input, validates the same messages and feeds the same
//! multiset `S_i^j` to the protocol function in every round `i <= E`. The
//! chain generator walks from the all-zero class to the all-one class
//! changing one group at a time.

mod chain;
mod class;
mod io;
mod layout;
mod policy;
mod replay;
mod verify;
mod zfamily;

pub use chain::{chain_generator, ChainError, ChainGenerator, GeneratorList};
pub use class::{derive_class, lemma_one_eps, ClassParams, LockstepClass};
pub use io::{read_chain, write_chain, ClassRecord};
pub use layout::{GroupLayout, LayoutError};
pub use policy::{CanonicalCoins, LockstepPolicy, ReplayMismatch};
pub use replay::{replay_class, ReplayError, ReplayedClass};
pub use verify::{
    check_counts, differing_groups, find_witness, verify_chain, ChainReport, VerifyError,
    VerifyOptions, WitnessSearch,
};
pub use zfamily::{
    derive_permutations, mask_rounds, rounds_upto, RoundMask, SchedulePermutations, ZError,
    ZFamily, MAX_ROUNDS,
};
