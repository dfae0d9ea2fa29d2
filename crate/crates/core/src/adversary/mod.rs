//! Steering live executions into a lockstep class.
//!
//! The adversary schedules deliveries along the class's permutations and
//! picks the coins of the faulty members of each group so that the group's
//! round-`k` choices are exactly the `D~` counts. A round in which good
//! members overshoot some count cannot be repaired; the run has escaped.

mod fill;
mod run;

pub use fill::{
    class_fill_probabilities, fill_faulty_choices, fill_success_probability, in_class_probabilities,
};
pub use run::{attack_run, baseline_run, AttackError, FillOutcome, RunRecord, RunSetup};
