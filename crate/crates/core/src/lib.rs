//! Simulator and attack framework for asynchronous Byzantine agreement
//! under a full-information adversary.
//!
//! * [`sim`]: configurations, events, schedules and scheduler policies.
//! * [`dist`]: choice distributions, the adjusted distribution and its
//!   tail bound.
//! * [`fsrp`]: fully symmetric round protocols, broadcast and validation.
//! * [`lockstep`]: lockstep execution classes and the chain between the
//!   all-zero and all-one inputs.
//! * [`adversary`]: steering live executions into a target class.
//! * [`harness`]: experiment configuration, orchestration and records.

pub mod adversary;
pub mod dist;
pub mod fsrp;
pub mod harness;
pub mod lockstep;
pub mod payload;
pub mod sim;

pub use payload::Payload;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/executions.md")]
    mod executions {}
    #[doc = include_str!("../../../book/src/adjusted.md")]
    mod adjusted {}
    #[doc = include_str!("../../../book/src/protocols.md")]
    mod protocols {}
    #[doc = include_str!("../../../book/src/lockstep.md")]
    mod lockstep {}
    #[doc = include_str!("../../../book/src/adversary.md")]
    mod adversary {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
