//! Fully symmetric round protocols.
//!
//! A processor broadcasts its round-`k` value, waits until it has validated
//! `n - t` round-`k` messages, and feeds their multiset (together with every
//! validated message of earlier rounds) to the protocol function `N` to get
//! the distribution of its next value. Sender identities never reach `N`.

mod broadcast;
mod completeness;
mod processor;
mod protocol;
mod validate;

pub use broadcast::{
    accept_keys, broadcast_schedule, echo_quorum, initiate, phase_one_keys, BroadcastKind,
    BroadcastOnly, BroadcastPlan, BroadcastState,
};
pub use completeness::{good_message_completeness_check, CompletenessReport, HonestHistory};
pub use processor::{
    audit_round_entry, processors, FsrpError, Processor, ProcessorParams, RoundEntry,
};
pub use protocol::{
    vote, vote_bit, BenOrStyle, MessageMultiset, PointMassMajority, ProtocolFunction,
    ProtocolRegistry, VOTE_TAG,
};
pub use validate::{
    for_each_count_vector, AcceptedSet, Chained, MarkedSet, PerRound, ValidateError, ValidateKind,
    ValidatePolicy, ValidationContext, CHAINED_BUDGET,
};
