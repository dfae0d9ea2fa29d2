use std::sync::Arc;

use asyncba::fsrp::{
    processors, BenOrStyle, BroadcastKind, Processor, ProcessorParams, ValidateKind,
};
use asyncba::sim::{
    read_ndjson, run_schedule, run_until, BenignFair, Configuration, RunOutcome, Schedule,
    StopCondition,
};

fn benign(inputs: &[u8], t: usize, kind: BroadcastKind, seed: u64) -> RunOutcome<Processor> {
    let n = inputs.len();
    let params = ProcessorParams::new(
        n,
        t,
        Arc::new(BenOrStyle { n, t }),
        kind,
        ValidateKind::PerRound,
        12,
    );
    let config = Configuration::new(processors(&params, inputs), vec![false; n]);
    let mut policy = BenignFair::new(n, seed);
    run_until(
        config,
        &mut policy,
        &[
            StopCondition::AllGoodDecided,
            StopCondition::RoundCap(12),
            StopCondition::EventCap(2_000_000),
        ],
    )
    .unwrap()
}

fn initial(inputs: &[u8], t: usize, kind: BroadcastKind) -> Configuration<Processor> {
    let n = inputs.len();
    let params = ProcessorParams::new(
        n,
        t,
        Arc::new(BenOrStyle { n, t }),
        kind,
        ValidateKind::PerRound,
        12,
    );
    Configuration::new(processors(&params, inputs), vec![false; n])
}

#[test]
fn same_seed_same_execution() {
    let inputs = [0, 1, 1, 0, 1, 0, 1];
    for kind in [BroadcastKind::Trivial, BroadcastKind::Bracha] {
        let a = benign(&inputs, 2, kind, 17);
        let b = benign(&inputs, 2, kind, 17);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.config.digest(), b.config.digest());
    }
}

#[test]
fn different_seeds_differ() {
    let inputs = [0, 1, 1, 0, 1, 0, 1];
    let a = benign(&inputs, 2, BroadcastKind::Trivial, 1);
    let b = benign(&inputs, 2, BroadcastKind::Trivial, 2);
    assert_ne!(a.trace, b.trace);
}

#[test]
fn trace_replays_to_same_configuration() {
    let inputs = [1, 0, 1, 1, 0, 0, 1];
    let out = benign(&inputs, 2, BroadcastKind::Trivial, 5);
    let schedule = Schedule::new(out.trace.events().to_vec());
    let (replayed, trace) =
        run_schedule(&initial(&inputs, 2, BroadcastKind::Trivial), &schedule).unwrap();
    assert_eq!(replayed.digest(), out.config.digest());
    assert_eq!(trace, out.trace);
}

#[test]
fn ndjson_round_trip() {
    let out = benign(&[0, 1, 0, 1], 1, BroadcastKind::Bracha, 3);
    let text = out.trace.to_ndjson();
    assert_eq!(text.lines().count(), out.trace.len());
    let back = read_ndjson(text.as_bytes()).unwrap();
    assert_eq!(back, out.trace.records().collect::<Vec<_>>());
    for (i, r) in back.iter().enumerate() {
        assert_eq!(r.step_index, i as u64);
    }
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in [
        "step_index",
        "processor",
        "delivered_message_id",
        "randomness_outcome",
    ] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn tampered_randomness_is_rejected() {
    let inputs = [0, 1, 1, 0, 1, 0, 1];
    let out = benign(&inputs, 2, BroadcastKind::Trivial, 9);
    let mut events = out.trace.into_events();
    let Some(e) = events.iter_mut().find(|e| e.local_randomness.is_some()) else {
        return;
    };
    e.local_randomness.as_mut().unwrap().push(0);
    assert!(run_schedule(
        &initial(&inputs, 2, BroadcastKind::Trivial),
        &Schedule::new(events)
    )
    .is_err());
}
