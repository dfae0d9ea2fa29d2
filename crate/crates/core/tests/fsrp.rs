use std::sync::Arc;

use asyncba::fsrp::{
    audit_round_entry, processors, BenOrStyle, BroadcastKind, PointMassMajority, Processor,
    ProcessorParams, ProtocolFunction, ValidateKind,
};
use asyncba::sim::{run_until, BenignFair, Configuration, StopCondition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(
    pf: Arc<dyn ProtocolFunction>,
    inputs: &[u8],
    t: usize,
    kind: BroadcastKind,
    validate: ValidateKind,
    seed: u64,
) -> Configuration<Processor> {
    let n = inputs.len();
    let params = ProcessorParams::new(n, t, pf, kind, validate, 24);
    let config = Configuration::new(processors(&params, inputs), vec![false; n]);
    let mut policy = BenignFair::new(n, seed);
    run_until(
        config,
        &mut policy,
        &[
            StopCondition::AllGoodDecided,
            StopCondition::RoundCap(24),
            StopCondition::EventCap(5_000_000),
        ],
    )
    .unwrap()
    .config
}

fn decisions(c: &Configuration<Processor>) -> Vec<Option<u8>> {
    c.processes()
        .iter()
        .map(|p| p.decided().map(|d| d.0))
        .collect()
}

#[test]
fn unanimous_inputs_decide_that_bit() {
    for kind in [BroadcastKind::Trivial, BroadcastKind::Bracha] {
        for validate in [ValidateKind::PerRound, ValidateKind::Chained] {
            for b in 0..2u8 {
                let c = run(
                    Arc::new(BenOrStyle { n: 7, t: 2 }),
                    &[b; 7],
                    2,
                    kind,
                    validate,
                    4,
                );
                assert!(
                    decisions(&c).iter().all(|d| *d == Some(b)),
                    "{kind:?} {validate:?} {b}"
                );
                for p in c.processes() {
                    assert!(p.decided().unwrap().1 <= 2);
                }
            }
        }
    }
}

#[test]
fn decided_processors_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..30 {
        let inputs: Vec<u8> = (0..7).map(|_| rng.random_range(0..2)).collect();
        let c = run(
            Arc::new(BenOrStyle { n: 7, t: 1 }),
            &inputs,
            1,
            BroadcastKind::Trivial,
            ValidateKind::PerRound,
            seed,
        );
        let bits: Vec<u8> = decisions(&c).into_iter().flatten().collect();
        assert!(
            bits.windows(2).all(|w| w[0] == w[1]),
            "seed {seed}: {bits:?}"
        );
    }
}

#[test]
fn point_mass_protocol_terminates() {
    let c = run(
        Arc::new(PointMassMajority),
        &[0, 1, 1, 0, 1],
        1,
        BroadcastKind::Bracha,
        ValidateKind::PerRound,
        2,
    );
    assert!(c.all_good_decided());
}

#[test]
fn round_entry_audit_holds() {
    for kind in [BroadcastKind::Trivial, BroadcastKind::Bracha] {
        for seed in 0..5 {
            let c = run(
                Arc::new(BenOrStyle { n: 10, t: 2 }),
                &[0, 1, 0, 1, 1, 0, 0, 1, 1, 0],
                2,
                kind,
                ValidateKind::PerRound,
                seed,
            );
            for p in c.processes() {
                audit_round_entry(p).unwrap();
                assert!(!p.audit().is_empty());
            }
        }
    }
}

#[test]
fn validated_messages_were_accepted() {
    let c = run(
        Arc::new(BenOrStyle { n: 7, t: 2 }),
        &[0, 1, 0, 1, 1, 0, 1],
        2,
        BroadcastKind::Bracha,
        ValidateKind::Chained,
        6,
    );
    for p in c.processes() {
        for key in p.validated() {
            assert!(p.accepted().contains_key(key));
        }
    }
}
