use std::sync::Arc;

use asyncba::adversary::{
    attack_run, baseline_run, class_fill_probabilities, fill_faulty_choices,
    in_class_probabilities, FillOutcome, RunSetup,
};
use asyncba::dist::{adjust, ChoiceDistribution, Rational};
use asyncba::fsrp::{
    vote, BenOrStyle, BroadcastKind, PointMassMajority, ProtocolFunction, ValidateKind,
};
use asyncba::lockstep::{chain_generator, ClassParams, GroupLayout, LockstepClass};
use asyncba::sim::ProcessorId;
use asyncba::Payload;

fn setup(pf: Arc<dyn ProtocolFunction>, cap: u32) -> RunSetup {
    let layout = GroupLayout::new(25, 5, 1).unwrap();
    RunSetup {
        params: ClassParams::new(layout, pf, Rational::new(1, 80)),
        broadcast: BroadcastKind::Trivial,
        validate: ValidateKind::PerRound,
        cap,
    }
}

fn class_with_inputs(s: &RunSetup, e: usize, inputs: &[u8]) -> LockstepClass {
    chain_generator(s.params.clone(), e)
        .unwrap()
        .map(Result::unwrap)
        .find(|c| c.inputs == inputs)
        .unwrap()
}

fn first_mixed_class(s: &RunSetup, e: usize) -> LockstepClass {
    chain_generator(s.params.clone(), e)
        .unwrap()
        .map(Result::unwrap)
        .find(|c| c.inputs.contains(&0) && c.inputs.contains(&1))
        .unwrap()
}

fn bit(b: u8) -> Payload {
    vote(b)
}

#[test]
fn fill_completes_the_deficit() {
    // t = 5, D~ = {v0: 2/5, v1: 3/5}; good drew v0 v1 v1 v1
    let d = ChoiceDistribution::uniform([bit(0), bit(1)]).unwrap();
    let adj = adjust(&d, 5, Rational::new(1, 80)).unwrap();
    let good = [bit(0), bit(1), bit(1), bit(1)];
    assert_eq!(fill_faulty_choices(&good, &adj, 1), Some(vec![bit(0)]));
    let too_many = [bit(1), bit(1), bit(1), bit(1)];
    assert_eq!(fill_faulty_choices(&too_many, &adj, 1), None);
}

#[test]
fn point_mass_attack_never_escapes() {
    let s = setup(Arc::new(PointMassMajority), 16);
    let target = first_mixed_class(&s, 4);
    let probs = class_fill_probabilities(&s.params, &target).unwrap();
    assert!(probs.iter().flatten().all(|p| *p == 1.0));
    for seed in 0..3 {
        let (rec, _) = attack_run(&s, &target, seed).unwrap();
        assert_eq!(rec.escape_round, None);
        assert_eq!(rec.in_class_through_round, Some(4));
        for k in 1..=4 {
            for g in 0..5 {
                assert_ne!(rec.fill_outcome(k, g), FillOutcome::Fail);
            }
        }
    }
}

#[test]
fn attack_is_deterministic_per_seed() {
    let s = setup(Arc::new(BenOrStyle { n: 25, t: 5 }), 12);
    let target = class_with_inputs(&s, 4, &[1, 0, 0, 0, 0]);
    let (a, ta) = attack_run(&s, &target, 42).unwrap();
    let (b, tb) = attack_run(&s, &target, 42).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn escape_is_consistent_with_outcomes() {
    let s = setup(Arc::new(BenOrStyle { n: 25, t: 5 }), 12);
    let target = class_with_inputs(&s, 4, &[1, 0, 0, 0, 0]);
    for seed in 0..10 {
        let (rec, _) = attack_run(&s, &target, seed).unwrap();
        match rec.escape_round {
            Some(k) => {
                assert_eq!(rec.in_class_through_round, Some(k - 1));
                let fails = (0..5)
                    .filter(|g| rec.fill_outcome(k, *g) == FillOutcome::Fail)
                    .count();
                assert_eq!(fails, 1);
                for r in k + 1..=4 {
                    assert!((0..5).all(|g| rec.fill_outcome(r, g) == FillOutcome::NotAttempted));
                }
            }
            None => assert_eq!(rec.in_class_through_round, Some(4)),
        }
        for r in 1..rec.escape_round.unwrap_or(5) {
            assert!((0..5).all(|g| rec.fill_outcome(r, g) != FillOutcome::Fail));
        }
    }
}

#[test]
fn in_class_oracle_is_a_decreasing_product() {
    let s = setup(Arc::new(BenOrStyle { n: 25, t: 5 }), 12);
    let target = class_with_inputs(&s, 4, &[1, 0, 0, 0, 0]);
    let per_round = class_fill_probabilities(&s.params, &target).unwrap();
    let cumulative = in_class_probabilities(&per_round);
    assert_eq!(cumulative.len(), 4);
    assert!(cumulative.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(cumulative[0], per_round[0].iter().product::<f64>());
}

#[test]
fn baseline_unanimous_decides_by_round_two() {
    let s = setup(Arc::new(BenOrStyle { n: 25, t: 5 }), 12);
    for b in 0..2u8 {
        for seed in 0..3 {
            let (rec, _) = baseline_run(&s, &[b; 25], seed).unwrap();
            assert!(rec.all_good_decided);
            assert!(rec.rounds_used <= 2);
            let layout = &s.params.layout;
            for (p, d) in &rec.decided {
                if !layout.is_faulty(ProcessorId::new(*p)) {
                    assert_eq!(*d, Some(b));
                }
            }
            assert_eq!(rec.scheduler, "benign-fair");
        }
    }
}

#[test]
fn zero_faulty_unanimous_one() {
    let layout = GroupLayout::new(25, 5, 0);
    // a layout with no faulty members is either rejected or decides 1
    if let Ok(layout) = layout {
        let s = RunSetup {
            params: ClassParams::new(
                layout,
                Arc::new(BenOrStyle { n: 25, t: 5 }),
                Rational::new(1, 80),
            ),
            broadcast: BroadcastKind::Trivial,
            validate: ValidateKind::PerRound,
            cap: 8,
        };
        let (rec, _) = baseline_run(&s, &[1; 25], 0).unwrap();
        assert!(rec.all_good_decided);
        assert!(rec.decided.values().all(|d| *d == Some(1)));
    }
}
