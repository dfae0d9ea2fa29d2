use crate::dist::{AdjustedDistribution, ChoiceDistribution, DistError};
use crate::fsrp::for_each_count_vector;
use crate::lockstep::{ClassParams, LockstepClass};
use crate::payload::Payload;

/// Payloads for the `ct` faulty members of a group so that the group's
/// choices hit `rho~_s * t` exactly, or `None` when some payload was drawn
/// more often than that by the good members.
///
/// # Panics
///
/// If `good.len() + ct` differs from `t`.
pub fn fill_faulty_choices(
    good: &[Payload],
    adjusted: &AdjustedDistribution,
    ct: usize,
) -> Option<Vec<Payload>> {
    assert_eq!(
        good.len() + ct,
        adjusted.t() as usize,
        "group size mismatch"
    );
    let mut deficit: Vec<i64> = adjusted.counts().iter().map(|c| *c as i64).collect();
    for p in good {
        let i = adjusted.support().binary_search(p).ok()?;
        deficit[i] -= 1;
    }
    if deficit.iter().any(|d| *d < 0) {
        return None;
    }
    let fill: Vec<Payload> = adjusted
        .support()
        .iter()
        .zip(&deficit)
        .flat_map(|(p, d)| std::iter::repeat_n(p.clone(), *d as usize))
        .collect();
    debug_assert_eq!(fill.len(), ct);
    Some(fill)
}

/// Probability that `good` independent draws from `d` leave every deficit
/// of `adjusted` non-negative. Sums the multinomial over all admissible
/// count vectors.
pub fn fill_success_probability(
    d: &ChoiceDistribution,
    adjusted: &AdjustedDistribution,
    good: usize,
) -> f64 {
    let probs: Vec<f64> = adjusted.support().iter().map(|s| d.mass(s)).collect();
    let caps: Vec<u32> = adjusted.counts().iter().map(|c| *c as u32).collect();
    let mut total = 0.0;
    for_each_count_vector(&caps, good as u32, &mut |c| {
        let mut term = ln_factorial(good);
        for (k, p) in c.iter().zip(&probs) {
            if *k > 0 {
                term += *k as f64 * p.ln() - ln_factorial(*k as usize);
            }
        }
        total += term.exp();
        false
    });
    total
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Per-`(round, group)` fill success probability along `target`, indexed
/// `[round - 1][group]`. The distribution of round `k` is the one a member
/// of the group sees when the execution is still in the class.
pub fn class_fill_probabilities(
    params: &ClassParams,
    target: &LockstepClass,
) -> Result<Vec<Vec<f64>>, DistError> {
    let pf = params.pf.as_ref();
    let good = params.layout.good_per_group();
    (1..=target.horizon())
        .map(|k| {
            (0..target.groups())
                .map(|g| {
                    let d = if k == 1 {
                        pf.initial(target.inputs[g])
                    } else {
                        pf.next(k as u32 - 1, target.s_set(k - 1, g))
                    };
                    let adj = params.adjusted(&d)?;
                    Ok(fill_success_probability(&d, &adj, good))
                })
                .collect()
        })
        .collect()
}

/// Probability of staying in the class through each round: entry `r - 1`
/// is the product of all per-group probabilities of rounds `1..=r`.
pub fn in_class_probabilities(per_round: &[Vec<f64>]) -> Vec<f64> {
    per_round
        .iter()
        .scan(1.0, |acc, row| {
            *acc *= row.iter().product::<f64>();
            Some(*acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{adjust, Rational};

    fn m(b: u8) -> Payload {
        Payload::new(vec![b]).unwrap()
    }

    fn d73() -> (ChoiceDistribution, AdjustedDistribution) {
        let d = ChoiceDistribution::new([(m(0), 0.7), (m(1), 0.3)]).unwrap();
        let adj = adjust(&d, 10, Rational::new(1, 100)).unwrap();
        (d, adj)
    }

    #[test]
    fn deficit_fill() {
        let (_, adj) = d73();
        let mut good = vec![m(0); 6];
        good.extend([m(1), m(1)]);
        assert_eq!(fill_faulty_choices(&good, &adj, 2), Some(vec![m(0), m(1)]));
        assert_eq!(fill_faulty_choices(&vec![m(0); 8], &adj, 2), None);
    }

    #[test]
    fn point_mass_never_fails() {
        let d = ChoiceDistribution::point(m(7));
        let adj = adjust(&d, 5, Rational::new(1, 100)).unwrap();
        assert_eq!(fill_faulty_choices(&vec![m(7); 4], &adj, 1), Some(vec![m(7)]));
        assert_eq!(fill_success_probability(&d, &adj, 4), 1.0);
    }

    #[test]
    fn fair_coin_four_good() {
        let d = ChoiceDistribution::new([(m(0), 0.5), (m(1), 0.5)]).unwrap();
        let adj = adjust(&d, 5, Rational::new(1, 80)).unwrap();
        // zeros in {1, 2}: (4 + 6) / 16
        assert!((fill_success_probability(&d, &adj, 4) - 10.0 / 16.0).abs() < 1e-12);
    }
}
