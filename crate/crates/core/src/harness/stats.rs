use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adversary::{in_class_probabilities, FillOutcome, RunRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSummary {
    pub runs: usize,
    /// Capped runs count as the cap.
    pub mean_rounds: f64,
    pub rounds_histogram: BTreeMap<u32, usize>,
    pub undecided_at_cap: usize,
    pub fraction_undecided: f64,
}

/// Empirical fill success at one `(round, group)` against the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FillStat {
    pub round: u32,
    /// 1-based.
    pub group: usize,
    pub attempts: usize,
    pub successes: usize,
    pub empirical: f64,
    pub oracle: f64,
    pub std_error: f64,
}

impl FillStat {
    /// Within `k` standard errors of the oracle. A zero standard error
    /// demands an exact match.
    pub fn within(&self, k: f64) -> bool {
        self.attempts == 0 || (self.empirical - self.oracle).abs() <= k * self.std_error + 1e-12
    }
}

/// Fraction of attack runs still in the class after `round` rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InClassStat {
    pub round: u32,
    pub in_class: usize,
    pub fraction: f64,
    pub oracle: f64,
    pub std_error: f64,
}

impl InClassStat {
    pub fn within(&self, k: f64) -> bool {
        (self.fraction - self.oracle).abs() <= k * self.std_error + 1e-12
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub runs: usize,
    pub rounds_cap: u32,
    pub schedulers: BTreeMap<String, SchedulerSummary>,
    /// Attack runs by first failed round; runs that never escaped are not
    /// counted here but in `never_escaped`.
    pub escape_histogram: BTreeMap<u32, usize>,
    pub never_escaped: usize,
    pub fill: Vec<FillStat>,
    pub in_class: Vec<InClassStat>,
}

fn std_error(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

/// Aggregates raw records. `oracle[k - 1][g]` is the exact fill success
/// probability of round `k`, group `g` along the target class.
pub fn summarize(
    records: &[RunRecord],
    rounds_cap: u32,
    oracle: Option<&[Vec<f64>]>,
) -> SummaryStats {
    let mut schedulers: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        schedulers.entry(r.scheduler.clone()).or_default().push(r);
    }
    let schedulers = schedulers
        .into_iter()
        .map(|(name, rs)| {
            let mut hist = BTreeMap::new();
            for r in &rs {
                *hist.entry(r.rounds_used).or_insert(0) += 1;
            }
            let undecided = rs.iter().filter(|r| !r.all_good_decided).count();
            let total: u64 = rs.iter().map(|r| r.rounds_used as u64).sum();
            let s = SchedulerSummary {
                runs: rs.len(),
                mean_rounds: total as f64 / rs.len() as f64,
                rounds_histogram: hist,
                undecided_at_cap: undecided,
                fraction_undecided: undecided as f64 / rs.len() as f64,
            };
            (name, s)
        })
        .collect();
    let attacks: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.in_class_through_round.is_some())
        .collect();
    let mut escape_histogram = BTreeMap::new();
    let mut never_escaped = 0;
    for r in &attacks {
        match r.escape_round {
            Some(k) => *escape_histogram.entry(k).or_insert(0) += 1,
            None => never_escaped += 1,
        }
    }
    let mut fill = Vec::new();
    let mut in_class = Vec::new();
    if let Some(oracle) = oracle {
        for (ki, row) in oracle.iter().enumerate() {
            let k = ki as u32 + 1;
            for (g, p) in row.iter().enumerate() {
                let mut attempts = 0;
                let mut successes = 0;
                for r in &attacks {
                    match r.fill_outcome(k, g) {
                        FillOutcome::Success => {
                            attempts += 1;
                            successes += 1;
                        }
                        FillOutcome::Fail => attempts += 1,
                        FillOutcome::NotAttempted => {}
                    }
                }
                fill.push(FillStat {
                    round: k,
                    group: g + 1,
                    attempts,
                    successes,
                    empirical: if attempts == 0 {
                        0.0
                    } else {
                        successes as f64 / attempts as f64
                    },
                    oracle: *p,
                    std_error: std_error(*p, attempts),
                });
            }
        }
        if !attacks.is_empty() {
            for (ki, p) in in_class_probabilities(oracle).into_iter().enumerate() {
                let k = ki as u32 + 1;
                let count = attacks
                    .iter()
                    .filter(|r| r.in_class_through_round.is_some_and(|x| x >= k))
                    .count();
                in_class.push(InClassStat {
                    round: k,
                    in_class: count,
                    fraction: count as f64 / attacks.len() as f64,
                    oracle: p,
                    std_error: std_error(p, attacks.len()),
                });
            }
        }
    }
    SummaryStats {
        runs: records.len(),
        rounds_cap,
        schedulers,
        escape_histogram,
        never_escaped,
        fill,
        in_class,
    }
}
