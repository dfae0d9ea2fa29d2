//! Choice distributions over at most `R` payloads and their adjustment to
//! integral expected counts.
//!
//! Given a distribution `D` on a support `S` with `|S| <= R`, the adjusted
//! distribution `D~` moves every non-heavy element up to the least positive
//! multiple of `1/t` that is at least `max(rho_s, eps)`, and gives the heavy
//! element `s*` whatever mass is left. With `t > R^2` and
//! `0 < eps < 1/R^2 - 1/t` the result is a distribution whose masses times `t`
//! are positive integers. That is what lets a group of `t` processors realise
//! the distribution's expectation exactly.

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::payload::Payload;

/// Exact rational used for adjusted masses and parameters.
pub type Rational = Ratio<i128>;

/// Denominator used when converting floating masses to exact rationals.
pub const FLOAT_DENOMINATOR: i128 = 1_000_000_000;

/// Tolerance on the total mass of a floating distribution.
pub const MASS_TOLERANCE: f64 = 1e-12;

const TAIL_CHUNK: u64 = 8192;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistError {
    #[error("empty support")]
    EmptySupport,
    #[error("duplicate payload {0} in support")]
    DuplicatePayload(Payload),
    #[error("mass {mass} for {payload} is not in [0, 1]")]
    MassOutOfRange { payload: Payload, mass: f64 },
    #[error("masses sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("support size {size} exceeds the bound R = {bound}")]
    SupportTooLarge { size: usize, bound: usize },
    #[error("precondition violated (t = {t}, R = {r}, eps = {eps}): {violated}")]
    PreconditionViolated {
        t: u64,
        r: usize,
        eps: String,
        violated: &'static str,
    },
    #[error("cannot parse rational {0:?}")]
    BadRational(String),
}

/// Probability mass over an ordered support of distinct payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDistribution {
    entries: Vec<(Payload, f64)>,
}

impl ChoiceDistribution {
    /// Builds a distribution, requiring masses in `[0, 1]` that sum to 1
    /// within [`MASS_TOLERANCE`]. Entries are sorted into canonical order.
    pub fn new(entries: impl IntoIterator<Item = (Payload, f64)>) -> Result<Self, DistError> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        if entries.is_empty() {
            return Err(DistError::EmptySupport);
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DistError::DuplicatePayload(w[0].0.clone()));
            }
        }
        for (p, m) in &entries {
            if !(0.0..=1.0).contains(m) {
                return Err(DistError::MassOutOfRange {
                    payload: p.clone(),
                    mass: *m,
                });
            }
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(DistError::NotNormalized(total));
        }
        Ok(ChoiceDistribution { entries })
    }

    /// Like [`ChoiceDistribution::new`] but rescales nonnegative weights to sum
    /// to one first.
    pub fn normalized(
        entries: impl IntoIterator<Item = (Payload, f64)>,
    ) -> Result<Self, DistError> {
        let entries: Vec<_> = entries.into_iter().collect();
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if !(total.is_finite() && total > 0.0) || entries.iter().any(|e| !(e.1 >= 0.0)) {
            return Err(DistError::NotNormalized(total));
        }
        Self::new(entries.into_iter().map(|(p, w)| (p, w / total)))
    }

    pub fn point(payload: Payload) -> Self {
        ChoiceDistribution {
            entries: vec![(payload, 1.0)],
        }
    }

    /// Uniform distribution over distinct payloads.
    pub fn uniform(payloads: impl IntoIterator<Item = Payload>) -> Result<Self, DistError> {
        let payloads: Vec<_> = payloads.into_iter().collect();
        let w = 1.0 / payloads.len().max(1) as f64;
        Self::new(payloads.into_iter().map(|p| (p, w)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Payload, f64)] {
        &self.entries
    }

    pub fn payloads(&self) -> impl Iterator<Item = &Payload> {
        self.entries.iter().map(|e| &e.0)
    }

    /// Payloads with nonzero mass, i.e. the outcomes that can actually occur.
    pub fn positive_support(&self) -> impl Iterator<Item = &Payload> {
        self.entries.iter().filter(|e| e.1 > 0.0).map(|e| &e.0)
    }

    /// The same distribution with zero-mass entries dropped.
    pub fn positive_part(&self) -> ChoiceDistribution {
        ChoiceDistribution {
            entries: self.entries.iter().filter(|e| e.1 > 0.0).cloned().collect(),
        }
    }

    pub fn mass(&self, payload: &Payload) -> f64 {
        self.index_of(payload).map_or(0.0, |i| self.entries[i].1)
    }

    pub fn index_of(&self, payload: &Payload) -> Option<usize> {
        self.entries.binary_search_by(|e| e.0.cmp(payload)).ok()
    }

    pub fn is_point_mass(&self) -> bool {
        self.positive_support().count() == 1
    }

    /// Inverse-CDF sampling from a uniform draw in `[0, 1)`. Zero-mass entries
    /// are never returned.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, (_, m)) in self.entries.iter().enumerate() {
            if *m <= 0.0 {
                continue;
            }
            acc += m;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    /// The heavy element `s*`: maximal mass, ties broken towards the smaller
    /// payload. Its mass is at least `1/|S|`.
    pub fn choose_star(&self) -> &Payload {
        &self.entries[self.star_index()].0
    }

    fn star_index(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate().skip(1) {
            // entries are in canonical order, so strict > keeps the smaller payload on ties
            if e.1 > self.entries[best].1 {
                best = i;
            }
        }
        best
    }

    /// Exact masses on the `1/FLOAT_DENOMINATOR` grid. Every element except
    /// `s*` is rounded to the nearest grid point and `s*` absorbs the
    /// remainder, so the result sums to exactly one.
    pub fn exact_masses(&self) -> Vec<Rational> {
        let star = self.star_index();
        let mut nums: Vec<i128> = self
            .entries
            .iter()
            .map(|(_, m)| (m * FLOAT_DENOMINATOR as f64).round() as i128)
            .collect();
        let others: i128 = nums
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != star)
            .map(|(_, v)| *v)
            .sum();
        nums[star] = FLOAT_DENOMINATOR - others;
        nums.into_iter()
            .map(|v| Rational::new(v, FLOAT_DENOMINATOR))
            .collect()
    }
}

/// The adjusted distribution `D~`: masses are exact multiples of `1/t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjustedDistribution {
    support: Vec<Payload>,
    counts: Vec<u64>,
    source: Vec<Rational>,
    star: usize,
    t: u64,
    r: usize,
    eps: Rational,
}

impl AdjustedDistribution {
    pub fn support(&self) -> &[Payload] {
        &self.support
    }

    /// `rho~_s * t` for each support element, in canonical order.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count_of(&self, payload: &Payload) -> Option<u64> {
        self.support
            .binary_search(payload)
            .ok()
            .map(|i| self.counts[i])
    }

    pub fn mass(&self, index: usize) -> Rational {
        Rational::new(self.counts[index] as i128, self.t as i128)
    }

    pub fn masses(&self) -> Vec<Rational> {
        (0..self.counts.len()).map(|i| self.mass(i)).collect()
    }

    /// Exact input masses the adjustment was computed from.
    pub fn source_masses(&self) -> &[Rational] {
        &self.source
    }

    pub fn star(&self) -> &Payload {
        &self.support[self.star]
    }

    pub fn star_index(&self) -> usize {
        self.star
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn eps(&self) -> Rational {
        self.eps
    }

    /// The `t` payloads realising the expectation exactly, in canonical order.
    pub fn expected_multiset(&self) -> Vec<Payload> {
        self.support
            .iter()
            .zip(&self.counts)
            .flat_map(|(p, &c)| std::iter::repeat_n(p.clone(), c as usize))
            .collect()
    }
}

/// Adjusts `d` with `R` taken as the support size.
pub fn adjust(
    d: &ChoiceDistribution,
    t: u64,
    eps: Rational,
) -> Result<AdjustedDistribution, DistError> {
    adjust_bounded(d, t, eps, d.len())
}

/// Adjusts `d` under a global bound `r >= |S|` on the support size.
pub fn adjust_bounded(
    d: &ChoiceDistribution,
    t: u64,
    eps: Rational,
    r: usize,
) -> Result<AdjustedDistribution, DistError> {
    if d.len() > r {
        return Err(DistError::SupportTooLarge {
            size: d.len(),
            bound: r,
        });
    }
    let violated = |what| DistError::PreconditionViolated {
        t,
        r,
        eps: eps.to_string(),
        violated: what,
    };
    let r2 = (r * r) as u64;
    if t <= r2 {
        return Err(violated("t > R^2"));
    }
    if !eps.is_positive() {
        return Err(violated("eps > 0"));
    }
    let ti = t as i128;
    let window = Rational::new(1, r2 as i128) - Rational::new(1, ti);
    if eps >= window {
        return Err(violated("eps < 1/R^2 - 1/t"));
    }

    let source = d.exact_masses();
    let star = d.star_index();
    let mut counts = vec![0u64; source.len()];
    let mut rest = ti;
    for (i, rho) in source.iter().enumerate() {
        if i == star {
            continue;
        }
        let floor = if *rho > eps { *rho } else { eps };
        let c = (floor * Rational::from_integer(ti)).ceil().to_integer();
        counts[i] = c as u64;
        rest -= c;
    }
    // positive by Lemma-1 arithmetic whenever the preconditions hold
    debug_assert!(rest > 0);
    counts[star] = rest as u64;

    Ok(AdjustedDistribution {
        support: d.payloads().cloned().collect(),
        counts,
        source,
        star,
        t,
        r,
        eps,
    })
}

/// `c / (4 R^2)`, the default `eps`.
pub fn default_eps(c: Rational, r: usize) -> Rational {
    c / Rational::from_integer(4 * (r * r) as i128)
}

/// Parses `"a/b"`, an integer, or a decimal such as `"0.0125"`.
pub fn parse_rational(s: &str) -> Result<Rational, DistError> {
    let bad = || DistError::BadRational(s.to_string());
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: i128 = a.trim().parse().map_err(|_| bad())?;
        let b: i128 = b.trim().parse().map_err(|_| bad())?;
        if b == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(a, b));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 30 {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let num: i128 = digits.parse().map_err(|_| bad())?;
    let den = 10i128.pow(frac.len() as u32);
    let r = Rational::new(num, den);
    Ok(if neg { -r } else { r })
}

pub fn to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Parameters of the Chernoff tail bound for one group of `t = c n`
/// processors of which `(1 - c) t` sample honestly.
#[derive(Debug, Clone, PartialEq)]
pub struct TailBoundParams {
    pub n: u64,
    pub t: u64,
    pub r: usize,
    pub eps: Rational,
}

impl TailBoundParams {
    /// Validates `0 < c < 1/3`, `t > (2/c) R^2` and `eps < c/(2R^2) - 1/t`.
    pub fn new(n: u64, t: u64, r: usize, eps: Rational) -> Result<Self, DistError> {
        let p = TailBoundParams { n, t, r, eps };
        let violated = |what| DistError::PreconditionViolated {
            t,
            r,
            eps: eps.to_string(),
            violated: what,
        };
        if n == 0 || t == 0 || r == 0 {
            return Err(violated("n, t, R positive"));
        }
        let c = p.c();
        if c >= Rational::new(1, 3) {
            return Err(violated("0 < c < 1/3"));
        }
        let r2 = Rational::from_integer((r * r) as i128);
        if Rational::from_integer(t as i128) <= Rational::from_integer(2) / c * r2 {
            return Err(violated("t > (2/c) R^2"));
        }
        if !eps.is_positive() {
            return Err(violated("eps > 0"));
        }
        if eps >= c / (Rational::from_integer(2) * r2) - Rational::new(1, t as i128) {
            return Err(violated("eps < c/(2R^2) - 1/t"));
        }
        Ok(p)
    }

    pub fn c(&self) -> Rational {
        Rational::new(self.t as i128, self.n as i128)
    }

    /// `min(eps, 1/(4R))`.
    pub fn delta(&self) -> Rational {
        let q = Rational::new(1, 4 * self.r as i128);
        if self.eps < q {
            self.eps
        } else {
            q
        }
    }

    /// `delta c^3 / (3 (1 - c))`.
    pub fn delta_prime(&self) -> f64 {
        let c = self.c();
        let v = self.delta() * c * c * c / (Rational::from_integer(3) * (Rational::one() - c));
        to_f64(v)
    }

    /// Per-round failure probability of the adversary by the union bound over
    /// `R` outcomes and `1/c` groups: `(R/c) e^{-delta' n}`.
    pub fn round_failure_bound(&self) -> f64 {
        self.r as f64 / to_f64(self.c()) * tail_bound(self)
    }

    /// The horizon `E = (c / 2R) e^{delta' n}` at which the adversary keeps a
    /// run undecided with probability at least one half.
    pub fn horizon(&self) -> f64 {
        to_f64(self.c()) / (2.0 * self.r as f64) * (self.delta_prime() * self.n as f64).exp()
    }
}

/// `e^{-delta' n}`.
pub fn tail_bound(params: &TailBoundParams) -> f64 {
    (-params.delta_prime() * params.n as f64).exp()
}

/// Monte Carlo estimate, per support element `s`, of the probability that
/// `(1 - c) t` independent Bernoulli(`rho_s`) draws sum to at least
/// `rho~_s t`.
///
/// Trials are split into fixed-size chunks, each with its own ChaCha stream
/// derived from `seed`, so the result does not depend on thread count.
pub fn empirical_tail(
    d: &ChoiceDistribution,
    adjusted: &AdjustedDistribution,
    c: Rational,
    trials: u64,
    seed: u64,
) -> Result<Vec<(Payload, f64)>, DistError> {
    let good = good_count(adjusted.t(), c).ok_or(DistError::PreconditionViolated {
        t: adjusted.t(),
        r: adjusted.r(),
        eps: adjusted.eps().to_string(),
        violated: "(1 - c) t integer",
    })?;
    let chunks = trials.div_ceil(TAIL_CHUNK);
    let mut out = Vec::with_capacity(adjusted.support().len());
    for (idx, payload) in adjusted.support().iter().enumerate() {
        let rho = d.mass(payload);
        let threshold = adjusted.counts()[idx];
        let hits: u64 = if rho <= 0.0 || trials == 0 {
            0
        } else {
            let binom = Binomial::new(good, rho.min(1.0)).expect("valid binomial");
            (0..chunks)
                .into_par_iter()
                .map(|chunk| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((idx as u64) << 40) | chunk);
                    let len = TAIL_CHUNK.min(trials - chunk * TAIL_CHUNK);
                    (0..len)
                        .filter(|_| binom.sample(&mut rng) >= threshold)
                        .count() as u64
                })
                .sum()
        };
        let freq = if trials == 0 {
            0.0
        } else {
            hits as f64 / trials as f64
        };
        out.push((payload.clone(), freq));
    }
    Ok(out)
}

/// `(1 - c) t` when it is a nonnegative integer.
pub fn good_count(t: u64, c: Rational) -> Option<u64> {
    let g = (Rational::one() - c) * Rational::from_integer(t as i128);
    (g.is_integer() && !g.is_negative()).then(|| g.to_integer() as u64)
}
