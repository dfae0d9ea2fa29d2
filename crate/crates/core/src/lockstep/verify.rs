use serde::Serialize;

use super::chain::{chain_generator, ChainError};
use super::class::{ClassParams, LockstepClass};
use super::replay::{replay_class, ReplayError};
use super::zfamily::mask_rounds;
use crate::fsrp::{BroadcastKind, MessageMultiset, ValidateKind};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("property {property} violated at class {class_index}{}: {detail}", fmt_at(.at))]
    PropertyViolation {
        property: u8,
        class_index: usize,
        /// `(i, j)` with 1-based round and 0-based group.
        at: Option<(usize, usize)>,
        detail: String,
    },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("chain longer than the budget of {limit} classes")]
    Budget { limit: usize },
    #[error("replay of class {class_index}: {source}")]
    Replay {
        class_index: usize,
        #[source]
        source: ReplayError,
    },
}

fn fmt_at(at: &Option<(usize, usize)>) -> String {
    at.map_or(String::new(), |(i, j)| {
        format!(" (round {i}, group {})", j + 1)
    })
}

impl VerifyError {
    pub fn is_property_violation(&self) -> bool {
        matches!(self, VerifyError::PropertyViolation { .. })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub broadcast: BroadcastKind,
    pub validate: ValidateKind,
    /// Replay every class through the engine, not only the endpoints.
    pub replay_all: bool,
    /// Give up once a chain exceeds this many classes.
    pub max_classes: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            broadcast: BroadcastKind::Trivial,
            validate: ValidateKind::PerRound,
            replay_all: false,
            max_classes: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChainReport {
    /// Number of classes, `L + 1`.
    pub length: usize,
    /// First class leaving some group undecided through `E`.
    pub witness: Option<usize>,
    pub undecided_classes: usize,
    /// Adjacent pairs with identical `S` sets everywhere.
    pub identical_pairs: usize,
    pub replayed: usize,
}

/// Property 1: every group's round-`k` messages realise `D~` exactly, and
/// each `S_i^j` is the union of the group messages named by `Z_i^j`.
pub fn check_counts(
    params: &ClassParams,
    class: &LockstepClass,
    index: usize,
) -> Result<(), VerifyError> {
    let pf = params.pf.as_ref();
    let violation = |i, j, detail: String| VerifyError::PropertyViolation {
        property: 1,
        class_index: index,
        at: Some((i, j)),
        detail,
    };
    let g = class.groups();
    for i in 1..=class.horizon() {
        for j in 0..g {
            let d = if i == 1 {
                pf.initial(class.inputs[j])
            } else {
                pf.next(i as u32 - 1, class.s_set(i - 1, j))
            };
            let adj = params
                .adjusted(&d)
                .map_err(|e| violation(i, j, e.to_string()))?;
            let msgs = &class.group_messages[i - 1][j];
            if msgs.len() != params.layout.t() {
                return Err(violation(
                    i,
                    j,
                    format!(
                        "{} messages in a group of {}",
                        msgs.len(),
                        params.layout.t()
                    ),
                ));
            }
            for (p, want) in adj.support().iter().zip(adj.counts()) {
                let got = msgs.iter().filter(|m| *m == p).count() as u64;
                if got != *want {
                    return Err(violation(
                        i,
                        j,
                        format!("{p} occurs {got} times, rho~ t = {want}"),
                    ));
                }
            }
            if msgs.iter().any(|m| adj.count_of(m).is_none()) {
                return Err(violation(i, j, "message outside the support".into()));
            }
            let mut expect = MessageMultiset::new();
            for sender in 0..g {
                for k in mask_rounds(class.z.z_mask(i, j, sender)) {
                    for m in &class.group_messages[k as usize - 1][sender] {
                        expect.add(k, m.clone());
                    }
                }
            }
            if &expect != class.s_set(i, j) {
                return Err(violation(
                    i,
                    j,
                    "S does not match the messages named by Z".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Groups in which two classes differ (inputs, `z`-derived `Z`, or `S`).
pub fn differing_groups(a: &LockstepClass, b: &LockstepClass) -> Vec<usize> {
    (0..a.groups())
        .filter(|j| {
            a.inputs[*j] != b.inputs[*j]
                || (1..=a.horizon()).any(|i| {
                    a.s_set(i, *j) != b.s_set(i, *j)
                        || (0..a.groups()).any(|g| a.z.z_mask(i, *j, g) != b.z.z_mask(i, *j, g))
                })
        })
        .collect()
}

fn s_differs(a: &LockstepClass, b: &LockstepClass) -> bool {
    a.s != b.s
}

/// Checks properties 1 through 4 on a stream of classes and looks for the
/// witness.
///
/// Property 2 requires every adjacent pair to differ in at most one group.
/// Properties 3 and 4 replay the first and last classes through the engine
/// and require that no good processor decides 1 (resp. 0).
pub fn verify_chain<I>(
    chain: I,
    params: &ClassParams,
    opts: VerifyOptions,
) -> Result<ChainReport, VerifyError>
where
    I: IntoIterator<Item = Result<LockstepClass, ChainError>>,
{
    let mut report = ChainReport::default();
    let mut prev: Option<LockstepClass> = None;
    let mut first: Option<LockstepClass> = None;
    for (index, class) in chain.into_iter().enumerate() {
        if let Some(limit) = opts.max_classes.filter(|l| index >= *l) {
            return Err(VerifyError::Budget { limit });
        }
        let class = class?;
        check_counts(params, &class, index)?;
        if !class.undecided_groups().is_empty() {
            report.undecided_classes += 1;
            report.witness.get_or_insert(index);
        }
        if let Some(p) = &prev {
            let diff = differing_groups(p, &class);
            if diff.len() > 1 {
                return Err(VerifyError::PropertyViolation {
                    property: 2,
                    class_index: index,
                    at: None,
                    detail: format!(
                        "classes {} and {index} differ in groups {diff:?}",
                        index - 1
                    ),
                });
            }
            if !s_differs(p, &class) {
                report.identical_pairs += 1;
            }
        }
        if opts.replay_all {
            replay_and_compare(params, &class, index, opts)?;
            report.replayed += 1;
        }
        if first.is_none() {
            first = Some(class.clone());
        }
        prev = Some(class);
        report.length = index + 1;
    }
    let (Some(first), Some(last)) = (first, prev) else {
        return Ok(report);
    };
    for (class, index, forbidden, property) in
        [(&first, 0, 1u8, 3u8), (&last, report.length - 1, 0, 4)]
    {
        let want_inputs = if property == 3 { 0 } else { 1 };
        if class.inputs.iter().any(|b| *b != want_inputs) {
            return Err(VerifyError::PropertyViolation {
                property,
                class_index: index,
                at: None,
                detail: format!("endpoint inputs {:?}", class.inputs),
            });
        }
        let replayed = replay_and_compare(params, class, index, opts)?;
        if !opts.replay_all {
            report.replayed += 1;
        }
        for (slot, d) in replayed.iter().enumerate() {
            if let Some((b, round)) = d {
                let faulty = params
                    .layout
                    .is_faulty(crate::sim::ProcessorId::from_slot(slot));
                if *b == forbidden && !faulty {
                    return Err(VerifyError::PropertyViolation {
                        property,
                        class_index: index,
                        at: Some((
                            *round as usize,
                            params
                                .layout
                                .group_of(crate::sim::ProcessorId::from_slot(slot)),
                        )),
                        detail: format!("good processor {} decided {forbidden}", slot + 1),
                    });
                }
            }
        }
    }
    Ok(report)
}

fn replay_and_compare(
    params: &ClassParams,
    class: &LockstepClass,
    index: usize,
    opts: VerifyOptions,
) -> Result<Vec<Option<(u8, u32)>>, VerifyError> {
    let r = replay_class(
        params,
        opts.broadcast,
        opts.validate,
        &class.inputs,
        &class.z,
    )
    .map_err(|source| VerifyError::Replay {
        class_index: index,
        source,
    })?;
    if &r.class != class {
        return Err(VerifyError::Replay {
            class_index: index,
            source: ReplayError::Engine("replayed S sets differ from the derived class".into()),
        });
    }
    Ok(r.decisions)
}

/// Outcome of the doubling search for a witness class.
#[derive(Clone, Debug)]
pub struct WitnessSearch {
    /// Horizons tried, with the chain report of each.
    pub tried: Vec<(usize, ChainReport)>,
    pub found: Option<(usize, usize, LockstepClass)>,
}

/// Doubles `E` from `start` up to `ceiling` until a chain contains a class
/// leaving some group undecided. Returns that horizon, the class index and
/// the class.
pub fn find_witness(
    params: &ClassParams,
    start: usize,
    ceiling: usize,
    opts: VerifyOptions,
) -> Result<WitnessSearch, VerifyError> {
    let mut out = WitnessSearch {
        tried: Vec::new(),
        found: None,
    };
    let mut e = start.max(1);
    while e <= ceiling {
        let report = verify_chain(chain_generator(params.clone(), e)?, params, opts)?;
        let witness = report.witness;
        out.tried.push((e, report));
        if let Some(idx) = witness {
            let class = chain_generator(params.clone(), e)?
                .nth(idx)
                .expect("witness index within chain")?;
            out.found = Some((e, idx, class));
            return Ok(out);
        }
        e *= 2;
    }
    Ok(out)
}
