use super::class::{ClassParams, LockstepClass};
use super::policy::{CanonicalCoins, LockstepPolicy, ReplayMismatch};
use super::zfamily::ZFamily;
use crate::fsrp::{processors, BroadcastKind, Processor, ProcessorParams, ValidateKind};
use crate::sim::{run_until, Configuration, ProcessorId, RunError, Trace};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Mismatch(#[from] ReplayMismatch),
    #[error("engine: {0}")]
    Engine(String),
    #[error("echo/ready broadcast needs n >= 2t + 1 (n = {n}, t = {t})")]
    TooFewForBracha { n: usize, t: usize },
    #[error("group {group} members disagree on {what} in round {round}")]
    GroupSplit {
        group: usize,
        round: u32,
        what: &'static str,
    },
}

/// Result of running a class through the real engine.
#[derive(Debug)]
pub struct ReplayedClass {
    /// The class as observed: `S_i^j` and group messages read back from the
    /// processors.
    pub class: LockstepClass,
    /// Decision of every processor after `E` rounds.
    pub decisions: Vec<Option<(u8, u32)>>,
    pub config: Configuration<Processor>,
    pub trace: Trace,
}

impl ReplayedClass {
    /// Good processors that have not decided.
    pub fn undecided_good(&self) -> Vec<ProcessorId> {
        self.config
            .good()
            .filter(|p| self.decisions[p.slot()].is_none())
            .collect()
    }
}

/// Runs the lockstep execution of `inputs` and `z` with canonical coin
/// assignment, checks every member's accepted set against `Z_i^j`, and reads
/// the class back from the processors.
pub fn replay_class(
    params: &ClassParams,
    broadcast: BroadcastKind,
    validate: ValidateKind,
    inputs: &[u8],
    z: &ZFamily,
) -> Result<ReplayedClass, ReplayError> {
    let layout = &params.layout;
    if broadcast == BroadcastKind::Bracha && layout.n() < 2 * layout.t() + 1 {
        return Err(ReplayError::TooFewForBracha {
            n: layout.n(),
            t: layout.t(),
        });
    }
    let e = z.rounds();
    let pp = ProcessorParams::new(
        layout.n(),
        layout.t(),
        params.pf.clone(),
        broadcast,
        validate,
        e as u32,
    );
    let config = Configuration::new(
        processors(&pp, &layout.expand_inputs(inputs)),
        layout.faulty_mask(),
    );
    let mut policy = LockstepPolicy::new(
        layout.clone(),
        broadcast,
        z.clone(),
        None,
        CanonicalCoins::new(params.clone()),
        e as u32,
    );
    let out = match run_until(config, &mut policy, &[]) {
        Ok(o) => o,
        Err(RunError::Sim(s)) => return Err(ReplayError::Engine(s.to_string())),
        Err(e) => return Err(ReplayError::Engine(e.to_string())),
    };
    if let Some(m) = policy.mismatch() {
        return Err(m.clone().into());
    }
    let config = out.config;
    let g = layout.groups();
    let mut group_messages = vec![vec![Vec::new(); g]; e];
    let mut s = vec![Vec::with_capacity(g); e];
    let mut decisions_by_group = vec![None; g];
    for j in 0..g {
        let members: Vec<&Processor> = layout.members(j).map(|p| config.process(p)).collect();
        for i in 1..=e as u32 {
            let first = members[0]
                .round_inputs()
                .get(&i)
                .cloned()
                .unwrap_or_default();
            if members
                .iter()
                .any(|m| m.round_inputs().get(&i) != Some(&first))
            {
                return Err(ReplayError::GroupSplit {
                    group: j,
                    round: i,
                    what: "S",
                });
            }
            s[i as usize - 1].push(first);
            let mut msgs: Vec<_> = members
                .iter()
                .filter_map(|m| m.sent().get(&i).cloned())
                .collect();
            msgs.sort();
            group_messages[i as usize - 1][j] = msgs;
        }
        let d = members[0].decided();
        if members.iter().any(|m| m.decided() != d) {
            return Err(ReplayError::GroupSplit {
                group: j,
                round: d.map_or(0, |x| x.1),
                what: "decision",
            });
        }
        decisions_by_group[j] = d;
    }
    let decisions = config.processes().iter().map(|p| p.decided()).collect();
    Ok(ReplayedClass {
        class: LockstepClass {
            inputs: inputs.to_vec(),
            z: z.clone(),
            group_messages,
            s,
            decisions: decisions_by_group,
        },
        decisions,
        config,
        trace: out.trace,
    })
}
