use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fill::fill_faulty_choices;
use crate::fsrp::{processors, BroadcastKind, Processor, ProcessorParams, ValidateKind};
use crate::lockstep::{ClassParams, LockstepClass, LockstepPolicy};
use crate::payload::Payload;
use crate::sim::{
    run_until, BenignFair, CoinRequest, CoinSource, Configuration, Event, ProcessorCoins,
    ProcessorId, SchedulerPolicy, SimError, Step, StopCondition, Trace,
};

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("engine: {0}")]
    Engine(String),
    #[error("lockstep schedule left the class without a failed fill: {0}")]
    Mismatch(String),
}

/// Outcome of one of a `(round, group)` fill attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FillOutcome {
    Success,
    Fail,
    NotAttempted,
}

impl FillOutcome {
    fn symbol(self) -> char {
        match self {
            FillOutcome::Success => '1',
            FillOutcome::Fail => '0',
            FillOutcome::NotAttempted => '-',
        }
    }

    fn from_symbol(c: char) -> Option<Self> {
        match c {
            '1' => Some(FillOutcome::Success),
            '0' => Some(FillOutcome::Fail),
            '-' => Some(FillOutcome::NotAttempted),
            _ => None,
        }
    }
}

/// One run, attack or baseline.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub scheduler: String,
    /// Last decision round of a good processor, or the cap when some good
    /// processor is still undecided.
    pub rounds_used: u32,
    /// Keyed by 1-based processor index.
    pub decided: BTreeMap<u32, Option<u8>>,
    pub all_good_decided: bool,
    /// Attack runs only: rounds whose `S` sets matched the target.
    pub in_class_through_round: Option<u32>,
    pub escape_round: Option<u32>,
    /// One string per round, one character per group: `1` filled, `0`
    /// failed, `-` not attempted.
    pub per_round_group_success: Vec<String>,
}

impl RunRecord {
    pub fn fill_outcome(&self, round: u32, group: usize) -> FillOutcome {
        self.per_round_group_success
            .get(round as usize - 1)
            .and_then(|s| s.chars().nth(group))
            .and_then(FillOutcome::from_symbol)
            .unwrap_or(FillOutcome::NotAttempted)
    }
}

/// Everything an attack or baseline run needs besides the seed.
#[derive(Clone, Debug)]
pub struct RunSetup {
    pub params: ClassParams,
    pub broadcast: BroadcastKind,
    pub validate: ValidateKind,
    /// Round cap `K`.
    pub cap: u32,
}

impl RunSetup {
    fn event_cap(&self) -> u64 {
        let n = self.params.layout.n() as u64;
        let per_instance = match self.broadcast {
            BroadcastKind::Trivial => n,
            BroadcastKind::Bracha => n + 2 * n * n,
        };
        // every instance fully delivered, times a slack factor
        4 * n * per_instance * (self.cap as u64 + 1) + 1_000
    }

    fn stops(&self) -> [StopCondition; 3] {
        [
            StopCondition::AllGoodDecided,
            StopCondition::RoundCap(self.cap),
            StopCondition::EventCap(self.event_cap()),
        ]
    }

    fn initial(&self, inputs: &[u8]) -> Configuration<Processor> {
        let layout = &self.params.layout;
        let pp = ProcessorParams::new(
            layout.n(),
            layout.t(),
            self.params.pf.clone(),
            self.broadcast,
            self.validate,
            self.cap,
        );
        Configuration::new(processors(&pp, inputs), layout.faulty_mask())
    }
}

/// Coins of an attack: good members draw from their own streams, faulty
/// members take the fill of their group.
struct AttackCoins {
    params: ClassParams,
    honest: ProcessorCoins,
    horizon: u32,
    good: BTreeMap<(u32, usize), Vec<Payload>>,
    fills: BTreeMap<(u32, usize), Vec<Payload>>,
    outcome: Vec<Vec<FillOutcome>>,
    escape: Option<u32>,
}

impl AttackCoins {
    fn fill(&mut self, req: &CoinRequest<'_>, group: usize) -> Result<Option<usize>, SimError> {
        let layout = &self.params.layout;
        let k = req.round;
        let bad = |reason: String| SimError::Protocol {
            processor: req.processor,
            reason,
        };
        let key = (k, group);
        if !self.fills.contains_key(&key) {
            let good = self.good.get(&key).cloned().unwrap_or_default();
            if good.len() != layout.good_per_group() {
                return Err(bad(format!(
                    "faulty choice in round {k} before all good members chose"
                )));
            }
            let adj = self
                .params
                .adjusted(req.dist)
                .map_err(|e| bad(e.to_string()))?;
            match fill_faulty_choices(&good, &adj, layout.faulty_per_group()) {
                Some(fill) => {
                    self.outcome[k as usize - 1][group] = FillOutcome::Success;
                    self.fills.insert(key, fill);
                }
                None => {
                    self.outcome[k as usize - 1][group] = FillOutcome::Fail;
                    self.escape.get_or_insert(k);
                    return Ok(None);
                }
            }
        }
        let slot = layout.member_index(req.processor) - layout.good_per_group();
        let payload = &self.fills[&key][slot];
        req.dist
            .index_of(payload)
            .map(Some)
            .ok_or_else(|| bad(format!("{payload} outside the support")))
    }
}

impl CoinSource for AttackCoins {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        let layout = &self.params.layout;
        let group = layout.group_of(req.processor);
        if self.escape.is_none() && req.round <= self.horizon {
            if layout.is_faulty(req.processor) {
                if let Some(i) = self.fill(req, group)? {
                    return Ok(i);
                }
            } else {
                let i = self.honest.sample(req);
                self.good
                    .entry((req.round, group))
                    .or_default()
                    .push(req.dist.entries()[i].0.clone());
                return Ok(i);
            }
        }
        Ok(self.honest.sample(req))
    }
}

/// Lockstep scheduling that stops as soon as a fill fails.
struct Steering {
    inner: LockstepPolicy<AttackCoins>,
}

impl CoinSource for Steering {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        self.inner.choose(req)
    }
}

impl SchedulerPolicy<Processor> for Steering {
    fn name(&self) -> &'static str {
        "adversary-lockstep"
    }

    fn next_step(&mut self, config: &Configuration<Processor>) -> Option<Step> {
        if self.inner.coins().escape.is_some() {
            return None;
        }
        self.inner.next_step(config)
    }

    fn observe(&mut self, config: &Configuration<Processor>, event: &Event) {
        self.inner.observe(config, event)
    }
}

fn record(
    setup: &RunSetup,
    seed: u64,
    scheduler: &str,
    config: &Configuration<Processor>,
) -> RunRecord {
    let decided: BTreeMap<u32, Option<u8>> = ProcessorId::all(config.n())
        .map(|p| (p.index(), config.process(p).decided().map(|d| d.0)))
        .collect();
    let all_good_decided = config.good().all(|p| config.process(p).decided().is_some());
    let rounds_used = if all_good_decided {
        config
            .good()
            .filter_map(|p| config.process(p).decided().map(|d| d.1))
            .max()
            .unwrap_or(0)
    } else {
        setup.cap
    };
    RunRecord {
        seed,
        scheduler: scheduler.to_string(),
        rounds_used,
        decided,
        all_good_decided,
        in_class_through_round: None,
        escape_round: None,
        per_round_group_success: Vec::new(),
    }
}

/// Runs the protocol from `target`'s inputs while steering it into
/// `target`: lockstep scheduling per the class's permutations for
/// `target.horizon()` rounds, faulty coins filled to the `D~` counts. After
/// the horizon, or from the first failed fill on, the run continues under
/// the benign scheduler with honest coins until every good processor
/// decides or the cap is reached.
pub fn attack_run(
    setup: &RunSetup,
    target: &LockstepClass,
    seed: u64,
) -> Result<(RunRecord, Trace), AttackError> {
    let layout = &setup.params.layout;
    if target.groups() != layout.groups() {
        return Err(AttackError::ConfigInvalid(format!(
            "target has {} groups, layout {}",
            target.groups(),
            layout.groups()
        )));
    }
    let horizon = target.horizon() as u32;
    if horizon > setup.cap {
        return Err(AttackError::ConfigInvalid(format!(
            "target horizon {horizon} exceeds the round cap {}",
            setup.cap
        )));
    }
    let n = layout.n();
    let coins = AttackCoins {
        params: setup.params.clone(),
        honest: ProcessorCoins::new(n, seed),
        horizon,
        good: BTreeMap::new(),
        fills: BTreeMap::new(),
        outcome: vec![vec![FillOutcome::NotAttempted; layout.groups()]; horizon as usize],
        escape: None,
    };
    let inner = LockstepPolicy::new(
        layout.clone(),
        setup.broadcast,
        target.z.clone(),
        Some(target.clone()),
        coins,
        horizon,
    );
    let mut steering = Steering { inner };
    let stops = setup.stops();
    let config = setup.initial(&layout.expand_inputs(&target.inputs));
    let first =
        run_until(config, &mut steering, &stops).map_err(|e| AttackError::Engine(e.to_string()))?;
    let coins = steering.inner.coins();
    if coins.escape.is_none() {
        if let Some(m) = steering.inner.mismatch() {
            return Err(AttackError::Mismatch(m.to_string()));
        }
    }
    let escape = coins.escape;
    let outcome = coins.outcome.clone();
    let honest = steering.inner.into_coins().honest;
    let mut benign = BenignFair::with_coins(seed, honest, n);
    let second = run_until(first.config, &mut benign, &stops)
        .map_err(|e| AttackError::Engine(e.to_string()))?;
    let mut events = first.trace.into_events();
    events.extend(second.trace.into_events());
    let mut rec = record(setup, seed, "adversary-lockstep", &second.config);
    rec.in_class_through_round = Some(escape.map_or(horizon, |k| k - 1));
    rec.escape_round = escape;
    rec.per_round_group_success = outcome
        .iter()
        .map(|row| row.iter().map(|o| o.symbol()).collect())
        .collect();
    Ok((rec, Trace::new(events)))
}

/// The same protocol under the benign scheduler with honest coins for
/// every processor.
pub fn baseline_run(
    setup: &RunSetup,
    inputs: &[u8],
    seed: u64,
) -> Result<(RunRecord, Trace), AttackError> {
    let layout = &setup.params.layout;
    if inputs.len() != layout.n() {
        return Err(AttackError::ConfigInvalid(format!(
            "{} inputs for {} processors",
            inputs.len(),
            layout.n()
        )));
    }
    let mut benign = BenignFair::new(layout.n(), seed);
    let out = run_until(setup.initial(inputs), &mut benign, &setup.stops())
        .map_err(|e| AttackError::Engine(e.to_string()))?;
    Ok((record(setup, seed, "benign-fair", &out.config), out.trace))
}
