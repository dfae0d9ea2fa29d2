use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    CoinRequest, CoinSource, Configuration, Event, MessageKey, Process, ProcessorId, SimError,
};

/// The next step a policy wants taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub processor: ProcessorId,
    pub received: Option<MessageKey>,
}

/// Decides which event applies next and supplies the random outcomes of the
/// steps it schedules.
pub trait SchedulerPolicy<P: Process>: CoinSource {
    fn name(&self) -> &'static str;

    fn next_step(&mut self, config: &Configuration<P>) -> Option<Step>;

    /// Called after each applied event.
    fn observe(&mut self, _config: &Configuration<P>, _event: &Event) {}
}

/// Independent seeded stream per processor.
#[derive(Clone, Debug)]
pub struct ProcessorCoins {
    streams: Vec<ChaCha8Rng>,
}

impl ProcessorCoins {
    pub fn new(n: usize, seed: u64) -> Self {
        let streams = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                rng
            })
            .collect();
        ProcessorCoins { streams }
    }

    pub fn sample(&mut self, req: &CoinRequest<'_>) -> usize {
        let u: f64 = self.streams[req.processor.slot()].random();
        req.dist.sample_index(u)
    }
}

impl CoinSource for ProcessorCoins {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        Ok(self.sample(req))
    }
}

/// Seeded fair scheduler. Unstarted processors go first; after that one of
/// the `window` oldest buffered messages is delivered, with older messages
/// proportionally more likely. A message that has waited `max_wait` steps is
/// delivered unconditionally, so every buffered message is eventually
/// received.
#[derive(Clone, Debug)]
pub struct BenignFair {
    rng: ChaCha8Rng,
    coins: ProcessorCoins,
    window: usize,
    max_wait: u64,
}

impl BenignFair {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        BenignFair {
            rng,
            coins: ProcessorCoins::new(n, seed),
            window: 2 * n.max(1),
            max_wait: 64 * (n.max(1) as u64).pow(2),
        }
    }

    /// Reuses existing per-processor streams, e.g. to continue a run that
    /// another policy started.
    pub fn with_coins(seed: u64, coins: ProcessorCoins, n: usize) -> Self {
        let mut s = BenignFair::new(n, seed);
        s.coins = coins;
        s
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

impl CoinSource for BenignFair {
    fn choose(&mut self, req: &CoinRequest<'_>) -> Result<usize, SimError> {
        self.coins.choose(req)
    }
}

impl<P: Process> SchedulerPolicy<P> for BenignFair {
    fn name(&self) -> &'static str {
        "benign-fair"
    }

    fn next_step(&mut self, config: &Configuration<P>) -> Option<Step> {
        if let Some(p) = ProcessorId::all(config.n()).find(|p| config.process(*p).needs_start()) {
            return Some(Step {
                processor: p,
                received: None,
            });
        }
        let mut oldest = config.by_age();
        let (enqueued, first) = oldest.next()?;
        if config.steps().saturating_sub(enqueued) >= self.max_wait {
            return Some(Step {
                processor: first.to,
                received: Some(*first),
            });
        }
        let candidates: Vec<MessageKey> = std::iter::once(*first)
            .chain(oldest.take(self.window - 1).map(|(_, k)| *k))
            .collect();
        // weight w_i = len - i favours older messages
        let len = candidates.len();
        let total = len * (len + 1) / 2;
        let mut pick = self.rng.random_range(0..total);
        let mut chosen = candidates[len - 1];
        for (i, k) in candidates.iter().enumerate() {
            let w = len - i;
            if pick < w {
                chosen = *k;
                break;
            }
            pick -= w;
        }
        Some(Step {
            processor: chosen.to,
            received: Some(chosen),
        })
    }
}
