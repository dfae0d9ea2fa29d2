use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::{default_eps, parse_rational, Rational};
use crate::fsrp::{BroadcastKind, ValidateKind};

/// Which runs an experiment performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulerKind {
    #[serde(rename = "benign-fair")]
    BenignFair,
    #[serde(rename = "adversary-lockstep")]
    AdversaryLockstep,
    /// Attack and baseline on the same seeds.
    #[serde(rename = "both")]
    Both,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::BenignFair => "benign-fair",
            SchedulerKind::AdversaryLockstep => "adversary-lockstep",
            SchedulerKind::Both => "both",
        }
    }

    pub fn attack(self) -> bool {
        self != SchedulerKind::BenignFair
    }

    pub fn baseline(self) -> bool {
        self != SchedulerKind::AdversaryLockstep
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "benign-fair" => Ok(SchedulerKind::BenignFair),
            "adversary-lockstep" => Ok(SchedulerKind::AdversaryLockstep),
            "both" => Ok(SchedulerKind::Both),
            _ => Err(format!(
                "unknown scheduler {s:?} (benign-fair, adversary-lockstep, both)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordFormat {
    #[serde(rename = "json-lines")]
    JsonLines,
    #[serde(rename = "csv")]
    Csv,
}

impl RecordFormat {
    pub fn name(self) -> &'static str {
        match self {
            RecordFormat::JsonLines => "json-lines",
            RecordFormat::Csv => "csv",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            RecordFormat::JsonLines => "jsonl",
            RecordFormat::Csv => "csv",
        }
    }
}

impl FromStr for RecordFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json-lines" | "jsonl" => Ok(RecordFormat::JsonLines),
            "csv" => Ok(RecordFormat::Csv),
            _ => Err(format!("unknown format {s:?} (json-lines, csv)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub t: usize,
    /// Bound `R` on the support of `N`.
    pub r: usize,
    /// `None` means `c / (4 R^2)`.
    pub eps: Option<Rational>,
    pub protocol: String,
    pub scheduler: SchedulerKind,
    pub broadcast: BroadcastKind,
    pub validate: ValidateKind,
    /// Round cap `K`.
    pub rounds_cap: u32,
    /// Fixed chain horizon `E`; `None` searches by doubling.
    pub chain_rounds: Option<usize>,
    /// Largest `E` tried by the doubling search.
    pub witness_ceiling: usize,
    /// Largest chain the witness search walks before giving up.
    pub max_classes: usize,
    pub seeds: u64,
    pub seed_base: u64,
    pub out: PathBuf,
    pub format: RecordFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 25,
            t: 5,
            r: 2,
            eps: None,
            protocol: "benor-style".into(),
            scheduler: SchedulerKind::Both,
            broadcast: BroadcastKind::Trivial,
            validate: ValidateKind::PerRound,
            rounds_cap: 64,
            chain_rounds: None,
            witness_ceiling: 64,
            max_classes: 2_000_000,
            seeds: 1000,
            seed_base: 0,
            out: PathBuf::from("out"),
            format: RecordFormat::JsonLines,
        }
    }
}

impl ExperimentConfig {
    /// `c = t / n`.
    pub fn c(&self) -> Rational {
        Rational::new(self.t as i128, self.n.max(1) as i128)
    }

    pub fn eps(&self) -> Rational {
        self.eps.unwrap_or_else(|| default_eps(self.c(), self.r))
    }

    /// Sets one key from a config file or flag. Keys use the flag spelling
    /// without dashes, e.g. `rounds-cap`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        match key {
            "n" => self.n = num(key, value)?,
            "t" => self.t = num(key, value)?,
            "R" | "r" => self.r = num(key, value)?,
            "eps" => self.eps = Some(parse_rational(value).map_err(|e| format!("eps: {e}"))?),
            "protocol" => self.protocol = value.to_string(),
            "scheduler" => self.scheduler = value.parse()?,
            "broadcast" => {
                self.broadcast = BroadcastKind::parse(value)
                    .ok_or_else(|| format!("unknown broadcast {value:?}"))?
            }
            "validate" => {
                self.validate = ValidateKind::parse(value)
                    .ok_or_else(|| format!("unknown validation {value:?}"))?
            }
            "rounds-cap" => self.rounds_cap = num(key, value)?,
            "chain-rounds" => {
                self.chain_rounds = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "witness-ceiling" => self.witness_ceiling = num(key, value)?,
            "max-classes" => self.max_classes = num(key, value)?,
            "seeds" => self.seeds = num(key, value)?,
            "seed-base" => self.seed_base = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "format" => self.format = value.parse()?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<(), String> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", no + 1))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| format!("line {}: {e}", no + 1))?;
        }
        Ok(())
    }

    /// The config as `key = value` lines that [`apply_file`](Self::apply_file)
    /// reads back.
    pub fn to_file(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("n", self.n.to_string());
        put("t", self.t.to_string());
        put("R", self.r.to_string());
        put("eps", self.eps().to_string());
        put("protocol", self.protocol.clone());
        put("scheduler", self.scheduler.name().into());
        put("broadcast", self.broadcast.name().into());
        put("validate", self.validate.name().into());
        put("rounds-cap", self.rounds_cap.to_string());
        put(
            "chain-rounds",
            self.chain_rounds.map_or("auto".into(), |e| e.to_string()),
        );
        put("witness-ceiling", self.witness_ceiling.to_string());
        put("max-classes", self.max_classes.to_string());
        put("seeds", self.seeds.to_string());
        put("seed-base", self.seed_base.to_string());
        put("out", self.out.display().to_string());
        put("format", self.format.name().into());
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Severity {
    /// The experiment cannot run.
    Hard,
    /// The experiment runs but some guarantee does not apply.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub severity: Severity,
    pub constraint: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Hard => "error",
            Severity::Soft => "warning",
        };
        write!(f, "{tag}: {}: {}", self.constraint, self.detail)
    }
}

/// Checks the arithmetic constraints of `cfg`. Hard violations stop the
/// experiment; soft ones only flag bounds that do not apply at this scale.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut hard = |constraint: &str, detail: String| {
        out.push(Violation {
            severity: Severity::Hard,
            constraint: constraint.into(),
            detail,
        })
    };
    if cfg.t == 0 || cfg.n == 0 {
        hard("n, t > 0", format!("n = {}, t = {}", cfg.n, cfg.t));
        return out;
    }
    if cfg.n % cfg.t != 0 {
        hard(
            "t | n",
            format!("t = {} does not divide n = {}", cfg.t, cfg.n),
        );
    }
    let c = cfg.c();
    let ct = c * Rational::from_integer(cfg.t as i128);
    if !ct.is_integer() || ct < Rational::from_integer(1) {
        hard("ct in Z+", format!("ct = {ct} is not a positive integer"));
    }
    if c >= Rational::new(1, 3) {
        hard("0 < c < 1/3", format!("c = {c}"));
    }
    if cfg.r == 0 {
        hard("R >= 1", "R = 0".into());
    }
    let r2 = (cfg.r * cfg.r) as i128;
    if cfg.t as i128 <= r2 {
        hard("t > R^2", format!("t = {} <= R^2 = {r2}", cfg.t));
    } else if cfg.r > 0 {
        let eps = cfg.eps();
        let upper = Rational::new(1, r2) - Rational::new(1, cfg.t as i128);
        if eps <= Rational::from_integer(0) || eps >= upper {
            hard(
                "0 < eps < 1/R^2 - 1/t",
                format!("eps = {eps}, upper bound {upper}"),
            );
        }
    }
    if cfg.rounds_cap == 0 {
        hard("K >= 1", "rounds cap is 0".into());
    }
    if cfg.seeds == 0 {
        hard("seeds >= 1", "no seeds".into());
    }
    if let Some(e) = cfg.chain_rounds {
        if e == 0 || e as u32 > cfg.rounds_cap {
            hard("1 <= E <= K", format!("E = {e}, K = {}", cfg.rounds_cap));
        }
    } else if cfg.witness_ceiling < 4 {
        hard(
            "witness ceiling >= 4",
            format!("ceiling = {}", cfg.witness_ceiling),
        );
    }
    if out.iter().any(|v| v.severity == Severity::Hard) {
        return out;
    }
    let soft = |constraint: &str, detail: String| Violation {
        severity: Severity::Soft,
        constraint: constraint.into(),
        detail,
    };
    let need = Rational::from_integer(2 * r2) / c;
    if Rational::from_integer(cfg.t as i128) <= need {
        out.push(soft(
            "t > (2/c) R^2",
            format!(
                "t = {} <= {need}; the tail bound on escape probability does not apply",
                cfg.t
            ),
        ));
    }
    let eps_tail = c / Rational::from_integer(2 * r2) - Rational::new(1, cfg.t as i128);
    if cfg.eps() >= eps_tail {
        out.push(soft(
            "eps < c/(2R^2) - 1/t",
            format!(
                "eps = {} >= {eps_tail}; the tail bound does not apply",
                cfg.eps()
            ),
        ));
    }
    out
}

pub fn is_valid(violations: &[Violation]) -> bool {
    violations.iter().all(|v| v.severity == Severity::Soft)
}
