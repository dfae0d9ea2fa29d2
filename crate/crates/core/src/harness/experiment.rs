use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{is_valid, validate_config, ExperimentConfig, Severity, Violation};
use super::io::write_records;
use super::stats::{summarize, SummaryStats};
use crate::adversary::{
    attack_run, baseline_run, class_fill_probabilities, AttackError, RunRecord, RunSetup,
};
use crate::fsrp::{ProtocolFunction, ProtocolRegistry};
use crate::lockstep::{
    find_witness, write_chain, ClassParams, ClassRecord, GroupLayout, LockstepClass, VerifyError,
    VerifyOptions, WitnessSearch,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ConfigInvalid(Vec<Violation>),
    #[error("no undecided class up to E = {ceiling}")]
    NoWitness { ceiling: usize },
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl ExperimentError {
    fn config(constraint: &str, detail: String) -> Self {
        ExperimentError::ConfigInvalid(vec![Violation {
            severity: Severity::Hard,
            constraint: constraint.into(),
            detail,
        }])
    }
}

/// The witness class an experiment attacks.
#[derive(Clone, Debug)]
pub struct Witness {
    pub horizon: usize,
    pub class_index: usize,
    pub class: LockstepClass,
    pub search: WitnessSearch,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub warnings: Vec<Violation>,
    pub witness: Witness,
    pub records: Vec<RunRecord>,
    pub summary: SummaryStats,
    pub oracle: Vec<Vec<f64>>,
    pub records_path: PathBuf,
    pub summary_path: PathBuf,
}

pub fn build_protocol(
    cfg: &ExperimentConfig,
) -> Result<Arc<dyn ProtocolFunction>, ExperimentError> {
    let reg = ProtocolRegistry::with_defaults();
    let pf = reg.build(&cfg.protocol, cfg.n, cfg.t).ok_or_else(|| {
        let known: Vec<&str> = reg.names().collect();
        ExperimentError::config(
            "protocol",
            format!(
                "unknown protocol {:?} (known: {})",
                cfg.protocol,
                known.join(", ")
            ),
        )
    })?;
    if pf.max_support() > cfg.r {
        return Err(ExperimentError::config(
            "support <= R",
            format!(
                "{} has support up to {}, R = {}",
                pf.name(),
                pf.max_support(),
                cfg.r
            ),
        ));
    }
    Ok(pf)
}

/// Checks `cfg` and builds the class parameters it describes.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(ClassParams, Vec<Violation>), ExperimentError> {
    let violations = validate_config(cfg);
    if !is_valid(&violations) {
        return Err(ExperimentError::ConfigInvalid(
            violations
                .into_iter()
                .filter(|v| v.severity == Severity::Hard)
                .collect(),
        ));
    }
    let pf = build_protocol(cfg)?;
    let layout = GroupLayout::with_fraction(cfg.n, cfg.t, cfg.c())
        .map_err(|e| ExperimentError::config("layout", e.to_string()))?;
    Ok((ClassParams::new(layout, pf, cfg.eps()), violations))
}

/// Doubles `E` from 4 (or uses the fixed horizon) until some chain class
/// leaves a group undecided.
pub fn search_witness(
    cfg: &ExperimentConfig,
    params: &ClassParams,
) -> Result<Witness, ExperimentError> {
    let (start, ceiling) = match cfg.chain_rounds {
        Some(e) => (e, e),
        None => (4, cfg.witness_ceiling.min(cfg.rounds_cap as usize)),
    };
    let opts = VerifyOptions {
        broadcast: cfg.broadcast,
        validate: cfg.validate,
        replay_all: false,
        max_classes: Some(cfg.max_classes),
    };
    let search = find_witness(params, start, ceiling, opts)?;
    match search.found.clone() {
        Some((horizon, class_index, class)) => Ok(Witness {
            horizon,
            class_index,
            class,
            search,
        }),
        None => Err(ExperimentError::NoWitness { ceiling }),
    }
}

/// Witness search, attack and baseline batches, raw records and summary.
///
/// Writes `config.txt`, `witness.jsonl`, `records.<ext>` and
/// `summary.json` under `cfg.out`. Runs are seed-parallel; records come out
/// in seed order, attack runs first.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    let (params, warnings) = prepare(cfg)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let witness = search_witness(cfg, &params)?;
    log::info!(
        "witness: class {} of the E = {} chain, undecided groups {:?}",
        witness.class_index,
        witness.horizon,
        witness.class.undecided_groups()
    );
    let setup = RunSetup {
        params: params.clone(),
        broadcast: cfg.broadcast,
        validate: cfg.validate,
        cap: cfg.rounds_cap,
    };
    let seeds: Vec<u64> = (0..cfg.seeds).map(|i| cfg.seed_base + i).collect();
    let mut records = Vec::new();
    if cfg.scheduler.attack() {
        let attacks: Result<Vec<RunRecord>, AttackError> = seeds
            .par_iter()
            .map(|s| attack_run(&setup, &witness.class, *s).map(|r| r.0))
            .collect();
        records.extend(attacks?);
    }
    if cfg.scheduler.baseline() {
        let inputs = params.layout.expand_inputs(&witness.class.inputs);
        let baselines: Result<Vec<RunRecord>, AttackError> = seeds
            .par_iter()
            .map(|s| baseline_run(&setup, &inputs, *s).map(|r| r.0))
            .collect();
        records.extend(baselines?);
    }
    let oracle = class_fill_probabilities(&params, &witness.class)
        .map_err(|e| ExperimentError::config("adjustment", e.to_string()))?;
    let summary = summarize(
        &records,
        cfg.rounds_cap,
        cfg.scheduler.attack().then_some(oracle.as_slice()),
    );

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_file())?;
    write_chain(
        BufWriter::new(File::create(cfg.out.join("witness.jsonl"))?),
        [ClassRecord::from_class(witness.class_index, &witness.class)],
    )?;
    let records_path = cfg.out.join(format!("records.{}", cfg.format.extension()));
    write_records(
        BufWriter::new(File::create(&records_path)?),
        cfg.format,
        &records,
    )?;
    let summary_path = cfg.out.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(&summary_path, text)?;
    Ok(ExperimentOutput {
        warnings,
        witness,
        records,
        summary,
        oracle,
        records_path,
        summary_path,
    })
}
