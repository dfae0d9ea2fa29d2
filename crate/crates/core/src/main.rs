use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use asyncba::adversary::{attack_run, baseline_run, RunSetup};
use asyncba::dist::{
    adjust_bounded, empirical_tail, parse_rational, tail_bound, to_f64, ChoiceDistribution,
    TailBoundParams,
};
use asyncba::harness::{prepare, run_experiment, ExperimentConfig, ExperimentError};
use asyncba::lockstep::{
    chain_generator, read_chain, verify_chain, write_chain, ClassRecord, VerifyError, VerifyOptions,
};
use asyncba::Payload;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "asyncba",
    version,
    about = "Lockstep adversary for fully symmetric round protocols"
)]
struct Cli {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Witness search, attack and baseline batches; writes records and summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also export the event trace of the first seed's run as NDJSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Generates the chain of lockstep classes and writes it as NDJSON.
    Chain {
        #[command(flatten)]
        common: Common,
    },
    /// Adjusts a distribution to multiples of 1/t and reports its tail bound.
    Dist {
        #[command(flatten)]
        common: Common,
        /// Masses, e.g. `0.7,0.3` or `a=0.7,b=0.3`.
        #[arg(long)]
        masses: String,
        /// Monte Carlo trials for the empirical tail; 0 skips it.
        #[arg(long, default_value_t = 0)]
        trials: u64,
    },
    /// Checks a chain file against properties 1 to 4.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Chain file written by `chain`.
        #[arg(long)]
        chain: PathBuf,
    },
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long = "R")]
    r: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    scheduler: Option<String>,
    #[arg(long)]
    broadcast: Option<String>,
    #[arg(long)]
    validate: Option<String>,
    #[arg(long = "rounds-cap")]
    rounds_cap: Option<String>,
    /// Chain horizon `E`, or `auto` to search by doubling.
    #[arg(long = "chain-rounds")]
    chain_rounds: Option<String>,
    #[arg(long = "witness-ceiling")]
    witness_ceiling: Option<String>,
    #[arg(long = "max-classes")]
    max_classes: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long = "seed-base")]
    seed_base: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// `json-lines` or `csv`.
    #[arg(long)]
    format: Option<String>,
}

impl Common {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        [
            ("n", &self.n),
            ("t", &self.t),
            ("R", &self.r),
            ("eps", &self.eps),
            ("protocol", &self.protocol),
            ("scheduler", &self.scheduler),
            ("broadcast", &self.broadcast),
            ("validate", &self.validate),
            ("rounds-cap", &self.rounds_cap),
            ("chain-rounds", &self.chain_rounds),
            ("witness-ceiling", &self.witness_ceiling),
            ("max-classes", &self.max_classes),
            ("seeds", &self.seeds),
            ("seed-base", &self.seed_base),
            ("out", &self.out),
            ("format", &self.format),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }
}

enum Failure {
    Config(String),
    Property(String),
    Other(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::ConfigInvalid(_) => Failure::Config(e.to_string()),
            ExperimentError::Verify(v) => v.into(),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        if e.is_property_violation() {
            Failure::Property(e.to_string())
        } else {
            Failure::Other(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn load_config(file: Option<&PathBuf>, common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_file(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    }
    for (k, v) in common.pairs() {
        cfg.set(k, v)
            .map_err(|e| Failure::Config(format!("--{k}: {e}")))?;
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn cmd_run(cfg: &ExperimentConfig, trace: Option<&PathBuf>) -> Result<(), Failure> {
    let out = run_experiment(cfg)?;
    if let Some(path) = trace {
        let setup = RunSetup {
            params: prepare(cfg)?.0,
            broadcast: cfg.broadcast,
            validate: cfg.validate,
            cap: cfg.rounds_cap,
        };
        let (_, tr) = if cfg.scheduler.attack() {
            attack_run(&setup, &out.witness.class, cfg.seed_base)
        } else {
            baseline_run(
                &setup,
                &setup.params.layout.expand_inputs(&out.witness.class.inputs),
                cfg.seed_base,
            )
        }
        .map_err(|e| Failure::Other(e.to_string()))?;
        tr.write_ndjson(BufWriter::new(File::create(path)?))?;
    }
    let s = &out.summary;
    let by: serde_json::Map<String, serde_json::Value> = s
        .schedulers
        .iter()
        .map(|(k, v)| {
            (
                k.clone(),
                json!({"runs": v.runs, "mean_rounds": v.mean_rounds, "undecided_at_cap": v.undecided_at_cap}),
            )
        })
        .collect();
    print_json(&json!({
        "witness": {
            "horizon": out.witness.horizon,
            "class_index": out.witness.class_index,
            "inputs_per_group": out.witness.class.inputs,
            "undecided_groups": out.witness.class.undecided_groups().iter().map(|g| g + 1).collect::<Vec<_>>(),
        },
        "schedulers": by,
        "never_escaped": s.never_escaped,
        "records": out.records_path,
        "summary": out.summary_path,
    }));
    Ok(())
}

fn chain_horizon(cfg: &ExperimentConfig) -> usize {
    cfg.chain_rounds.unwrap_or(4)
}

fn cmd_chain(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let (params, _) = prepare(cfg)?;
    let e = chain_horizon(cfg);
    let gen = chain_generator(params.clone(), e).map_err(|e| Failure::Config(e.to_string()))?;
    let path = if cfg.out.extension().is_some() {
        cfg.out.clone()
    } else {
        fs::create_dir_all(&cfg.out)?;
        cfg.out.join("chain.jsonl")
    };
    let mut classes = Vec::new();
    let mut err = None;
    for (i, c) in gen.enumerate() {
        if i >= cfg.max_classes {
            err = Some(Failure::Other(format!(
                "chain longer than {} classes",
                cfg.max_classes
            )));
            break;
        }
        match c {
            Ok(c) => classes.push(c),
            Err(e) => {
                err = Some(Failure::Other(e.to_string()));
                break;
            }
        }
    }
    if let Some(e) = err {
        return Err(e);
    }
    let report = verify_chain(
        classes.iter().cloned().map(Ok),
        &params,
        VerifyOptions {
            broadcast: cfg.broadcast,
            validate: cfg.validate,
            ..Default::default()
        },
    )?;
    write_chain(
        BufWriter::new(File::create(&path)?),
        classes
            .iter()
            .enumerate()
            .map(|(i, c)| ClassRecord::from_class(i, c)),
    )?;
    print_json(&json!({"chain": path, "horizon": e, "report": report}));
    Ok(())
}

fn cmd_verify(cfg: &ExperimentConfig, chain: &PathBuf) -> Result<(), Failure> {
    let (params, _) = prepare(cfg)?;
    let mut classes = Vec::new();
    for rec in read_chain(BufReader::new(File::open(chain)?)) {
        let rec = rec?;
        let class = rec.to_class(&params).map_err(|detail| {
            Failure::Property(
                VerifyError::PropertyViolation {
                    property: 1,
                    class_index: rec.class_index,
                    at: None,
                    detail,
                }
                .to_string(),
            )
        })?;
        classes.push(class);
    }
    let report = verify_chain(
        classes.into_iter().map(Ok),
        &params,
        VerifyOptions {
            broadcast: cfg.broadcast,
            validate: cfg.validate,
            ..Default::default()
        },
    )?;
    print_json(&json!({"chain": chain, "report": report}));
    Ok(())
}

fn parse_masses(s: &str) -> Result<Vec<(Payload, f64)>, Failure> {
    s.split(',')
        .enumerate()
        .map(|(i, part)| {
            let part = part.trim();
            let (name, mass) = match part.split_once('=') {
                Some((a, b)) => (a.trim().as_bytes().to_vec(), b.trim()),
                None => (format!("m{i}").into_bytes(), part),
            };
            let mass = parse_rational(mass).map_err(|e| Failure::Config(e.to_string()))?;
            let payload = Payload::new(name).map_err(|e| Failure::Config(e.to_string()))?;
            Ok((payload, to_f64(mass)))
        })
        .collect()
}

fn cmd_dist(cfg: &ExperimentConfig, masses: &str, trials: u64) -> Result<(), Failure> {
    let d = ChoiceDistribution::new(parse_masses(masses)?)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let adj = adjust_bounded(&d.positive_part(), cfg.t as u64, cfg.eps(), cfg.r)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let entries: Vec<_> = adj
        .support()
        .iter()
        .zip(adj.counts())
        .map(|(p, c)| json!({"payload": p.to_string(), "rho": d.mass(p), "count": c, "rho_tilde": format!("{c}/{}", adj.t())}))
        .collect();
    let mut out = json!({
        "t": adj.t(),
        "eps": cfg.eps().to_string(),
        "star": adj.star().to_string(),
        "adjusted": entries,
    });
    match TailBoundParams::new(cfg.n as u64, cfg.t as u64, cfg.r, cfg.eps()) {
        Ok(p) => {
            out["tail_bound"] = json!({
                "delta": p.delta().to_string(),
                "delta_prime": p.delta_prime(),
                "bound": tail_bound(&p),
                "round_failure_bound": p.round_failure_bound(),
                "horizon": p.horizon(),
            });
        }
        Err(e) => out["tail_bound"] = json!({"inapplicable": e.to_string()}),
    }
    if trials > 0 {
        let tail = empirical_tail(&d, &adj, cfg.c(), trials, cfg.seed_base)
            .map_err(|e| Failure::Config(e.to_string()))?;
        out["empirical_tail"] = tail
            .iter()
            .map(|(p, f)| json!({"payload": p.to_string(), "frequency": f}))
            .collect();
    }
    print_json(&out);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = (|| match &cli.command {
        Command::Run { common, trace } => {
            cmd_run(&load_config(cli.config.as_ref(), common)?, trace.as_ref())
        }
        Command::Chain { common } => cmd_chain(&load_config(cli.config.as_ref(), common)?),
        Command::Dist {
            common,
            masses,
            trials,
        } => cmd_dist(&load_config(cli.config.as_ref(), common)?, masses, *trials),
        Command::Verify { common, chain } => {
            cmd_verify(&load_config(cli.config.as_ref(), common)?, chain)
        }
    })();
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration invalid: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Property(m)) => {
            eprintln!("property violation: {m}");
            ExitCode::from(EXIT_PROPERTY)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
