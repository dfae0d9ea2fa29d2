//! Experiment configuration, orchestration, statistics and record files.

mod config;
mod experiment;
mod io;
mod stats;

pub use config::{
    is_valid, validate_config, ExperimentConfig, RecordFormat, SchedulerKind, Severity, Violation,
};
pub use experiment::{
    build_protocol, prepare, run_experiment, search_witness, ExperimentError, ExperimentOutput,
    Witness,
};
pub use io::{read_records, write_records};
pub use stats::{summarize, FillStat, InClassStat, SchedulerSummary, SummaryStats};
