use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::config::RecordFormat;
use crate::adversary::RunRecord;

/// Flat CSV row. `decided` holds one character per processor (`0`, `1` or
/// `-`), `per_round_group_success` joins the rounds with `/`.
#[derive(Serialize, Deserialize)]
struct CsvRow {
    seed: u64,
    scheduler: String,
    rounds_used: u32,
    all_good_decided: bool,
    in_class_through_round: Option<u32>,
    escape_round: Option<u32>,
    decided: String,
    per_round_group_success: String,
}

impl From<&RunRecord> for CsvRow {
    fn from(r: &RunRecord) -> Self {
        CsvRow {
            seed: r.seed,
            scheduler: r.scheduler.clone(),
            rounds_used: r.rounds_used,
            all_good_decided: r.all_good_decided,
            in_class_through_round: r.in_class_through_round,
            escape_round: r.escape_round,
            decided: r
                .decided
                .values()
                .map(|d| d.map_or('-', |b| if b == 1 { '1' } else { '0' }))
                .collect(),
            per_round_group_success: r.per_round_group_success.join("/"),
        }
    }
}

impl CsvRow {
    fn into_record(self) -> io::Result<RunRecord> {
        let decided: BTreeMap<u32, Option<u8>> = self
            .decided
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let d = match c {
                    '0' => Ok(Some(0)),
                    '1' => Ok(Some(1)),
                    '-' => Ok(None),
                    _ => Err(io::Error::other(format!("bad decision character {c:?}"))),
                }?;
                Ok((i as u32 + 1, d))
            })
            .collect::<io::Result<_>>()?;
        let per_round_group_success = if self.per_round_group_success.is_empty() {
            Vec::new()
        } else {
            self.per_round_group_success
                .split('/')
                .map(str::to_string)
                .collect()
        };
        Ok(RunRecord {
            seed: self.seed,
            scheduler: self.scheduler,
            rounds_used: self.rounds_used,
            decided,
            all_good_decided: self.all_good_decided,
            in_class_through_round: self.in_class_through_round,
            escape_round: self.escape_round,
            per_round_group_success,
        })
    }
}

pub fn write_records<W: Write>(
    out: W,
    format: RecordFormat,
    records: &[RunRecord],
) -> io::Result<()> {
    match format {
        RecordFormat::JsonLines => {
            let mut out = out;
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()
        }
        RecordFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in records {
                w.serialize(CsvRow::from(r)).map_err(io::Error::other)?;
            }
            w.flush()
        }
    }
}

pub fn read_records<R: BufRead>(input: R, format: RecordFormat) -> io::Result<Vec<RunRecord>> {
    match format {
        RecordFormat::JsonLines => input
            .lines()
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
            .map(|l| serde_json::from_str(&l?).map_err(io::Error::other))
            .collect(),
        RecordFormat::Csv => read_csv(input),
    }
}

fn read_csv<R: Read>(input: R) -> io::Result<Vec<RunRecord>> {
    csv::Reader::from_reader(input)
        .deserialize::<CsvRow>()
        .map(|row| row.map_err(io::Error::other)?.into_record())
        .collect()
}
