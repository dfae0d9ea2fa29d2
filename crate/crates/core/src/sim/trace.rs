use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Event;

/// Ordered log of the events of an execution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<Event>,
}

/// One line of the exported trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step_index: u64,
    pub processor: u32,
    pub delivered_message_id: Option<String>,
    pub randomness_outcome: Option<Vec<u32>>,
}

impl Trace {
    pub fn new(events: Vec<Event>) -> Self {
        Trace { events }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = TraceRecord> + '_ {
        self.events.iter().enumerate().map(|(i, e)| TraceRecord {
            step_index: i as u64,
            processor: e.processor.index(),
            delivered_message_id: e.received.map(|k| k.to_string()),
            randomness_outcome: e.local_randomness.clone(),
        })
    }

    /// Writes one JSON record per line.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

pub fn read_ndjson<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    input
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?).map_err(io::Error::other))
        .collect()
}
