//! JSON-lines run log.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::metrics::RoundRecord;
use crate::orchestrator::{FinalSummary, NoiseSummary, PartitionSummary, RunOutput};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunLogEntry {
    ConfigEcho { config: RunConfig },
    PartitionSummary(PartitionSummary),
    NoiseSummary(NoiseSummary),
    RoundRecord(RoundRecord),
    FinalSummary(FinalSummary),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub schema_version: u32,
    #[serde(flatten)]
    pub entry: RunLogEntry,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("unsupported schema_version {found} on line {line}")]
    Schema { line: usize, found: u32 },
    #[error("malformed log: {0}")]
    Structure(String),
}

/// Appends entries one per line.
pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, entry: RunLogEntry) -> std::io::Result<()> {
        let line = LogLine {
            schema_version: SCHEMA_VERSION,
            entry,
        };
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// The whole log of a finished run, in order.
pub fn entries_for(config: &RunConfig, output: &RunOutput) -> Vec<RunLogEntry> {
    let mut entries = vec![
        RunLogEntry::ConfigEcho {
            config: config.clone(),
        },
        RunLogEntry::PartitionSummary(output.partition.clone()),
        RunLogEntry::NoiseSummary(output.noise.clone()),
    ];
    entries.extend(output.rounds.iter().cloned().map(RunLogEntry::RoundRecord));
    entries.push(RunLogEntry::FinalSummary(output.summary.clone()));
    entries
}

/// Parse and check a log: one leading config echo, one trailing summary.
pub fn read_log(input: impl BufRead) -> Result<Vec<RunLogEntry>, LogError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
        if parsed.schema_version != SCHEMA_VERSION {
            return Err(LogError::Schema {
                line: i + 1,
                found: parsed.schema_version,
            });
        }
        entries.push(parsed.entry);
    }
    if entries.is_empty() {
        return Err(LogError::Structure("empty log".into()));
    }
    if !matches!(entries[0], RunLogEntry::ConfigEcho { .. }) {
        return Err(LogError::Structure("first entry is not a config echo".into()));
    }
    if !matches!(entries.last(), Some(RunLogEntry::FinalSummary(_))) {
        return Err(LogError::Structure("last entry is not a final summary".into()));
    }
    let echoes = entries
        .iter()
        .filter(|e| matches!(e, RunLogEntry::ConfigEcho { .. }))
        .count();
    let summaries = entries
        .iter()
        .filter(|e| matches!(e, RunLogEntry::FinalSummary(_)))
        .count();
    if echoes != 1 || summaries != 1 {
        return Err(LogError::Structure(format!(
            "{echoes} config echoes and {summaries} summaries"
        )));
    }
    Ok(entries)
}
