//! JSON-lines run log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::MetricReport;
use crate::net::NetConfig;

use super::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub total: f64,
    /// Unweighted loss terms.
    pub components: BTreeMap<String, f64>,
    pub weights: BTreeMap<String, f64>,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl StepRecord {
    pub fn weighted_sum(&self) -> f64 {
        self.components.iter().map(|(k, v)| v * self.weights.get(k).copied().unwrap_or(0.0)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEntry {
    Start { config_hash: String, net_config: NetConfig, train_config: TrainConfig },
    Step(StepRecord),
    Eval { step: u64, report: MetricReport },
}

impl LogEntry {
    pub fn step(&self) -> u64 {
        match self {
            LogEntry::Start { .. } => 0,
            LogEntry::Step(r) => r.step,
            LogEntry::Eval { step, .. } => *step,
        }
    }
}

/// Appends entries to `log.jsonl` as training progresses.
pub struct RunLog {
    path: PathBuf,
    file: File,
    entries: Vec<LogEntry>,
}

impl RunLog {
    pub fn create(path: impl AsRef<Path>, start: LogEntry) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        let mut log = Self { path, file, entries: Vec::new() };
        log.push(start)?;
        Ok(log)
    }

    /// Reopens a log, dropping entries recorded after `step`. Kept lines are
    /// preserved byte for byte.
    pub fn resume(path: impl AsRef<Path>, step: u64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut text = String::new();
        let mut entries = Vec::new();
        for line in fs::read_to_string(&path)?.lines().filter(|l| !l.trim().is_empty()) {
            let e: LogEntry = serde_json::from_str(line)?;
            if matches!(e, LogEntry::Start { .. }) || e.step() <= step {
                text.push_str(line);
                text.push('\n');
                entries.push(e);
            }
        }
        fs::write(&path, text)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Self { path, file, entries })
    }

    pub fn push(&mut self, entry: LogEntry) -> Result<()> {
        writeln!(self.file, "{}", serde_json::to_string(&entry)?)?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn into_entries(self) -> Vec<LogEntry> {
        self.entries
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
