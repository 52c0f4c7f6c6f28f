//! Files written per run: `rounds.jsonl`, `summary.json`, `store.jsonl`, and
//! `comparison.csv` for sweeps.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fedrec_core::{FederationConfig, MetricsStore, RoundLog, StoreEntry};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const STORE_FILE: &str = "store.jsonl";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub policy: String,
    pub aggregator: String,
    pub aggregation_mode: String,
    pub seed: u64,
    pub rounds: u32,
    pub n_collaborators: usize,
    pub initial_score: f64,
    pub initial_loss: f64,
    pub final_score: f64,
    pub final_loss: f64,
    pub sim_time: f64,
    pub config: FederationConfig,
}

impl Summary {
    pub fn new(label: &str, config: &FederationConfig, logs: &[RoundLog]) -> Option<Self> {
        let (first, last) = (logs.first()?, logs.last()?);
        Some(Self {
            label: label.to_owned(),
            policy: config.policy.to_string(),
            aggregator: config.aggregator.to_string(),
            aggregation_mode: config.aggregation_mode.to_string(),
            seed: config.seed,
            rounds: logs.len() as u32,
            n_collaborators: config.n_collaborators,
            initial_score: first.score,
            initial_loss: first.loss,
            final_score: last.score,
            final_loss: last.loss,
            sim_time: last.sim_time,
            config: config.clone(),
        })
    }
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| CliError::Runtime(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::Config(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_rounds(path: &Path, logs: &[RoundLog]) -> Result<(), CliError> {
    write_jsonl(path, logs)
}

pub fn read_rounds(path: &Path) -> Result<Vec<RoundLog>, CliError> {
    read_jsonl(path)
}

pub fn write_store(path: &Path, store: &MetricsStore) -> Result<(), CliError> {
    write_jsonl(path, store.entries())
}

pub fn read_store(path: &Path) -> Result<MetricsStore, CliError> {
    Ok(MetricsStore::from_entries(read_jsonl::<StoreEntry>(path)?))
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Summary, CliError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// One row of a sweep comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub policy: String,
    pub aggregator: String,
    pub final_score: f64,
    pub final_loss: f64,
    pub sim_time: f64,
}

impl From<&Summary> for ComparisonRow {
    fn from(s: &Summary) -> Self {
        Self {
            label: s.label.clone(),
            policy: s.policy.clone(),
            aggregator: s.aggregator.clone(),
            final_score: s.final_score,
            final_loss: s.final_loss,
            sim_time: s.sim_time,
        }
    }
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_comparison(path: &Path) -> Result<Vec<ComparisonRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
