//! Running experiments and writing their output directories.

use std::fs;
use std::path::{Path, PathBuf};

use fedrec_core::{make_federation, FederationConfig, RoundLog};

use crate::config::{ExperimentSpec, SweepPair};
use crate::error::CliError;
use crate::output::{self, ComparisonRow, Summary};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub logs: Vec<RoundLog>,
    pub summary: Summary,
}

/// Runs one federation and writes `rounds.jsonl`, `summary.json` and
/// `store.jsonl` under `dir`.
pub fn run_into(
    dir: &Path,
    label: &str,
    config: &FederationConfig,
) -> Result<RunOutcome, CliError> {
    let mut federation = make_federation(config)?;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;

    let mut logs = Vec::with_capacity(config.rounds as usize);
    let result = (|| {
        while !federation.is_finished() {
            logs.push(federation.step()?);
        }
        Ok::<_, fedrec_core::Error>(())
    })();
    // completed rounds stay on disk even when a later round fails
    output::write_rounds(&dir.join(output::ROUNDS_FILE), &logs)?;
    output::write_store(&dir.join(output::STORE_FILE), federation.store())?;
    result.map_err(|e| CliError::Runtime(e.to_string()))?;

    let summary = Summary::new(label, config, &logs).expect("at least one round");
    output::write_summary(&dir.join(output::SUMMARY_FILE), &summary)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        logs,
        summary,
    })
}

/// Runs the spec's federation into `<outdir>/<label>`.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome, CliError> {
    spec.validate()?;
    run_into(&spec.run_dir(), &spec.label, &spec.federation)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<ComparisonRow>,
    /// Labels of pairs that failed, with their error.
    pub failures: Vec<(String, CliError)>,
}

impl SweepOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

fn pair_config(base: &FederationConfig, pair: &SweepPair) -> FederationConfig {
    FederationConfig {
        policy: pair.policy,
        aggregator: pair.aggregator,
        ..base.clone()
    }
}

/// Runs every pair with the same seed into `<outdir>/<label>/<pair label>`
/// and writes `<outdir>/<label>/comparison.csv` for the pairs that finished.
/// Pairs run on separate threads.
pub fn sweep(spec: &ExperimentSpec) -> Result<SweepOutcome, CliError> {
    spec.validate()?;
    if spec.sweep.is_empty() {
        return Err(CliError::Config(
            "sweep needs at least one policy:aggregator pair".into(),
        ));
    }
    let root = spec.run_dir();
    fs::create_dir_all(&root)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", root.display())))?;

    let results: Vec<Result<RunOutcome, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = spec
            .sweep
            .iter()
            .map(|pair| {
                let dir = root.join(&pair.label);
                let config = pair_config(&spec.federation, pair);
                s.spawn(move || run_into(&dir, &pair.label, &config))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(CliError::Runtime("worker panicked".into())))
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (pair, result) in spec.sweep.iter().zip(results) {
        match result {
            Ok(outcome) => rows.push(ComparisonRow::from(&outcome.summary)),
            Err(e) => failures.push((pair.label.clone(), e)),
        }
    }
    output::write_comparison(&root.join(output::COMPARISON_FILE), &rows)?;
    Ok(SweepOutcome {
        dir: root,
        rows,
        failures,
    })
}
