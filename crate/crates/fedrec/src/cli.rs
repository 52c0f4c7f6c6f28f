//! Command-line front end. Exit codes: 0 success, 1 config error, 2 runtime error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fedrec_core::{Aggregator, HarmonicMode, Policy};

use crate::config::{ExperimentSpec, SweepPair};
use crate::error::CliError;
use crate::experiment;

#[derive(Debug, Parser)]
#[command(
    name = "fedrec",
    version,
    about = "Simulate federated training with recommender-driven client selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one federation and write its metrics.
    Run(Overrides),
    /// Run several policy/aggregator pairs with the same seed and compare them.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// `policy:aggregator`, repeatable; replaces the config file's [[sweep]] list.
        #[arg(long = "pair", value_name = "POLICY:AGGREGATOR")]
        pairs: Vec<String>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long)]
    pub collaborators: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    /// recommender | sliding-window | random
    #[arg(long)]
    pub policy: Option<String>,
    /// hsimagg | simagg | fedavg
    #[arg(long)]
    pub aggregator: Option<String>,
    /// standard-harmonic | literal-eq6
    #[arg(long = "agg-mode")]
    pub agg_mode: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub heterogeneity: Option<f64>,
    /// Output directory (default: $FEDREC_OUTDIR, then ./runs).
    #[arg(long)]
    pub outdir: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    /// Train the selected collaborators of a round in parallel.
    #[arg(long)]
    pub parallel: bool,
}

impl Overrides {
    /// Loads the config file (if any) and applies the flags on top.
    pub fn resolve(&self) -> Result<ExperimentSpec, CliError> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::from_file(path)?,
            None => ExperimentSpec::default(),
        };
        let f = &mut spec.federation;
        let flag = |name: &str, e: fedrec_core::Error| CliError::Config(format!("--{name}: {e}"));
        if let Some(v) = self.seed {
            f.seed = v;
        }
        if let Some(v) = self.rounds {
            f.rounds = v;
        }
        if let Some(v) = self.collaborators {
            f.n_collaborators = v;
        }
        if let Some(v) = self.fraction {
            f.fraction = v;
        }
        if let Some(v) = &self.policy {
            f.policy = v.parse::<Policy>().map_err(|e| flag("policy", e))?;
        }
        if let Some(v) = &self.aggregator {
            f.aggregator = v.parse::<Aggregator>().map_err(|e| flag("aggregator", e))?;
        }
        if let Some(v) = &self.agg_mode {
            f.aggregation_mode = v.parse::<HarmonicMode>().map_err(|e| flag("agg-mode", e))?;
        }
        if let Some(v) = self.epsilon {
            f.epsilon = v;
        }
        if let Some(v) = self.heterogeneity {
            f.task.heterogeneity = v;
        }
        if self.parallel {
            f.parallel = true;
        }
        if let Some(v) = &self.outdir {
            spec.outdir = v.clone();
        }
        if let Some(v) = &self.label {
            spec.label = v.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(overrides) => {
            let spec = overrides.resolve()?;
            let outcome = experiment::run(&spec)?;
            let s = &outcome.summary;
            println!(
                "{}: {} rounds, final score {} loss {} (sim time {})",
                s.label, s.rounds, s.final_score, s.final_loss, s.sim_time
            );
            println!("wrote {}", outcome.dir.display());
            Ok(())
        }
        Command::Sweep { overrides, pairs } => {
            let mut spec = overrides.resolve()?;
            if !pairs.is_empty() {
                spec.sweep = pairs
                    .iter()
                    .map(|p| p.parse::<SweepPair>())
                    .collect::<Result<_, _>>()?;
            }
            if spec.sweep.is_empty() {
                spec.sweep.push(SweepPair::new(
                    spec.federation.policy,
                    spec.federation.aggregator,
                ));
            }
            let outcome = experiment::sweep(&spec)?;
            for row in &outcome.rows {
                println!(
                    "{}: final score {} loss {} (sim time {})",
                    row.label, row.final_score, row.final_loss, row.sim_time
                );
            }
            println!("wrote {}", outcome.dir.display());
            match outcome.failures.first() {
                None => Ok(()),
                Some(_) => {
                    let msg = outcome
                        .failures
                        .iter()
                        .map(|(label, e)| format!("pair {label} failed: {e}"))
                        .collect::<Vec<_>>()
                        .join("; ");
                    Err(CliError::Runtime(msg))
                }
            }
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
