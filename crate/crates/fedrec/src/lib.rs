//! Std companion of `fedrec-core`: experiment config files, metric exports
//! and the `fedrec` command-line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use crate::config::{ExperimentSpec, SweepPair, OUTDIR_ENV};
pub use crate::error::CliError;
pub use crate::experiment::{run, sweep, RunOutcome, SweepOutcome};
