//! Experiment specification: TOML config file plus command-line overrides.
//!
//! ```toml
//! label = "baseline"
//! outdir = "runs"
//!
//! n_collaborators = 33
//! rounds = 20
//! fraction = 0.2
//! learning_rate = 0.01
//! epochs_per_round = 1
//! epsilon = 1e-5
//! policy = "recommender"          # recommender | sliding-window | random
//! aggregator = "hsimagg"          # hsimagg | simagg | fedavg
//! aggregation_mode = "standard-harmonic"   # or literal-eq6
//! seed = 42
//! parallel = false
//!
//! [task]
//! dimension = 10
//! samples_per_collaborator = 50
//! sample_jitter = 0.5
//! heterogeneity = 0.5
//! noise_std = 0.1
//! validation_size = 500
//! shared_client_data = false
//! min_speed = 5.0
//! max_speed = 20.0
//! comm_overhead = 1.0
//!
//! [[sweep]]
//! policy = "recommender"
//! aggregator = "hsimagg"
//! label = "rec-hsim"              # optional, defaults to "<policy>-<aggregator>"
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedrec_core::{Aggregator, FederationConfig, HarmonicMode, Policy};
use serde::Deserialize;
use toml::Spanned;

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUTDIR_ENV: &str = "FEDREC_OUTDIR";
pub const DEFAULT_OUTDIR: &str = "runs";
pub const DEFAULT_LABEL: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepPair {
    pub policy: Policy,
    pub aggregator: Aggregator,
    pub label: String,
}

impl SweepPair {
    pub fn new(policy: Policy, aggregator: Aggregator) -> Self {
        Self {
            label: format!("{policy}-{aggregator}"),
            policy,
            aggregator,
        }
    }
}

impl FromStr for SweepPair {
    type Err = CliError;

    /// `policy:aggregator`, e.g. `recommender:hsimagg`.
    fn from_str(s: &str) -> Result<Self, CliError> {
        let (p, a) = s.split_once(':').ok_or_else(|| {
            CliError::Config(format!("pair `{s}` is not of the form policy:aggregator"))
        })?;
        Ok(Self::new(p.parse()?, a.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub federation: FederationConfig,
    pub outdir: PathBuf,
    pub label: String,
    pub sweep: Vec<SweepPair>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            federation: FederationConfig::default(),
            outdir: default_outdir(),
            label: DEFAULT_LABEL.to_owned(),
            sweep: Vec::new(),
        }
    }
}

impl ExperimentSpec {
    pub fn run_dir(&self) -> PathBuf {
        self.outdir.join(&self.label)
    }

    /// Checks everything the config file parser could not see.
    pub fn validate(&self) -> Result<(), CliError> {
        self.federation.validate()?;
        check_label(&self.label)?;
        let mut seen = BTreeSet::new();
        for pair in &self.sweep {
            check_label(&pair.label)?;
            if !seen.insert(pair.label.as_str()) {
                return Err(CliError::Config(format!(
                    "duplicate sweep label `{}`",
                    pair.label
                )));
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}:{msg}", path.display())),
            other => other,
        })
    }

    /// Parses a config document. Error messages start with `line N:`.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of(text, s.start));
            CliError::Config(format!("line {line}: {}", e.message()))
        })?;
        raw.into_spec(text)
    }
}

/// `$FEDREC_OUTDIR` if set and non-empty, otherwise `runs`.
pub fn default_outdir() -> PathBuf {
    match std::env::var_os(OUTDIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(DEFAULT_OUTDIR),
    }
}

fn check_label(label: &str) -> Result<(), CliError> {
    if label.is_empty() || label.contains(['/', '\\']) || label == "." || label == ".." {
        return Err(CliError::Config(format!("invalid label `{label}`")));
    }
    Ok(())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    label: Option<Spanned<String>>,
    outdir: Option<Spanned<String>>,
    n_collaborators: Option<Spanned<i64>>,
    rounds: Option<Spanned<i64>>,
    fraction: Option<Spanned<f64>>,
    learning_rate: Option<Spanned<f64>>,
    epochs_per_round: Option<Spanned<i64>>,
    epsilon: Option<Spanned<f64>>,
    policy: Option<Spanned<String>>,
    aggregator: Option<Spanned<String>>,
    aggregation_mode: Option<Spanned<String>>,
    seed: Option<Spanned<i64>>,
    parallel: Option<bool>,
    task: Option<RawTask>,
    sweep: Option<Vec<RawPair>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    dimension: Option<Spanned<i64>>,
    samples_per_collaborator: Option<Spanned<i64>>,
    sample_jitter: Option<Spanned<f64>>,
    heterogeneity: Option<Spanned<f64>>,
    noise_std: Option<Spanned<f64>>,
    validation_size: Option<Spanned<i64>>,
    shared_client_data: Option<bool>,
    min_speed: Option<Spanned<f64>>,
    max_speed: Option<Spanned<f64>>,
    comm_overhead: Option<Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    policy: Spanned<String>,
    aggregator: Spanned<String>,
    label: Option<Spanned<String>>,
}

/// Reads spanned values and turns validation failures into line-numbered errors.
struct Reader<'a> {
    text: &'a str,
}

impl Reader<'_> {
    fn fail<T>(&self, at: &Spanned<T>, msg: impl std::fmt::Display) -> CliError {
        CliError::Config(format!(
            "line {}: {msg}",
            line_of(self.text, at.span().start)
        ))
    }

    fn count<T: TryFrom<i64>>(&self, v: &Spanned<i64>, key: &str, min: i64) -> Result<T, CliError> {
        let x = *v.get_ref();
        if x < min {
            return Err(self.fail(v, format!("{key} must be at least {min}, got {x}")));
        }
        T::try_from(x).map_err(|_| self.fail(v, format!("{key} is too large")))
    }

    fn real(
        &self,
        v: &Spanned<f64>,
        key: &str,
        ok: impl Fn(f64) -> bool,
        rule: &str,
    ) -> Result<f64, CliError> {
        let x = *v.get_ref();
        if !x.is_finite() || !ok(x) {
            return Err(self.fail(v, format!("{key} {rule}, got {x}")));
        }
        Ok(x)
    }

    fn parse<T>(&self, v: &Spanned<String>) -> Result<T, CliError>
    where
        T: FromStr<Err = fedrec_core::Error>,
    {
        v.get_ref().parse().map_err(|e| self.fail(v, e))
    }
}

impl RawSpec {
    fn into_spec(self, text: &str) -> Result<ExperimentSpec, CliError> {
        let r = Reader { text };
        let mut spec = ExperimentSpec::default();
        let f = &mut spec.federation;

        if let Some(v) = &self.label {
            check_label(v.get_ref()).map_err(|e| r.fail(v, e))?;
            spec.label = v.get_ref().clone();
        }
        if let Some(v) = self.outdir {
            spec.outdir = PathBuf::from(v.into_inner());
        }
        if let Some(v) = &self.n_collaborators {
            f.n_collaborators = r.count(v, "n_collaborators", 1)?;
        }
        if let Some(v) = &self.rounds {
            f.rounds = r.count(v, "rounds", 1)?;
        }
        if let Some(v) = &self.fraction {
            f.fraction = r.real(v, "fraction", |x| x > 0.0 && x <= 1.0, "must lie in (0, 1]")?;
        }
        if let Some(v) = &self.learning_rate {
            f.learning_rate = r.real(v, "learning_rate", |x| x >= 0.0, "must be nonnegative")?;
        }
        if let Some(v) = &self.epochs_per_round {
            f.epochs_per_round = r.count(v, "epochs_per_round", 1)?;
        }
        if let Some(v) = &self.epsilon {
            f.epsilon = r.real(v, "epsilon", |x| x > 0.0, "must be positive")?;
        }
        if let Some(v) = &self.policy {
            f.policy = r.parse(v)?;
        }
        if let Some(v) = &self.aggregator {
            f.aggregator = r.parse(v)?;
        }
        if let Some(v) = &self.aggregation_mode {
            f.aggregation_mode = r.parse::<HarmonicMode>(v)?;
        }
        if let Some(v) = &self.seed {
            f.seed = r.count(v, "seed", 0)?;
        }
        if let Some(v) = self.parallel {
            f.parallel = v;
        }

        if let Some(task) = &self.task {
            let t = &mut f.task;
            if let Some(v) = &task.dimension {
                t.dimension = r.count(v, "dimension", 1)?;
            }
            if let Some(v) = &task.samples_per_collaborator {
                t.samples_per_collaborator = r.count(v, "samples_per_collaborator", 1)?;
            }
            if let Some(v) = &task.sample_jitter {
                t.sample_jitter = r.real(
                    v,
                    "sample_jitter",
                    |x| (0.0..1.0).contains(&x),
                    "must lie in [0, 1)",
                )?;
            }
            if let Some(v) = &task.heterogeneity {
                t.heterogeneity =
                    r.real(v, "heterogeneity", |x| x >= 0.0, "must be nonnegative")?;
            }
            if let Some(v) = &task.noise_std {
                t.noise_std = r.real(v, "noise_std", |x| x >= 0.0, "must be nonnegative")?;
            }
            if let Some(v) = &task.validation_size {
                t.validation_size = r.count(v, "validation_size", 1)?;
            }
            if let Some(v) = task.shared_client_data {
                t.shared_client_data = v;
            }
            if let Some(v) = &task.min_speed {
                t.min_speed = r.real(v, "min_speed", |x| x > 0.0, "must be positive")?;
            }
            if let Some(v) = &task.max_speed {
                let lo = t.min_speed;
                t.max_speed = r.real(v, "max_speed", |x| x >= lo, "must be at least min_speed")?;
            }
            if let Some(v) = &task.comm_overhead {
                t.comm_overhead =
                    r.real(v, "comm_overhead", |x| x >= 0.0, "must be nonnegative")?;
            }
        }

        let mut seen = BTreeSet::new();
        for raw in self.sweep.unwrap_or_default() {
            let mut pair = SweepPair::new(r.parse(&raw.policy)?, r.parse(&raw.aggregator)?);
            if let Some(label) = &raw.label {
                check_label(label.get_ref()).map_err(|e| r.fail(label, e))?;
                pair.label = label.get_ref().clone();
            }
            if !seen.insert(pair.label.clone()) {
                return Err(r.fail(
                    &raw.policy,
                    format!("duplicate sweep label `{}`", pair.label),
                ));
            }
            spec.sweep.push(pair);
        }

        spec.validate()?;
        Ok(spec)
    }
}
