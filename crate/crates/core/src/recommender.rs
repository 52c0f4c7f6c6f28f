//! Collaborator history and per-round selection policies.
//!
//! The recommender policy normalizes a `n × 4` matrix of historical metrics
//! (performance score, loss, selection frequency, total contribution time),
//! factorizes it with two latent components and ranks collaborators by the
//! first one. Even rounds take the top of the ranking, odd rounds the
//! bottom. Without history for at least two collaborators it falls back to a
//! seeded uniform draw.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nnmf::{factorize, rank_by_first_factor, FactorizationResult, Matrix, NnmfOptions};
use crate::params::CollaboratorId;
use crate::rng::{stream_rng, Stream};

/// Column order of the metrics matrix.
pub const METRIC_COLUMNS: [&str; 4] = [
    "performance_score",
    "loss",
    "selection_frequency",
    "total_contribution_time",
];

const LOSS_COLUMN: usize = 1;
const LATENT_COMPONENTS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CollaboratorRecord {
    pub id: CollaboratorId,
    /// In [0, 1], higher is better.
    pub performance_score: f64,
    /// Lower is better.
    pub loss: f64,
    pub selection_frequency: u64,
    /// Simulated seconds.
    pub total_contribution_time: f64,
}

impl CollaboratorRecord {
    fn metrics(&self) -> [f64; 4] {
        [
            self.performance_score,
            self.loss,
            self.selection_frequency as f64,
            self.total_contribution_time,
        ]
    }
}

/// Normalized metrics, one row per collaborator in [`METRIC_COLUMNS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsMatrix {
    pub ids: Vec<CollaboratorId>,
    pub values: Matrix,
}

/// Per-column min–max scaling to [0, 1]; the loss column is then flipped to
/// `1 − x` so that larger is better everywhere. Constant columns map to 0.5.
pub fn normalize_metrics(records: &[CollaboratorRecord]) -> Result<MetricsMatrix> {
    if records.is_empty() {
        return Err(Error::NoCollaborators);
    }
    let raw: Vec<[f64; 4]> = records.iter().map(CollaboratorRecord::metrics).collect();
    let mut values = Matrix::zeros(records.len(), METRIC_COLUMNS.len());
    for col in 0..METRIC_COLUMNS.len() {
        let lo = raw.iter().map(|r| r[col]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r[col]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for (i, r) in raw.iter().enumerate() {
            let x = if span > 0.0 {
                ((r[col] - lo) / span).clamp(0.0, 1.0)
            } else {
                0.5
            };
            values[(i, col)] = if col == LOSS_COLUMN { 1.0 - x } else { x };
        }
    }
    Ok(MetricsMatrix {
        ids: records.iter().map(|r| r.id).collect(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Policy {
    #[default]
    Recommender,
    SlidingWindow,
    Random,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Recommender => "recommender",
            Policy::SlidingWindow => "sliding-window",
            Policy::Random => "random",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recommender" => Ok(Policy::Recommender),
            "sliding-window" => Ok(Policy::SlidingWindow),
            "random" => Ok(Policy::Random),
            other => Err(Error::Config(alloc::format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SelectionMode {
    ExploitTop,
    ExploreBottom,
    FallbackRandom,
    /// Sliding window over a fixed permutation.
    Window,
    /// Uniform draw of the random policy.
    Uniform,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::ExploitTop => "exploit-top",
            SelectionMode::ExploreBottom => "explore-bottom",
            SelectionMode::FallbackRandom => "fallback-random",
            SelectionMode::Window => "window",
            SelectionMode::Uniform => "uniform",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionDecision {
    pub round: u32,
    pub selected_ids: BTreeSet<CollaboratorId>,
    pub policy: Policy,
    pub mode: SelectionMode,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub factorization: Option<FactorizationResult>,
}

/// `ceil(fraction · n)`, capped at `n`.
pub fn selection_count(n: usize, fraction: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::NoCollaborators);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(alloc::format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    // 0.1 · 30 evaluates to 3.0000000000000004; don't let that round up to 4.
    let raw = fraction * n as f64;
    let count = libm::ceil(raw - 1e-9 * raw.max(1.0)) as usize;
    Ok(count.clamp(1, n))
}

/// One metrics observation for a collaborator in a given round.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    pub id: CollaboratorId,
    pub performance_score: f64,
    pub loss: f64,
    /// Simulated seconds the collaborator spent on the round.
    pub duration: f64,
}

/// A stored history line.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StoreEntry {
    pub round: u32,
    pub id: CollaboratorId,
    pub performance_score: f64,
    pub loss: f64,
    #[cfg_attr(feature = "serde", serde(with = "bool_as_int"))]
    pub selected: bool,
    pub duration: f64,
}

#[cfg(feature = "serde")]
mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(alloc::format!(
                "selected must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// Append-only collaborator history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsStore {
    entries: Vec<StoreEntry>,
}

impl MetricsStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<StoreEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[StoreEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends the round's observations. Every selected collaborator needs an
    /// observation; observations of unselected collaborators are stored with
    /// `selected = 0` and do not add contribution time.
    pub fn record_round(
        &mut self,
        round: u32,
        decision: &SelectionDecision,
        observations: &[Observation],
    ) -> Result<()> {
        for id in &decision.selected_ids {
            if !observations.iter().any(|o| o.id == *id) {
                return Err(Error::Shape(alloc::format!(
                    "no observation for selected collaborator {id}"
                )));
            }
        }
        for o in observations {
            if o.duration.is_nan()
                || o.duration < 0.0
                || !o.loss.is_finite()
                || !o.performance_score.is_finite()
            {
                return Err(Error::Shape(alloc::format!(
                    "invalid observation for collaborator {}",
                    o.id
                )));
            }
            self.entries.push(StoreEntry {
                round,
                id: o.id,
                performance_score: o.performance_score,
                loss: o.loss,
                selected: decision.selected_ids.contains(&o.id),
                duration: o.duration,
            });
        }
        Ok(())
    }

    /// Cumulative record per observed collaborator: latest metrics, number of
    /// selections and summed contribution time.
    pub fn records(&self) -> BTreeMap<CollaboratorId, CollaboratorRecord> {
        let mut out: BTreeMap<CollaboratorId, CollaboratorRecord> = BTreeMap::new();
        let mut latest: BTreeMap<CollaboratorId, u32> = BTreeMap::new();
        for e in &self.entries {
            let rec = out.entry(e.id).or_insert(CollaboratorRecord {
                id: e.id,
                performance_score: e.performance_score,
                loss: e.loss,
                selection_frequency: 0,
                total_contribution_time: 0.0,
            });
            let last = latest.entry(e.id).or_insert(e.round);
            if e.round >= *last {
                *last = e.round;
                rec.performance_score = e.performance_score;
                rec.loss = e.loss;
            }
            if e.selected {
                rec.selection_frequency += 1;
                rec.total_contribution_time += e.duration;
            }
        }
        out
    }
}

/// Records for `0..n`; collaborators without history get the column mean of
/// the observed performance score and loss and zero frequency and time.
fn complete_records(
    observed: &BTreeMap<CollaboratorId, CollaboratorRecord>,
    n: usize,
) -> Vec<CollaboratorRecord> {
    let k = observed.len() as f64;
    let mean_score = observed.values().map(|r| r.performance_score).sum::<f64>() / k;
    let mean_loss = observed.values().map(|r| r.loss).sum::<f64>() / k;
    (0..n as u32)
        .map(CollaboratorId)
        .map(|id| {
            observed.get(&id).cloned().unwrap_or(CollaboratorRecord {
                id,
                performance_score: mean_score,
                loss: mean_loss,
                selection_frequency: 0,
                total_contribution_time: 0.0,
            })
        })
        .collect()
}

fn ranked_selection(
    observed: &BTreeMap<CollaboratorId, CollaboratorRecord>,
    round: u32,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<(BTreeSet<CollaboratorId>, SelectionMode, FactorizationResult)> {
    let records = complete_records(observed, n);
    let matrix = normalize_metrics(&records)?;
    let opts = NnmfOptions {
        components: LATENT_COMPONENTS,
        seed,
        ..NnmfOptions::default()
    };
    let fact = factorize(&matrix.values, &opts)?;
    let ranking = rank_by_first_factor(&fact);
    let (mode, picks) = if round.is_multiple_of(2) {
        (SelectionMode::ExploitTop, &ranking[..count])
    } else {
        (SelectionMode::ExploreBottom, &ranking[n - count..])
    };
    let selected = picks.iter().map(|&i| matrix.ids[i]).collect();
    Ok((selected, mode, fact))
}

/// NNMF recommender selection for `round` (1-based).
pub fn select_recommender(
    store: &MetricsStore,
    round: u32,
    n: usize,
    fraction: f64,
    seed: u64,
) -> Result<SelectionDecision> {
    if round == 0 {
        return Err(Error::Config("rounds are numbered from 1".into()));
    }
    let count = selection_count(n, fraction)?;
    let mut observed = store.records();
    observed.retain(|id, _| id.index() < n);

    if observed.len() >= 2 {
        if let Ok((selected_ids, mode, fact)) = ranked_selection(&observed, round, n, count, seed) {
            return Ok(SelectionDecision {
                round,
                selected_ids,
                policy: Policy::Recommender,
                mode,
                factorization: Some(fact),
            });
        }
    }
    let mut decision = select_random(n, count, round, seed)?;
    decision.policy = Policy::Recommender;
    decision.mode = SelectionMode::FallbackRandom;
    Ok(decision)
}

/// Seeded shuffle of `0..n`, fixed for the whole federation.
pub fn window_permutation(n: usize, seed: u64) -> Vec<CollaboratorId> {
    let mut ids: Vec<CollaboratorId> = (0..n as u32).map(CollaboratorId).collect();
    ids.shuffle(&mut stream_rng(seed, Stream::Permutation, 0));
    ids
}

/// Takes `count` entries of `permutation` starting at `(round − 1)·count mod n`,
/// wrapping around.
pub fn select_sliding_window(
    permutation: &[CollaboratorId],
    round: u32,
    count: usize,
) -> Result<SelectionDecision> {
    let n = permutation.len();
    if n == 0 {
        return Err(Error::NoCollaborators);
    }
    if round == 0 || count == 0 || count > n {
        return Err(Error::Config(alloc::format!(
            "window of {count} over {n} collaborators in round {round}"
        )));
    }
    let start = ((round as usize - 1) * count) % n;
    let selected_ids = (0..count).map(|i| permutation[(start + i) % n]).collect();
    Ok(SelectionDecision {
        round,
        selected_ids,
        policy: Policy::SlidingWindow,
        mode: SelectionMode::Window,
        factorization: None,
    })
}

/// Uniform sample of `count` of `0..n` without replacement, fixed by `(seed, round)`.
pub fn select_random(n: usize, count: usize, round: u32, seed: u64) -> Result<SelectionDecision> {
    if n == 0 {
        return Err(Error::NoCollaborators);
    }
    if count == 0 || count > n {
        return Err(Error::Config(alloc::format!("cannot draw {count} of {n}")));
    }
    let mut rng = stream_rng(seed, Stream::Selection, u64::from(round));
    let selected_ids = rand::seq::index::sample(&mut rng, n, count)
        .into_iter()
        .map(|i| CollaboratorId(i as u32))
        .collect();
    Ok(SelectionDecision {
        round,
        selected_ids,
        policy: Policy::Random,
        mode: SelectionMode::Uniform,
        factorization: None,
    })
}
