//! Server-side aggregation of collaborator parameter vectors.
//!
//! HSimAgg weighs each collaborator by its inverse distance to the
//! unweighted average and by its share of training samples, then merges the
//! parameters with a weighted harmonic mean. Arithmetic SimAgg and
//! sample-weighted FedAvg are provided as baselines.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{mean, CollaboratorId, Distance, ParameterVector};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Tolerance on Σw = 1 accepted by [`harmonic_aggregate`].
const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

pub type WeightMap = BTreeMap<CollaboratorId, f64>;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CollaboratorUpdate {
    pub id: CollaboratorId,
    pub params: ParameterVector,
    /// Number of local training examples, N_c ≥ 1.
    pub sample_count: u64,
}

impl CollaboratorUpdate {
    pub fn new(id: CollaboratorId, params: ParameterVector, sample_count: u64) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::ZeroSamples(id.0));
        }
        Ok(Self {
            id,
            params,
            sample_count,
        })
    }
}

/// Every weight family computed during one aggregation, keyed by collaborator.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregationWeights {
    /// u_c, inverse-distance similarity weights.
    pub similarity: WeightMap,
    /// v_c, sample-size weights.
    pub sample: WeightMap,
    /// The weights actually applied to the parameters.
    pub combined: WeightMap,
    pub epsilon: f64,
}

/// How [`harmonic_aggregate`] merges the coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HarmonicMode {
    /// Weighted harmonic mean `1 / Σ w_i / p_i`.
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "standard-harmonic"))]
    Standard,
    /// The harmonic mean multiplied by the weighted arithmetic mean. Not
    /// idempotent: identical inputs `p` give `p²`.
    #[cfg_attr(feature = "serde", serde(rename = "literal-eq6"))]
    LiteralEq6,
}

impl HarmonicMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HarmonicMode::Standard => "standard-harmonic",
            HarmonicMode::LiteralEq6 => "literal-eq6",
        }
    }
}

impl fmt::Display for HarmonicMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HarmonicMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard-harmonic" | "standard" => Ok(HarmonicMode::Standard),
            "literal-eq6" | "literal" => Ok(HarmonicMode::LiteralEq6),
            other => Err(Error::Config(alloc::format!(
                "unknown aggregation mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Aggregator {
    #[default]
    HSimAgg,
    SimAgg,
    FedAvg,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::HSimAgg => "hsimagg",
            Aggregator::SimAgg => "simagg",
            Aggregator::FedAvg => "fedavg",
        }
    }

    /// Runs the aggregator and reports the weights behind it.
    ///
    /// Similarity and sample weights are always reported; `combined` holds
    /// whatever was applied (the sample weights for FedAvg).
    pub fn aggregate(
        self,
        updates: &[CollaboratorUpdate],
        epsilon: f64,
        mode: HarmonicMode,
    ) -> Result<(ParameterVector, AggregationWeights)> {
        match self {
            Aggregator::HSimAgg => hsimagg(updates, epsilon, mode),
            Aggregator::SimAgg => {
                let weights = hsim_weights(updates, epsilon)?;
                let params = weighted_arithmetic(updates, &weights.combined)?;
                Ok((params, weights))
            }
            Aggregator::FedAvg => {
                let similarity = similarity_weights(updates, epsilon)?;
                let sample = sample_weights(updates)?;
                let params = weighted_arithmetic(updates, &sample)?;
                let weights = AggregationWeights {
                    similarity,
                    combined: sample.clone(),
                    sample,
                    epsilon,
                };
                Ok((params, weights))
            }
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hsimagg" => Ok(Aggregator::HSimAgg),
            "simagg" => Ok(Aggregator::SimAgg),
            "fedavg" => Ok(Aggregator::FedAvg),
            other => Err(Error::Config(alloc::format!(
                "unknown aggregator `{other}`"
            ))),
        }
    }
}

/// Checks non-emptiness, equal lengths and unique ids; returns the dimension.
fn check_updates(updates: &[CollaboratorUpdate]) -> Result<usize> {
    let first = updates.first().ok_or(Error::NoCollaborators)?;
    let dim = first.params.len();
    let mut seen = alloc::collections::BTreeSet::new();
    for u in updates {
        u.params.check_len(dim)?;
        if u.sample_count == 0 {
            return Err(Error::ZeroSamples(u.id.0));
        }
        if !seen.insert(u.id) {
            return Err(Error::DuplicateId(u.id.0));
        }
    }
    Ok(dim)
}

/// Inverse-distance similarity weights u_c with the L1 distance.
pub fn similarity_weights(updates: &[CollaboratorUpdate], epsilon: f64) -> Result<WeightMap> {
    similarity_weights_with(updates, epsilon, Distance::L1)
}

/// `sim_c = Σ_i d_i / (d_c + ε)`, `u_c = sim_c / Σ_i sim_i`, where `d_c` is
/// the distance of collaborator `c` from the unweighted mean. When every
/// distance is zero the weights are uniform.
pub fn similarity_weights_with(
    updates: &[CollaboratorUpdate],
    epsilon: f64,
    distance: Distance,
) -> Result<WeightMap> {
    check_updates(updates)?;
    let center = mean(updates.iter().map(|u| &u.params))?;
    let distances = updates
        .iter()
        .map(|u| distance.eval(&u.params, &center))
        .collect::<Result<Vec<_>>>()?;
    let u = weights_from_distances(&distances, epsilon);
    Ok(updates.iter().map(|x| x.id).zip(u).collect())
}

/// Normalized inverse distances; uniform when every distance is zero.
fn weights_from_distances(distances: &[f64], epsilon: f64) -> Vec<f64> {
    let total: f64 = distances.iter().sum();
    let sims: Vec<f64> = distances.iter().map(|d| total / (d + epsilon)).collect();
    let sim_total: f64 = sims.iter().sum();
    if sim_total <= 0.0 {
        return alloc::vec![1.0 / distances.len() as f64; distances.len()];
    }
    sims.iter().map(|s| s / sim_total).collect()
}

/// `v_c = N_c / Σ_i N_i`
pub fn sample_weights(updates: &[CollaboratorUpdate]) -> Result<WeightMap> {
    check_updates(updates)?;
    let total: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
    Ok(updates
        .iter()
        .map(|u| (u.id, u.sample_count as f64 / total))
        .collect())
}

/// `w_c = (u_c + v_c) / Σ_i (u_i + v_i)`
pub fn combine_weights(u: &WeightMap, v: &WeightMap) -> Result<WeightMap> {
    if u.len() != v.len() || u.keys().zip(v.keys()).any(|(a, b)| a != b) {
        return Err(Error::KeyMismatch);
    }
    if u.is_empty() {
        return Err(Error::NoCollaborators);
    }
    let total: f64 = u.values().zip(v.values()).map(|(a, b)| a + b).sum();
    Ok(u.iter()
        .zip(v.values())
        .map(|((id, a), b)| (*id, (a + b) / total))
        .collect())
}

/// Looks up each update's weight and checks that they sum to one.
fn aligned_weights(updates: &[CollaboratorUpdate], w: &WeightMap) -> Result<Vec<f64>> {
    check_updates(updates)?;
    if w.len() != updates.len() {
        return Err(Error::KeyMismatch);
    }
    let weights = updates
        .iter()
        .map(|u| w.get(&u.id).copied().ok_or(Error::KeyMismatch))
        .collect::<Result<Vec<_>>>()?;
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::WeightsNotNormalized { sum });
    }
    Ok(weights)
}

fn weighted_arithmetic(updates: &[CollaboratorUpdate], w: &WeightMap) -> Result<ParameterVector> {
    let weights = aligned_weights(updates, w)?;
    let dim = updates[0].params.len();
    // Accumulate offsets from the first update so identical inputs come back
    // bit-for-bit even though Σw is only 1 up to rounding.
    let base = updates[0].params.as_slice();
    let mut offset = alloc::vec![0.0; dim];
    for (u, wi) in updates.iter().zip(&weights) {
        for ((o, p), b) in offset.iter_mut().zip(u.params.iter()).zip(base) {
            *o += wi * (p - b);
        }
    }
    let out = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
    ParameterVector::new(out)
}

/// Per-coordinate weighted harmonic merge.
///
/// Coordinates where some value has magnitude below `epsilon`, or where the
/// values do not share one sign, fall back to the weighted arithmetic mean.
pub fn harmonic_aggregate(
    updates: &[CollaboratorUpdate],
    w: &WeightMap,
    mode: HarmonicMode,
    epsilon: f64,
) -> Result<ParameterVector> {
    let weights = aligned_weights(updates, w)?;
    let dim = updates[0].params.len();
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let base = updates[0].params[j];
        let mut offset = 0.0;
        let mut reciprocal = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut fallback = false;
        let sign = updates[0].params[j] > 0.0;
        for (u, wi) in updates.iter().zip(&weights) {
            let p = u.params[j];
            offset += wi * (p - base);
            if p.abs() < epsilon || (p > 0.0) != sign {
                fallback = true;
                continue;
            }
            reciprocal += wi / p;
            lo = lo.min(p);
            hi = hi.max(p);
        }
        let arithmetic = base + offset;
        let value = if fallback {
            arithmetic
        } else {
            // The exact harmonic mean lies in [min, max]; clamp away rounding.
            let harmonic = (1.0 / reciprocal).clamp(lo, hi);
            match mode {
                HarmonicMode::Standard => harmonic,
                HarmonicMode::LiteralEq6 => harmonic * arithmetic,
            }
        };
        out.push(value);
    }
    ParameterVector::new(out)
}

fn hsim_weights(updates: &[CollaboratorUpdate], epsilon: f64) -> Result<AggregationWeights> {
    let similarity = similarity_weights(updates, epsilon)?;
    let sample = sample_weights(updates)?;
    let combined = combine_weights(&similarity, &sample)?;
    Ok(AggregationWeights {
        similarity,
        sample,
        combined,
        epsilon,
    })
}

/// Harmonic similarity-weighted aggregation.
///
/// Returns the master parameters together with every intermediate weight.
pub fn hsimagg(
    updates: &[CollaboratorUpdate],
    epsilon: f64,
    mode: HarmonicMode,
) -> Result<(ParameterVector, AggregationWeights)> {
    let weights = hsim_weights(updates, epsilon)?;
    let params = harmonic_aggregate(updates, &weights.combined, mode, epsilon)?;
    Ok((params, weights))
}

/// Sample-weighted arithmetic mean.
pub fn fedavg(updates: &[CollaboratorUpdate]) -> Result<ParameterVector> {
    let v = sample_weights(updates)?;
    weighted_arithmetic(updates, &v)
}

/// HSimAgg weights followed by a weighted arithmetic mean.
pub fn simagg_arithmetic(updates: &[CollaboratorUpdate], epsilon: f64) -> Result<ParameterVector> {
    let weights = hsim_weights(updates, epsilon)?;
    weighted_arithmetic(updates, &weights.combined)
}
