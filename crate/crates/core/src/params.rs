//! Flat parameter vectors exchanged between collaborators and the server.

use alloc::vec::Vec;
use core::fmt;
use core::ops::Index;

use crate::error::{Error, Result};

/// Identifier of a collaborator within a federation (`0..n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct CollaboratorId(pub u32);

impl CollaboratorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CollaboratorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fixed-length vector of finite model parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    /// Rejects empty vectors and any NaN/Inf entry.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyParameters);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(alloc::vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

impl Index<usize> for ParameterVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for ParameterVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Self::new(values).map_err(serde::de::Error::custom)
    }
}

/// Elementwise arithmetic mean.
pub fn mean<'a, I>(params: I) -> Result<ParameterVector>
where
    I: IntoIterator<Item = &'a ParameterVector>,
{
    let mut iter = params.into_iter();
    let first = iter.next().ok_or(Error::NoCollaborators)?;
    // Running mean: exact for n copies of the same vector, where a plain
    // sum-then-divide can be off by an ulp.
    let mut acc = first.0.clone();
    let mut count = 1usize;
    for p in iter {
        p.check_len(acc.len())?;
        count += 1;
        let n = count as f64;
        for (m, v) in acc.iter_mut().zip(p.iter()) {
            *m += (v - *m) / n;
        }
    }
    ParameterVector::new(acc)
}

/// Σ_j |a_j − b_j|
pub fn l1_distance(a: &ParameterVector, b: &ParameterVector) -> Result<f64> {
    b.check_len(a.len())?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum())
}

/// Euclidean distance.
pub fn l2_distance(a: &ParameterVector, b: &ParameterVector) -> Result<f64> {
    b.check_len(a.len())?;
    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(libm::sqrt(sq))
}

/// Scalar distance used for similarity weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Distance {
    #[default]
    L1,
    L2,
}

impl Distance {
    pub fn eval(self, a: &ParameterVector, b: &ParameterVector) -> Result<f64> {
        match self {
            Distance::L1 => l1_distance(a, b),
            Distance::L2 => l2_distance(a, b),
        }
    }
}
