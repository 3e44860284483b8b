//! Dense and sparse gradient vectors.
//!
//! All reductions run left-to-right over the entries so that repeated calls
//! and simulated multi-worker aggregation are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense, finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    /// Wraps values already known to be finite and non-empty.
    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norms(&self) -> Norms {
        norms(&self.0)
    }

    pub fn dot(&self, other: &GradientVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(dot(&self.0, &other.0))
    }
}

impl TryFrom<Vec<f64>> for GradientVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<GradientVector> for Vec<f64> {
    fn from(v: GradientVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for GradientVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2_squared: f64,
}

/// Left-to-right dot product. Callers guarantee equal lengths.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norms(v: &[f64]) -> Norms {
    let mut l1 = 0.0;
    let mut l2_squared = 0.0;
    for &x in v {
        l1 += x.abs();
        l2_squared += x * x;
    }
    Norms { l1, l2_squared }
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Sparse vector with strictly increasing indices and nonzero values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDelta {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseDelta {
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        for (pos, &(index, value)) in entries.iter().enumerate() {
            if index >= dim {
                return Err(Error::InvalidParameter {
                    name: "index",
                    reason: format!("{index} >= dim {dim}"),
                });
            }
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            if value == 0.0 {
                return Err(Error::InvalidParameter {
                    name: "value",
                    reason: format!("zero value stored at index {index}"),
                });
            }
            if pos > 0 && entries[pos - 1].0 >= index {
                return Err(Error::InvalidParameter {
                    name: "index",
                    reason: "indices must be strictly increasing".into(),
                });
            }
        }
        Ok(Self { dim, entries })
    }

    /// Builds from unordered (index, value) pairs, dropping zeros.
    pub(crate) fn from_unsorted(dim: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_unstable_by_key(|&(i, _)| i);
        Self { dim, entries }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, &(_, v)| acc + v * v)
    }

    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// `ceil(log2(n))` for `n >= 1`; zero for `n <= 1`.
pub fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}
