//! Reference methods: Rand-k, QSGD, direct Top-k and error feedback with
//! momentum.

use serde::{Deserialize, Serialize};

use crate::compressors::{MultilevelCompressor, SegmentedTopK};
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::vector::{ceil_log2, norm_sq, GradientVector};

/// Cost of one sparse entry: value plus index.
pub fn sparse_entry_bits(dim: usize) -> u64 {
    64 + ceil_log2(dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub vector: Vec<f64>,
    pub bits: u64,
}

/// Keeps the coordinates in `subset` scaled by `d / k`.
pub fn rand_k_subset(v: &GradientVector, subset: &[usize]) -> Result<Vec<f64>> {
    let d = v.dim();
    let k = subset.len();
    if k == 0 || k > d {
        return Err(invalid("k", format!("{k} not in 1..={d}")));
    }
    let scale = d as f64 / k as f64;
    let x = v.as_slice();
    let mut out = vec![0.0; d];
    for &i in subset {
        if i >= d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: i + 1,
            });
        }
        out[i] = x[i] * scale;
    }
    Ok(out)
}

/// Uniform `k`-subset without replacement, scaled by `d / k`.
pub fn rand_k(v: &GradientVector, k: usize, rng: &mut Rng) -> Result<Compressed> {
    let d = v.dim();
    if k == 0 || k > d {
        return Err(invalid("k", format!("{k} not in 1..={d}")));
    }
    let mut subset = rand::seq::index::sample(rng, d, k).into_vec();
    subset.sort_unstable();
    Ok(Compressed {
        vector: rand_k_subset(v, &subset)?,
        bits: k as u64 * sparse_entry_bits(d),
    })
}

/// `E ||rand_k(v) - v||^2 = (d / k - 1) ||v||^2`.
pub fn rand_k_variance(v_norm_sq: f64, d: usize, k: usize) -> f64 {
    (d as f64 / k as f64 - 1.0) * v_norm_sq
}

/// Stochastic rounding of one entry: `(lower, upper, P(upper))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rounding {
    pub lower: f64,
    pub upper: f64,
    pub p_upper: f64,
}

fn qsgd_check(levels: usize) -> Result<()> {
    if levels < 2 {
        return Err(invalid("levels", format!("{levels} must be at least 2")));
    }
    Ok(())
}

/// Per-entry rounding choices on the grid `||v|| * sign * {0, 1/s, .., 1}`
/// with `s = levels - 1`.
pub fn qsgd_roundings(v: &GradientVector, levels: usize) -> Result<Vec<Rounding>> {
    qsgd_check(levels)?;
    let norm = norm_sq(v.as_slice()).sqrt();
    let s = (levels - 1) as f64;
    Ok(v.as_slice()
        .iter()
        .map(|&e| {
            if norm == 0.0 {
                return Rounding {
                    lower: 0.0,
                    upper: 0.0,
                    p_upper: 0.0,
                };
            }
            let r = (e.abs() / norm * s).min(s);
            let low = r.floor();
            let sign = if e < 0.0 { -norm } else { norm };
            Rounding {
                lower: sign * low / s,
                upper: sign * (low + 1.0).min(s) / s,
                p_upper: r - low,
            }
        })
        .collect())
}

/// `d (ceil(log2 levels) + 1) + 64`, or the one-flag zero message.
pub fn qsgd_bits(dim: usize, levels: usize) -> u64 {
    dim as u64 * (ceil_log2(levels) + 1) + 64
}

pub fn qsgd_quantize(v: &GradientVector, levels: usize, rng: &mut Rng) -> Result<Compressed> {
    let roundings = qsgd_roundings(v, levels)?;
    if v.is_zero() {
        return Ok(Compressed {
            vector: vec![0.0; v.dim()],
            bits: 1,
        });
    }
    let vector = roundings
        .iter()
        .map(|r| {
            if r.p_upper == 0.0 {
                r.lower
            } else if rng.uniform() < r.p_upper {
                r.upper
            } else {
                r.lower
            }
        })
        .collect();
    Ok(Compressed {
        vector,
        bits: qsgd_bits(v.dim(), levels),
    })
}

/// Biased Top-k used as-is: keep the `k` largest magnitudes.
pub fn top_k_direct(v: &GradientVector, k: usize) -> Result<Compressed> {
    let d = v.dim();
    if k == 0 || k > d {
        return Err(invalid("k", format!("{k} not in 1..={d}")));
    }
    let vector = SegmentedTopK::top_k().compress(v, k)?.into_inner();
    let nnz = vector.iter().filter(|x| **x != 0.0).count() as u64;
    Ok(Compressed {
        vector,
        bits: (nnz * sparse_entry_bits(d)).max(1),
    })
}

/// Compressor applied inside error feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EfCompressor {
    Identity,
    TopK { k: usize },
}

impl EfCompressor {
    pub fn apply(&self, v: &GradientVector) -> Result<Compressed> {
        match *self {
            EfCompressor::Identity => Ok(Compressed {
                vector: v.as_slice().to_vec(),
                bits: 64 * v.dim() as u64,
            }),
            EfCompressor::TopK { k } => top_k_direct(v, k),
        }
    }
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-worker state of error feedback with momentum:
///
/// ```text
/// m <- (1 - beta) m + beta v
/// c  = C(m - h)
/// h <- h + c
/// ```
///
/// The worker sends `c`; the server keeps the mean of the `h` copies.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFeedbackState {
    pub h: Vec<f64>,
    pub m: Vec<f64>,
    pub beta: f64,
}

impl ErrorFeedbackState {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid("beta", format!("{beta} not in (0, 1]")));
        }
        Ok(Self {
            h: vec![0.0; dim],
            m: vec![0.0; dim],
            beta,
        })
    }

    /// Advances one step and returns the transmitted message.
    pub fn step(&mut self, v: &GradientVector, compressor: &EfCompressor) -> Result<Compressed> {
        if v.dim() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: v.dim(),
            });
        }
        let beta = self.beta;
        for (m, &x) in self.m.iter_mut().zip(v.as_slice()) {
            *m = (1.0 - beta) * *m + beta * x;
        }
        let diff: Vec<f64> = self.m.iter().zip(&self.h).map(|(m, h)| m - h).collect();
        let c = compressor.apply(&GradientVector::from_trusted(diff))?;
        for (h, &x) in self.h.iter_mut().zip(&c.vector) {
            *h += x;
        }
        Ok(c)
    }
}
