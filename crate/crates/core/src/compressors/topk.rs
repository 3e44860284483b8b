//! Top-k and segmented Top-k as multilevel compressors.
//!
//! Entries are ranked by decreasing magnitude (lower index first on ties),
//! the ranking is cut into consecutive blocks of `segment` entries, and level
//! `l` keeps the first `l` blocks. With `segment == 1` this is plain Top-k and
//! the level-`l` residual is exactly the `l`-th largest entry.

use serde::{Deserialize, Serialize};

use super::{check_level, zero_message_bits, MultilevelCompressor};
use crate::error::{invalid, Error, Result};
use crate::message::Payload;
use crate::vector::{ceil_log2, GradientVector, SparseDelta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedTopK {
    pub segment: usize,
}

/// Indices ordered by decreasing `|v_j|`, ties broken by lower index.
pub fn magnitude_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_unstable_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    order
}

impl SegmentedTopK {
    pub fn new(segment: usize) -> Result<Self> {
        if segment == 0 {
            return Err(invalid("segment", "must be at least 1"));
        }
        Ok(Self { segment })
    }

    pub fn top_k() -> Self {
        Self { segment: 1 }
    }

    fn block<'a>(&self, order: &'a [usize], level: usize) -> &'a [usize] {
        let start = (level - 1) * self.segment;
        let end = (level * self.segment).min(order.len());
        &order[start..end]
    }

    /// `alpha^l = ||C^l(v)||^2 / ||v||^2` for `l = 0..=L`.
    pub fn alpha_profile(&self, v: &GradientVector) -> Result<Vec<f64>> {
        if v.is_zero() {
            return Err(Error::ZeroVector);
        }
        let x = v.as_slice();
        let order = magnitude_order(x);
        let levels = self.num_levels(x.len());
        let mut cumulative = Vec::with_capacity(levels + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for l in 1..=levels {
            for &i in self.block(&order, l) {
                acc += x[i] * x[i];
            }
            cumulative.push(acc);
        }
        // the same summation order for numerator and total pins alpha^L to 1
        let total = acc;
        Ok(cumulative.into_iter().map(|c| c / total).collect())
    }
}

impl MultilevelCompressor for SegmentedTopK {
    fn name(&self) -> &'static str {
        if self.segment == 1 {
            "top_k"
        } else {
            "segmented_top_k"
        }
    }

    fn num_levels(&self, dim: usize) -> usize {
        dim.div_ceil(self.segment)
    }

    fn compress(&self, v: &GradientVector, level: usize) -> Result<GradientVector> {
        let x = v.as_slice();
        check_level(level, self.num_levels(x.len()), true)?;
        let keep = (level * self.segment).min(x.len());
        let mut out = vec![0.0; x.len()];
        for &i in &magnitude_order(x)[..keep] {
            out[i] = x[i];
        }
        Ok(GradientVector::from_trusted(out))
    }

    fn residual(&self, v: &GradientVector, level: usize) -> Result<Payload> {
        let x = v.as_slice();
        check_level(level, self.num_levels(x.len()), false)?;
        if v.is_zero() {
            return Ok(Payload::Zero { dim: x.len() });
        }
        let order = magnitude_order(x);
        let entries = self
            .block(&order, level)
            .iter()
            .map(|&i| (i, x[i]))
            .collect();
        Ok(Payload::Sparse(SparseDelta::from_unsorted(
            x.len(),
            entries,
        )))
    }

    fn encoded_bits(&self, payload: &Payload) -> u64 {
        let dim = payload.dim();
        let levels = self.num_levels(dim);
        match payload {
            Payload::Sparse(s) if s.nnz() > 0 => {
                s.nnz() as u64 * (64 + ceil_log2(dim)) + ceil_log2(levels)
            }
            _ => zero_message_bits(levels),
        }
    }

    fn residual_norms_sq(&self, v: &GradientVector) -> Result<Vec<f64>> {
        let x = v.as_slice();
        let order = magnitude_order(x);
        Ok((1..=self.num_levels(x.len()))
            .map(|l| {
                self.block(&order, l)
                    .iter()
                    .fold(0.0, |acc, &i| acc + x[i] * x[i])
            })
            .collect())
    }
}
