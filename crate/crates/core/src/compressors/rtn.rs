//! Round-to-nearest onto uniform grids of increasing resolution.
//!
//! Grid level `l` uses the step `2c / (2^l - 1)` and integer codes clipped to
//! `[-(2^(l-1) - 1), 2^(l-1) - 1]`, so outputs stay inside `[-c, c]` and a
//! code fits in `l` bits. The grids are not nested, so a residual carries the
//! codes of both levels. The level above the finest grid is the identity.

use serde::{Deserialize, Serialize};

use super::{check_level, zero_message_bits, MultilevelCompressor};
use crate::error::{invalid, Result};
use crate::message::{GridResidual, GridUpper, Payload, QuantizedGrid};
use crate::vector::{ceil_log2, GradientVector};

/// Codes must fit comfortably in an `i64`.
pub const MAX_GRID_LEVELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rtn {
    pub clip: f64,
    pub grid_levels: usize,
}

impl Rtn {
    pub fn new(clip: f64, grid_levels: usize) -> Result<Self> {
        if !(clip.is_finite() && clip > 0.0) {
            return Err(invalid(
                "clip",
                format!("{clip} must be finite and positive"),
            ));
        }
        if !(1..=MAX_GRID_LEVELS).contains(&grid_levels) {
            return Err(invalid(
                "grid_levels",
                format!("{grid_levels} not in 1..={MAX_GRID_LEVELS}"),
            ));
        }
        Ok(Self { clip, grid_levels })
    }

    pub fn step(&self, level: usize) -> f64 {
        2.0 * self.clip / ((1u64 << level) - 1) as f64
    }

    pub fn max_code(level: usize) -> i64 {
        (1i64 << (level - 1)) - 1
    }

    pub fn quantize(&self, v: &[f64], level: usize) -> QuantizedGrid {
        let step = self.step(level);
        let bound = Self::max_code(level) as f64;
        let codes = v
            .iter()
            .map(|&x| (x / step).round().clamp(-bound, bound) as i64)
            .collect();
        QuantizedGrid {
            step,
            width: level as u32,
            codes,
        }
    }
}

impl MultilevelCompressor for Rtn {
    fn name(&self) -> &'static str {
        "rtn"
    }

    fn num_levels(&self, _dim: usize) -> usize {
        self.grid_levels + 1
    }

    fn compress(&self, v: &GradientVector, level: usize) -> Result<GradientVector> {
        let top = self.grid_levels + 1;
        check_level(level, top, true)?;
        if level == top {
            return Ok(v.clone());
        }
        if level == 0 {
            return GradientVector::zeros(v.dim());
        }
        Ok(GradientVector::from_trusted(
            self.quantize(v.as_slice(), level).densify(),
        ))
    }

    fn residual(&self, v: &GradientVector, level: usize) -> Result<Payload> {
        let top = self.grid_levels + 1;
        check_level(level, top, false)?;
        if v.is_zero() {
            return Ok(Payload::Zero { dim: v.dim() });
        }
        let x = v.as_slice();
        let upper = if level == top {
            GridUpper::Exact(x.to_vec())
        } else {
            GridUpper::Codes(self.quantize(x, level))
        };
        let lower = (level > 1).then(|| self.quantize(x, level - 1));
        Ok(Payload::Grid(GridResidual {
            level,
            upper,
            lower,
        }))
    }

    fn encoded_bits(&self, payload: &Payload) -> u64 {
        let levels = self.grid_levels + 1;
        let level_bits = ceil_log2(levels);
        match payload {
            Payload::Grid(g) => {
                let d = payload.dim() as u64;
                match &g.upper {
                    // the server rebuilds the lower grid from the exact values
                    GridUpper::Exact(_) => 64 * d + level_bits,
                    GridUpper::Codes(_) => {
                        let l = g.level as u64;
                        d * l + d * (l - 1) + 64 + level_bits
                    }
                }
            }
            _ => zero_message_bits(levels),
        }
    }
}
