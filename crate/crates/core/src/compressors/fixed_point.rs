//! Fixed-point bit truncation.
//!
//! Every entry is normalized by a shared scale, written as a sign and a
//! 63-bit binary fraction `sum_j b_j 2^-j`, and level `l` keeps the first `l`
//! fraction bits (truncation toward zero on the magnitude). The level-`l`
//! residual is a single bit plane: bit `b_l` and the sign of every entry.

use serde::{Deserialize, Serialize};

use super::{check_level, zero_message_bits, MultilevelCompressor};
use crate::error::{invalid, Error, Result};
use crate::message::{pow2, BitPlane, Payload};
use crate::vector::{ceil_log2, GradientVector};

/// Number of fraction bits, and therefore levels.
pub const FIXED_POINT_LEVELS: usize = 63;

const ALL_ONES: u64 = (1u64 << FIXED_POINT_LEVELS) - 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedScale {
    /// Normalize by `max_j |v_j|`, transmitted with the message.
    #[default]
    MaxAbs,
    /// A fixed scale known to both sides; entries must not exceed it.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub scale: FixedScale,
}

/// Sign and 63-bit fraction of each normalized entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointCode {
    pub scale: f64,
    pub negative: Vec<bool>,
    pub fraction: Vec<u64>,
}

impl FixedPointCode {
    pub fn bit(&self, entry: usize, level: usize) -> bool {
        (self.fraction[entry] >> (FIXED_POINT_LEVELS - level)) & 1 == 1
    }

    fn truncated(&self, entry: usize, level: usize) -> f64 {
        if level == 0 {
            return 0.0;
        }
        let q = self.fraction[entry] >> (FIXED_POINT_LEVELS - level);
        let magnitude = self.scale * (q as f64 * pow2(-(level as i32)));
        if self.negative[entry] {
            -magnitude
        } else {
            magnitude
        }
    }
}

impl FixedPoint {
    pub fn new(scale: FixedScale) -> Result<Self> {
        if let FixedScale::Fixed(s) = scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid("scale", format!("{s} must be finite and positive")));
            }
        }
        Ok(Self { scale })
    }

    pub fn encode(&self, v: &GradientVector) -> Result<FixedPointCode> {
        let x = v.as_slice();
        let scale = match self.scale {
            FixedScale::MaxAbs => x.iter().fold(0.0f64, |m, e| m.max(e.abs())),
            FixedScale::Fixed(s) => {
                if let Some((index, &value)) = x.iter().enumerate().find(|(_, e)| e.abs() > s) {
                    return Err(Error::ScaleExceeded {
                        index,
                        value,
                        scale: s,
                    });
                }
                s
            }
        };
        let mut negative = Vec::with_capacity(x.len());
        let mut fraction = Vec::with_capacity(x.len());
        for &e in x {
            negative.push(e < 0.0);
            let m = if scale > 0.0 { e.abs() / scale } else { 0.0 };
            fraction.push(if m >= 1.0 {
                ALL_ONES
            } else {
                // exact power-of-two scaling, then truncation toward zero
                (m * pow2(FIXED_POINT_LEVELS as i32)) as u64
            });
        }
        Ok(FixedPointCode {
            scale,
            negative,
            fraction,
        })
    }
}

impl MultilevelCompressor for FixedPoint {
    fn name(&self) -> &'static str {
        "fixed_point"
    }

    fn num_levels(&self, _dim: usize) -> usize {
        FIXED_POINT_LEVELS
    }

    fn compress(&self, v: &GradientVector, level: usize) -> Result<GradientVector> {
        check_level(level, FIXED_POINT_LEVELS, true)?;
        let code = self.encode(v)?;
        let out = (0..v.dim()).map(|j| code.truncated(j, level)).collect();
        Ok(GradientVector::from_trusted(out))
    }

    fn residual(&self, v: &GradientVector, level: usize) -> Result<Payload> {
        check_level(level, FIXED_POINT_LEVELS, false)?;
        if v.is_zero() {
            return Ok(Payload::Zero { dim: v.dim() });
        }
        let code = self.encode(v)?;
        let bits = (0..v.dim()).map(|j| code.bit(j, level)).collect();
        Ok(Payload::BitPlane(BitPlane {
            level,
            scale: code.scale,
            signs: code.negative,
            bits,
        }))
    }

    fn encoded_bits(&self, payload: &Payload) -> u64 {
        match payload {
            Payload::Zero { .. } => zero_message_bits(FIXED_POINT_LEVELS),
            other => 2 * other.dim() as u64 + 64 + ceil_log2(FIXED_POINT_LEVELS),
        }
    }

    fn residual_norms_sq(&self, v: &GradientVector) -> Result<Vec<f64>> {
        let code = self.encode(v)?;
        Ok((1..=FIXED_POINT_LEVELS)
            .map(|l| {
                let count = (0..v.dim()).filter(|&j| code.bit(j, l)).count();
                let unit = code.scale * pow2(-(l as i32));
                unit * unit * count as f64
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_scale() -> FixedPoint {
        FixedPoint::new(FixedScale::Fixed(1.0)).unwrap()
    }

    #[test]
    fn truncates_binary_fraction() {
        // 0.75 = 0.11b
        let v = GradientVector::new(vec![0.75]).unwrap();
        let c = unit_scale();
        assert_eq!(c.compress(&v, 1).unwrap().as_slice(), &[0.5]);
        assert_eq!(c.compress(&v, 2).unwrap().as_slice(), &[0.75]);
        assert_eq!(c.compress(&v, 63).unwrap().as_slice(), &[0.75]);
        let Payload::BitPlane(p) = c.residual(&v, 2).unwrap() else {
            unreachable!()
        };
        assert_eq!(p.bits, vec![true]);
        assert_eq!(p.densify(), vec![0.25]);
        let Payload::BitPlane(p) = c.residual(&v, 3).unwrap() else {
            unreachable!()
        };
        assert_eq!(p.bits, vec![false]);
    }

    #[test]
    fn max_entry_encodes_as_all_ones() {
        let c = FixedPoint::default();
        let v = GradientVector::new(vec![-2.0, 1.0]).unwrap();
        let code = c.encode(&v).unwrap();
        assert_eq!(code.scale, 2.0);
        assert_eq!(code.fraction[0], ALL_ONES);
        assert!(code.negative[0]);
        assert_eq!(code.fraction[1], 1u64 << 62);
        assert_eq!(c.compress(&v, 1).unwrap().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn truncation_error_is_bounded_by_level_resolution() {
        let c = FixedPoint::default();
        let v = GradientVector::new(vec![0.913, -0.0071, 0.33, 1.7, -1.2e-5]).unwrap();
        let scale = 1.7;
        for l in 1..=40 {
            let cl = c.compress(&v, l).unwrap();
            for (a, b) in cl.as_slice().iter().zip(v.as_slice()) {
                // toward zero on the magnitude; the all-ones max entry reaches the bound
                let err = b.abs() - a.abs();
                assert!(
                    err >= -1e-15 && err <= pow2(-(l as i32)) * scale + 1e-15,
                    "level {l}: {err}"
                );
            }
        }
    }

    #[test]
    fn rejects_entries_above_fixed_scale() {
        let v = GradientVector::new(vec![0.5, 1.5]).unwrap();
        assert!(matches!(
            unit_scale().compress(&v, 3),
            Err(Error::ScaleExceeded { index: 1, .. })
        ));
        assert!(FixedPoint::new(FixedScale::Fixed(0.0)).is_err());
    }

    #[test]
    fn message_size_matches_two_bits_per_entry() {
        let c = FixedPoint::default();
        let v = GradientVector::new(vec![0.25; 1000]).unwrap();
        let p = c.residual(&v, 4).unwrap();
        assert_eq!(c.encoded_bits(&p), 2070);
        let Payload::BitPlane(plane) = p else {
            unreachable!()
        };
        assert_eq!(plane.to_bytes(63).len(), 2070usize.div_ceil(8));
    }
}
