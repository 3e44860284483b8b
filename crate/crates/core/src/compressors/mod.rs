//! Multilevel compressors.
//!
//! A multilevel compressor is a family `C^0, C^1, ..., C^L` of deterministic
//! maps where higher levels compress less and `C^L` is the identity. Each
//! compressor can produce the between-level residual `C^l(v) - C^(l-1)(v)` in
//! a compact wire form and report its exact encoded size.

mod fixed_point;
mod floating_point;
mod rtn;
mod topk;

pub use fixed_point::{FixedPoint, FixedScale, FIXED_POINT_LEVELS};
pub(crate) use floating_point::unit_weight;
pub use floating_point::{FloatingPoint, FLOATING_POINT_LEVELS};
pub use rtn::Rtn;
pub use topk::{magnitude_order, SegmentedTopK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::Payload;
use crate::vector::{ceil_log2, GradientVector};

pub trait MultilevelCompressor {
    fn name(&self) -> &'static str;

    /// Number of levels `L` for vectors of dimension `dim`.
    fn num_levels(&self, dim: usize) -> usize;

    /// `C^level(v)` for `0 <= level <= L`.
    fn compress(&self, v: &GradientVector, level: usize) -> Result<GradientVector>;

    /// `C^level(v) - C^(level-1)(v)` in wire form, for `1 <= level <= L`.
    fn residual(&self, v: &GradientVector, level: usize) -> Result<Payload>;

    /// Exact transmitted size of a payload produced by [`residual`](Self::residual).
    fn encoded_bits(&self, payload: &Payload) -> u64;

    /// `(Delta^l)^2 = ||C^l(v) - C^(l-1)(v)||^2` for `l = 1..=L`.
    fn residual_norms_sq(&self, v: &GradientVector) -> Result<Vec<f64>> {
        let levels = self.num_levels(v.dim());
        (1..=levels)
            .map(|l| Ok(self.residual(v, l)?.residual_norm_sq()))
            .collect()
    }

    /// `Delta^l` for `l = 1..=L`.
    fn residual_norms(&self, v: &GradientVector) -> Result<Vec<f64>> {
        Ok(self
            .residual_norms_sq(v)?
            .into_iter()
            .map(f64::sqrt)
            .collect())
    }
}

pub(crate) fn check_level(level: usize, max: usize, allow_zero: bool) -> Result<()> {
    if level > max || (!allow_zero && level == 0) {
        Err(Error::LevelOutOfRange { level, max })
    } else {
        Ok(())
    }
}

/// Size of the designated all-zero message: the level plus one flag bit.
pub fn zero_message_bits(num_levels: usize) -> u64 {
    ceil_log2(num_levels) + 1
}

/// Size of an uncompressed 64-bit vector.
pub fn uncompressed_bits(dim: usize) -> u64 {
    64 * dim as u64
}

/// The single-level identity compressor (`L = 1`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Identity;

impl MultilevelCompressor for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn num_levels(&self, _dim: usize) -> usize {
        1
    }

    fn compress(&self, v: &GradientVector, level: usize) -> Result<GradientVector> {
        check_level(level, 1, true)?;
        if level == 0 {
            GradientVector::zeros(v.dim())
        } else {
            Ok(v.clone())
        }
    }

    fn residual(&self, v: &GradientVector, level: usize) -> Result<Payload> {
        check_level(level, 1, false)?;
        if v.is_zero() {
            return Ok(Payload::Zero { dim: v.dim() });
        }
        Ok(Payload::Dense(v.as_slice().to_vec()))
    }

    fn encoded_bits(&self, payload: &Payload) -> u64 {
        match payload {
            Payload::Zero { .. } => zero_message_bits(1),
            other => uncompressed_bits(other.dim()),
        }
    }
}

/// Every compressor behind one serializable descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Compressor {
    Identity,
    TopK,
    SegmentedTopK {
        segment: usize,
    },
    FixedPoint {
        #[serde(default)]
        scale: FixedScale,
    },
    FloatingPoint,
    Rtn {
        clip: f64,
        grid_levels: usize,
    },
}

impl Compressor {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Compressor::SegmentedTopK { segment } => SegmentedTopK::new(segment).map(|_| ()),
            Compressor::FixedPoint { scale } => FixedPoint::new(scale).map(|_| ()),
            Compressor::Rtn { clip, grid_levels } => Rtn::new(clip, grid_levels).map(|_| ()),
            _ => Ok(()),
        }
    }

    fn with<R>(&self, f: impl FnOnce(&dyn MultilevelCompressor) -> R) -> R {
        match *self {
            Compressor::Identity => f(&Identity),
            Compressor::TopK => f(&SegmentedTopK::top_k()),
            Compressor::SegmentedTopK { segment } => f(&SegmentedTopK { segment }),
            Compressor::FixedPoint { scale } => f(&FixedPoint { scale }),
            Compressor::FloatingPoint => f(&FloatingPoint),
            Compressor::Rtn { clip, grid_levels } => f(&Rtn { clip, grid_levels }),
        }
    }

    /// Retained-energy profile, for the sparsifiers only.
    pub fn alpha_profile(&self, v: &GradientVector) -> Result<Vec<f64>> {
        match *self {
            Compressor::TopK => SegmentedTopK::top_k().alpha_profile(v),
            Compressor::SegmentedTopK { segment } => SegmentedTopK { segment }.alpha_profile(v),
            _ => Err(Error::Unsupported(
                "alpha profiles of non-sparsifying compressors",
            )),
        }
    }
}

impl MultilevelCompressor for Compressor {
    fn name(&self) -> &'static str {
        self.with(|c| c.name())
    }

    fn num_levels(&self, dim: usize) -> usize {
        self.with(|c| c.num_levels(dim))
    }

    fn compress(&self, v: &GradientVector, level: usize) -> Result<GradientVector> {
        self.with(|c| c.compress(v, level))
    }

    fn residual(&self, v: &GradientVector, level: usize) -> Result<Payload> {
        self.with(|c| c.residual(v, level))
    }

    fn encoded_bits(&self, payload: &Payload) -> u64 {
        self.with(|c| c.encoded_bits(payload))
    }

    fn residual_norms_sq(&self, v: &GradientVector) -> Result<Vec<f64>> {
        self.with(|c| c.residual_norms_sq(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::dist_sq;
    use proptest::prelude::*;

    fn all_compressors() -> Vec<Compressor> {
        vec![
            Compressor::Identity,
            Compressor::TopK,
            Compressor::SegmentedTopK { segment: 3 },
            Compressor::FixedPoint {
                scale: FixedScale::MaxAbs,
            },
            Compressor::FloatingPoint,
            Compressor::Rtn {
                clip: 2.0,
                grid_levels: 6,
            },
        ]
    }

    fn vector_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..24)
    }

    proptest! {
        #[test]
        fn residuals_telescope_to_v(values in vector_strategy()) {
            let v = GradientVector::new(values).unwrap();
            let scale = v.norms().l2_squared.sqrt().max(1e-300);
            for c in all_compressors() {
                let levels = c.num_levels(v.dim());
                let mut sum = c.compress(&v, 0).unwrap().into_inner();
                for l in 1..=levels {
                    let r = c.residual(&v, l).unwrap().densify();
                    for (s, x) in sum.iter_mut().zip(r) {
                        *s += x;
                    }
                }
                let err = dist_sq(&sum, v.as_slice()).sqrt();
                prop_assert!(err <= 1e-12 * scale, "{}: err {}", c.name(), err);
            }
        }

        #[test]
        fn residual_matches_level_difference(values in vector_strategy()) {
            let v = GradientVector::new(values).unwrap();
            let scale = v.norms().l2_squared.sqrt().max(1e-300);
            for c in all_compressors() {
                let levels = c.num_levels(v.dim());
                for l in 1..=levels {
                    let hi = c.compress(&v, l).unwrap();
                    let lo = c.compress(&v, l - 1).unwrap();
                    let diff: Vec<f64> = hi.as_slice().iter().zip(lo.as_slice()).map(|(a, b)| a - b).collect();
                    let r = c.residual(&v, l).unwrap().densify();
                    prop_assert!(dist_sq(&diff, &r).sqrt() <= 1e-15 * scale, "{} level {}", c.name(), l);
                }
            }
        }

        #[test]
        fn distortion_non_increasing(values in vector_strategy()) {
            let v = GradientVector::new(values).unwrap();
            for c in all_compressors() {
                if matches!(c, Compressor::Rtn { .. }) {
                    // grids are not nested; monotonicity only holds for the bitwise and sparse families
                    continue;
                }
                let levels = c.num_levels(v.dim());
                let mut prev = f64::INFINITY;
                for l in 0..=levels {
                    let d = dist_sq(c.compress(&v, l).unwrap().as_slice(), v.as_slice());
                    prop_assert!(d <= prev * (1.0 + 1e-12) + 1e-300, "{} level {}", c.name(), l);
                    prev = d;
                }
            }
        }

        #[test]
        fn residual_norms_match_payloads(values in vector_strategy()) {
            let v = GradientVector::new(values).unwrap();
            for c in all_compressors() {
                let norms = c.residual_norms(&v).unwrap();
                for (i, &n) in norms.iter().enumerate() {
                    let direct = c.residual(&v, i + 1).unwrap().residual_norm_sq().sqrt();
                    prop_assert!((n - direct).abs() <= 1e-12 * direct.max(1e-300), "{} level {}", c.name(), i + 1);
                }
            }
        }
    }

    #[test]
    fn identity_levels() {
        let v = GradientVector::new(vec![1.0, -2.0]).unwrap();
        assert_eq!(Identity.num_levels(2), 1);
        assert_eq!(Identity.compress(&v, 1).unwrap(), v);
        assert!(Identity.compress(&v, 0).unwrap().is_zero());
        assert!(Identity.compress(&v, 2).is_err());
        assert!(Identity.residual(&v, 0).is_err());
        let p = Identity.residual(&v, 1).unwrap();
        assert_eq!(Identity.encoded_bits(&p), 128);
    }

    #[test]
    fn top_level_is_identity_and_level_zero_is_zero() {
        let v = GradientVector::new(vec![0.3, -7.25, 1e-3, 2.0, 0.0]).unwrap();
        for c in all_compressors() {
            let levels = c.num_levels(v.dim());
            let top = c.compress(&v, levels).unwrap();
            if matches!(c, Compressor::FixedPoint { .. }) {
                assert!(dist_sq(top.as_slice(), v.as_slice()).sqrt() < 1e-15);
            } else {
                assert_eq!(top, v, "{}", c.name());
            }
            let bottom = c.compress(&v, 0).unwrap();
            if !matches!(c, Compressor::FloatingPoint) {
                assert!(bottom.is_zero(), "{}", c.name());
            }
            assert!(c.compress(&v, levels + 1).is_err());
            assert!(c.residual(&v, 0).is_err());
            assert!(c.residual(&v, levels + 1).is_err());
        }
    }

    #[test]
    fn zero_vector_sends_designated_message() {
        let v = GradientVector::zeros(8).unwrap();
        for c in all_compressors() {
            let levels = c.num_levels(8);
            for l in 1..=levels {
                let p = c.residual(&v, l).unwrap();
                assert_eq!(p, Payload::Zero { dim: 8 }, "{}", c.name());
                assert_eq!(c.encoded_bits(&p), ceil_log2(levels) + 1);
            }
        }
    }

    #[test]
    fn uncompressed_size() {
        assert_eq!(uncompressed_bits(10), 640);
    }

    #[test]
    fn descriptor_serde() {
        for c in all_compressors() {
            let json = serde_json::to_string(&c).unwrap();
            let back: Compressor = serde_json::from_str(&json).unwrap();
            assert_eq!(back, c);
        }
        assert!(Compressor::SegmentedTopK { segment: 0 }.validate().is_err());
        assert!(Compressor::Rtn {
            clip: -1.0,
            grid_levels: 3
        }
        .validate()
        .is_err());
    }
}
