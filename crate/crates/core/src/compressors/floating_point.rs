//! IEEE-754 mantissa truncation.
//!
//! Level `l` keeps the sign, the exponent and the first `l` of the 52
//! mantissa bits. Level 0 keeps only sign and exponent, `(-1)^S 2^(E-1023)`,
//! so every residual is one mantissa bit per entry and the message carries
//! sign, exponent and that bit: 13 bits per entry.

use serde::{Deserialize, Serialize};

use super::{check_level, zero_message_bits, MultilevelCompressor};
use crate::error::Result;
use crate::message::{FloatPlane, Payload};
use crate::vector::{ceil_log2, GradientVector};

pub const FLOATING_POINT_LEVELS: usize = 52;

const MANTISSA_BITS: u32 = 52;
const SIGN_MASK: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloatingPoint;

fn truncate(e: f64, level: usize) -> f64 {
    let drop = MANTISSA_BITS - level as u32;
    let mask = !((1u64 << drop) - 1);
    f64::from_bits(e.to_bits() & mask)
}

fn exponent(e: f64) -> u16 {
    ((e.to_bits() >> MANTISSA_BITS) & 0x7FF) as u16
}

fn mantissa_bit(e: f64, level: usize) -> bool {
    (e.to_bits() >> (MANTISSA_BITS - level as u32)) & 1 == 1
}

impl MultilevelCompressor for FloatingPoint {
    fn name(&self) -> &'static str {
        "floating_point"
    }

    fn num_levels(&self, _dim: usize) -> usize {
        FLOATING_POINT_LEVELS
    }

    fn compress(&self, v: &GradientVector, level: usize) -> Result<GradientVector> {
        check_level(level, FLOATING_POINT_LEVELS, true)?;
        let out = v.as_slice().iter().map(|&e| truncate(e, level)).collect();
        Ok(GradientVector::from_trusted(out))
    }

    fn residual(&self, v: &GradientVector, level: usize) -> Result<Payload> {
        check_level(level, FLOATING_POINT_LEVELS, false)?;
        if v.is_zero() {
            return Ok(Payload::Zero { dim: v.dim() });
        }
        let x = v.as_slice();
        Ok(Payload::FloatPlane(FloatPlane {
            level,
            signs: x.iter().map(|e| e.to_bits() & SIGN_MASK != 0).collect(),
            exponents: x.iter().map(|&e| exponent(e)).collect(),
            bits: x.iter().map(|&e| mantissa_bit(e, level)).collect(),
        }))
    }

    fn encoded_bits(&self, payload: &Payload) -> u64 {
        match payload {
            Payload::Zero { .. } => zero_message_bits(FLOATING_POINT_LEVELS),
            other => 13 * other.dim() as u64 + ceil_log2(FLOATING_POINT_LEVELS),
        }
    }
}

/// Worth of the leading (implicit or subnormal) unit, `2^(max(E,1) - 1023)`.
pub(crate) fn unit_weight(e: f64) -> f64 {
    crate::message::pow2(exponent(e).max(1) as i32 - 1023)
}
