//! Wire payloads for transmitted residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{ceil_log2, SparseDelta};

/// Sign and one information bit per entry plus a shared 64-bit scale.
///
/// Entry `j` decodes to `(-1)^sign_j * bit_j * scale * 2^-level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitPlane {
    pub level: usize,
    pub scale: f64,
    pub signs: Vec<bool>,
    pub bits: Vec<bool>,
}

impl BitPlane {
    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn densify(&self) -> Vec<f64> {
        let weight = self.scale * pow2(-(self.level as i32));
        self.signs
            .iter()
            .zip(&self.bits)
            .map(|(&neg, &bit)| match (bit, neg) {
                (false, _) => 0.0,
                (true, false) => weight,
                (true, true) => -weight,
            })
            .collect()
    }

    /// Packs the plane MSB-first as
    /// `[level - 1: ceil(log2 L) bits][scale: 64 bits][sign, info] * d`,
    /// zero-padding the final byte.
    pub fn to_bytes(&self, num_levels: usize) -> Vec<u8> {
        let mut w = BitWriter::default();
        w.push(self.level as u64 - 1, ceil_log2(num_levels) as u32);
        w.push(self.scale.to_bits(), 64);
        for (&s, &b) in self.signs.iter().zip(&self.bits) {
            w.push(s as u64, 1);
            w.push(b as u64, 1);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], num_levels: usize, dim: usize) -> Result<Self> {
        let level_bits = ceil_log2(num_levels) as u32;
        let needed = level_bits as usize + 64 + 2 * dim;
        if bytes.len() * 8 < needed {
            return Err(Error::InvalidParameter {
                name: "bytes",
                reason: format!("need {needed} bits, got {}", bytes.len() * 8),
            });
        }
        let mut r = BitReader::new(bytes);
        let level = r.take(level_bits) as usize + 1;
        if level > num_levels {
            return Err(Error::LevelOutOfRange {
                level,
                max: num_levels,
            });
        }
        let scale = f64::from_bits(r.take(64));
        let mut signs = Vec::with_capacity(dim);
        let mut bits = Vec::with_capacity(dim);
        for _ in 0..dim {
            signs.push(r.take(1) == 1);
            bits.push(r.take(1) == 1);
        }
        Ok(Self {
            level,
            scale,
            signs,
            bits,
        })
    }
}

/// Sign, 11-bit biased exponent and the level-`l` mantissa bit of each entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatPlane {
    pub level: usize,
    pub signs: Vec<bool>,
    pub exponents: Vec<u16>,
    pub bits: Vec<bool>,
}

impl FloatPlane {
    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    /// The sign-and-exponent value `(-1)^S 2^(E-1023)` of every entry (zero
    /// for subnormals and zeros), i.e. the level-0 compression.
    pub fn base(&self) -> Vec<f64> {
        self.signs
            .iter()
            .zip(&self.exponents)
            .map(|(&neg, &e)| {
                if e == 0 {
                    0.0
                } else {
                    let v = pow2(e as i32 - 1023);
                    if neg {
                        -v
                    } else {
                        v
                    }
                }
            })
            .collect()
    }

    pub fn densify(&self) -> Vec<f64> {
        self.signs
            .iter()
            .zip(&self.exponents)
            .zip(&self.bits)
            .map(|((&neg, &e), &bit)| {
                if !bit {
                    return 0.0;
                }
                let v = pow2((e.max(1) as i32) - 1023 - self.level as i32);
                if neg {
                    -v
                } else {
                    v
                }
            })
            .collect()
    }
}

/// Integer grid codes: entry `j` decodes to `step * codes[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedGrid {
    pub step: f64,
    /// Bits per transmitted code.
    pub width: u32,
    pub codes: Vec<i64>,
}

impl QuantizedGrid {
    pub fn densify(&self) -> Vec<f64> {
        self.codes.iter().map(|&c| self.step * c as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridUpper {
    Codes(QuantizedGrid),
    /// The identity level: exact values.
    Exact(Vec<f64>),
}

/// Residual between two non-nested grids: both levels travel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResidual {
    pub level: usize,
    pub upper: GridUpper,
    /// `None` for level 1, whose lower level is the zero vector.
    pub lower: Option<QuantizedGrid>,
}

impl GridResidual {
    pub fn densify(&self) -> Vec<f64> {
        let mut out = match &self.upper {
            GridUpper::Codes(g) => g.densify(),
            GridUpper::Exact(v) => v.clone(),
        };
        if let Some(lower) = &self.lower {
            for (o, l) in out.iter_mut().zip(lower.densify()) {
                *o -= l;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Sparse(SparseDelta),
    BitPlane(BitPlane),
    FloatPlane(FloatPlane),
    Grid(GridResidual),
    Dense(Vec<f64>),
    /// Designated message for an all-zero input vector.
    Zero {
        dim: usize,
    },
}

impl Payload {
    pub fn dim(&self) -> usize {
        match self {
            Payload::Sparse(s) => s.dim(),
            Payload::BitPlane(b) => b.dim(),
            Payload::FloatPlane(f) => f.dim(),
            Payload::Grid(g) => match &g.upper {
                GridUpper::Codes(c) => c.codes.len(),
                GridUpper::Exact(v) => v.len(),
            },
            Payload::Dense(v) => v.len(),
            Payload::Zero { dim } => *dim,
        }
    }

    /// The residual `C^l(v) - C^(l-1)(v)` as a dense vector.
    pub fn densify(&self) -> Vec<f64> {
        match self {
            Payload::Sparse(s) => s.densify(),
            Payload::BitPlane(b) => b.densify(),
            Payload::FloatPlane(f) => f.densify(),
            Payload::Grid(g) => g.densify(),
            Payload::Dense(v) => v.clone(),
            Payload::Zero { dim } => vec![0.0; *dim],
        }
    }

    /// The level-0 vector carried by the message, when it is not zero.
    pub fn base(&self) -> Option<Vec<f64>> {
        match self {
            Payload::FloatPlane(f) => Some(f.base()),
            _ => None,
        }
    }

    pub fn residual_norm_sq(&self) -> f64 {
        match self {
            Payload::Sparse(s) => s.norm_sq(),
            other => crate::vector::norm_sq(&other.densify()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMessage {
    pub payload: Payload,
    pub level: usize,
    pub prob: f64,
    pub bit_cost: u64,
}

/// Exact power of two over the whole f64 range including subnormals.
pub fn pow2(exp: i32) -> f64 {
    if exp > 1023 {
        f64::INFINITY
    } else if exp >= -1022 {
        f64::from_bits(((exp + 1023) as u64) << 52)
    } else if exp >= -1074 {
        f64::from_bits(1u64 << (exp + 1074))
    } else {
        0.0
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn push(&mut self, value: u64, width: u32) {
        for shift in (0..width).rev() {
            if self.used % 8 == 0 {
                self.bytes.push(0);
            }
            let bit = ((value >> shift) & 1) as u8;
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= bit << (7 - self.used % 8);
            self.used += 1;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, width: u32) -> u64 {
        let mut out = 0u64;
        for _ in 0..width {
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            out = (out << 1) | bit as u64;
            self.pos += 1;
        }
        out
    }
}
