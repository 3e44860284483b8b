use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::vector::GradientVector;

/// Vectors whose sorted magnitudes are `|v0| e^(-r j / 2)`, placed at random
/// positions with random signs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpDecayOracle {
    pub dim: usize,
    pub rate: f64,
    pub v0: f64,
}

impl ExpDecayOracle {
    pub fn new(dim: usize, rate: f64, v0: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(invalid("rate", format!("{rate} must be positive")));
        }
        if !(v0.is_finite() && v0 > 0.0) {
            return Err(invalid("v0", format!("{v0} must be positive")));
        }
        Ok(Self { dim, rate, v0 })
    }

    /// Sorted magnitudes, largest first.
    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| self.v0 * (-0.5 * self.rate * j as f64).exp())
            .collect()
    }

    /// `|v0|^2 (1 - e^(-r d)) / (1 - e^(-r))`.
    pub fn norm_sq(&self) -> f64 {
        let r = self.rate;
        self.v0 * self.v0 * (-(-r * self.dim as f64).exp_m1()) / (-(-r).exp_m1())
    }

    pub fn sample(&self, rng: &mut Rng) -> GradientVector {
        let mags = self.magnitudes();
        let mut positions: Vec<usize> = (0..self.dim).collect();
        positions.shuffle(rng);
        let mut out = vec![0.0; self.dim];
        for (m, p) in mags.into_iter().zip(positions) {
            out[p] = rng.sign() * m;
        }
        GradientVector::from_trusted(out)
    }
}
