use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::vector::norm_sq;

/// Additive gradient noise with `E ||n||^2 = sigma^2`.
///
/// Coordinates are Gaussian with standard deviation `sigma / sqrt(d)`. In
/// strict mode a draw longer than `sigma` is projected back onto the ball,
/// so the bound holds for every sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    #[serde(default)]
    pub strict: bool,
}

impl NoiseModel {
    pub fn new(sigma: f64, strict: bool) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid(
                "sigma",
                format!("{sigma} must be finite and non-negative"),
            ));
        }
        Ok(Self { sigma, strict })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Adds one draw to `g`. Consumes no randomness when `sigma == 0`.
    pub fn perturb(&self, g: &mut [f64], rng: &mut Rng) {
        if self.sigma == 0.0 {
            return;
        }
        let std = self.sigma / (g.len() as f64).sqrt();
        let noise: Vec<f64> = (0..g.len()).map(|_| std * rng.standard_normal()).collect();
        let shrink = if self.strict {
            let n = norm_sq(&noise).sqrt();
            if n > self.sigma {
                self.sigma / n
            } else {
                1.0
            }
        } else {
            1.0
        };
        for (x, n) in g.iter_mut().zip(noise) {
            *x += shrink * n;
        }
    }
}
