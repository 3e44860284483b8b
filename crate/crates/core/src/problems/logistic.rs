use serde::{Deserialize, Serialize};

use super::{NoiseModel, Problem};
use crate::error::{invalid, Result};
use crate::rng::{Domain, Rng, StreamId};
use crate::vector::{dot, norm_sq};

fn default_ridge() -> f64 {
    1e-2
}

fn default_samples() -> usize {
    64
}

/// Synthetic binary classification spread over workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticSpec {
    pub dim: usize,
    pub workers: usize,
    #[serde(default = "default_samples")]
    pub samples_per_worker: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Per-worker shift of the feature mean.
    #[serde(default)]
    pub xi: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl LogisticSpec {
    pub fn build(&self) -> Result<LogisticProblem> {
        if self.dim == 0 || self.workers == 0 || self.samples_per_worker == 0 {
            return Err(invalid(
                "dim",
                "dimensions, workers and samples must be positive",
            ));
        }
        if !(self.ridge.is_finite() && self.ridge > 0.0) {
            return Err(invalid("ridge", "must be positive"));
        }
        let d = self.dim;
        let mut rng = Rng::new(self.seed, StreamId::new(Domain::Problem, 1, 0));
        let truth: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let mut data = Vec::with_capacity(self.workers);
        for _ in 0..self.workers {
            let shift: Vec<f64> = (0..d).map(|_| self.xi * rng.standard_normal()).collect();
            let mut rows = Vec::with_capacity(self.samples_per_worker);
            for _ in 0..self.samples_per_worker {
                let a: Vec<f64> = shift
                    .iter()
                    .map(|s| s + rng.standard_normal() / (d as f64).sqrt())
                    .collect();
                let p = 1.0 / (1.0 + (-dot(&a, &truth)).exp());
                let y = if rng.uniform() < p { 1.0 } else { -1.0 };
                rows.push((a, y));
            }
            data.push(rows);
        }
        LogisticProblem::new(data, self.ridge, NoiseModel::new(self.sigma, false)?)
    }
}

/// `f_i(x) = mean log(1 + exp(-y a^T x)) + ridge/2 ||x||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProblem {
    data: Vec<Vec<(Vec<f64>, f64)>>,
    ridge: f64,
    smoothness: f64,
    optimum: f64,
    noise: NoiseModel,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticProblem {
    pub fn new(data: Vec<Vec<(Vec<f64>, f64)>>, ridge: f64, noise: NoiseModel) -> Result<Self> {
        let max_row = data
            .iter()
            .flatten()
            .map(|(a, _)| norm_sq(a))
            .fold(0.0, f64::max);
        let mut p = Self {
            data,
            ridge,
            smoothness: 0.25 * max_row + ridge,
            optimum: 0.0,
            noise,
        };
        p.optimum = p.solve();
        Ok(p)
    }

    /// Gradient descent at step `1/L` to a tight gradient tolerance.
    fn solve(&self) -> f64 {
        let mut x = vec![0.0; self.dim()];
        let eta = 1.0 / self.smoothness;
        for _ in 0..200_000 {
            let g = self.gradient(&x);
            if norm_sq(&g) < 1e-26 {
                break;
            }
            for (a, b) in x.iter_mut().zip(g) {
                *a -= eta * b;
            }
        }
        self.loss(&x)
    }
}

impl Problem for LogisticProblem {
    fn dim(&self) -> usize {
        self.data[0][0].0.len()
    }

    fn workers(&self) -> usize {
        self.data.len()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        (0..self.workers())
            .map(|i| self.worker_loss(i, x))
            .sum::<f64>()
            / self.workers() as f64
    }

    fn worker_loss(&self, worker: usize, x: &[f64]) -> f64 {
        let rows = &self.data[worker];
        let data: f64 = rows.iter().map(|(a, y)| softplus(-y * dot(a, x))).sum();
        data / rows.len() as f64 + 0.5 * self.ridge * norm_sq(x)
    }

    fn optimal_value(&self) -> f64 {
        self.optimum
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for i in 0..self.workers() {
            for (a, b) in g.iter_mut().zip(self.worker_gradient(i, x)) {
                *a += b;
            }
        }
        let m = self.workers() as f64;
        g.iter_mut().for_each(|a| *a /= m);
        g
    }

    fn worker_gradient(&self, worker: usize, x: &[f64]) -> Vec<f64> {
        let rows = &self.data[worker];
        let n = rows.len() as f64;
        let mut g: Vec<f64> = x.iter().map(|v| self.ridge * v).collect();
        for (a, y) in rows {
            let w = -y * sigmoid(-y * dot(a, x)) / n;
            for (gj, aj) in g.iter_mut().zip(a) {
                *gj += w * aj;
            }
        }
        g
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn noise(&self) -> NoiseModel {
        self.noise
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> LogisticSpec {
        LogisticSpec {
            dim: 5,
            workers: 3,
            samples_per_worker: 20,
            ridge: 0.05,
            xi: 0.3,
            sigma: 0.0,
            seed: 4,
        }
    }

    #[test]
    fn optimum_is_stationary() {
        let p = spec().build().unwrap();
        let x0 = p.initial_point();
        assert!(p.gap(&x0) > 0.0);
        assert!(p.optimal_value() <= p.loss(&x0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = spec().build().unwrap();
        let x = vec![0.3, -0.2, 0.1, 0.0, 0.5];
        let g = p.worker_gradient(1, &x);
        for j in 0..5 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let fd = (p.worker_loss(1, &a) - p.worker_loss(1, &b)) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-7);
        }
    }
}
