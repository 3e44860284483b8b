use serde::{Deserialize, Serialize};

use super::{NoiseModel, Problem};
use crate::error::{invalid, Error, Result};
use crate::rng::{Domain, Rng, StreamId};
use crate::vector::{dot, norm_sq};

/// Eigenvalue layout of the shared Hessian, largest eigenvalue `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Spectrum {
    /// All eigenvalues equal to `L`.
    Constant,
    /// Evenly spaced from `L` down to `mu`.
    Linear { mu: f64 },
    /// `L e^(-rate j)`.
    ExpDecay { rate: f64 },
}

impl Spectrum {
    fn eigenvalues(&self, dim: usize, smoothness: f64) -> Result<Vec<f64>> {
        let out: Vec<f64> = match *self {
            Spectrum::Constant => vec![smoothness; dim],
            Spectrum::Linear { mu } => {
                if !(mu > 0.0 && mu <= smoothness) {
                    return Err(invalid("mu", format!("{mu} not in (0, L]")));
                }
                (0..dim)
                    .map(|j| {
                        if dim == 1 {
                            smoothness
                        } else {
                            smoothness - (smoothness - mu) * j as f64 / (dim - 1) as f64
                        }
                    })
                    .collect()
            }
            Spectrum::ExpDecay { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(invalid("rate", format!("{rate} must be positive")));
                }
                (0..dim)
                    .map(|j| smoothness * (-rate * j as f64).exp())
                    .collect()
            }
        };
        Ok(out)
    }
}

fn default_smoothness() -> f64 {
    1.0
}

fn default_spectrum() -> Spectrum {
    Spectrum::Linear { mu: 0.1 }
}

fn default_true() -> bool {
    true
}

fn default_distance() -> f64 {
    1.0
}

/// Declarative description of a random quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub workers: usize,
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    #[serde(default = "default_spectrum")]
    pub spectrum: Spectrum,
    /// Heterogeneity: mean squared distance of worker gradients from the
    /// global gradient is `xi^2` at every point.
    #[serde(default)]
    pub xi: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub strict_noise: bool,
    /// Random orthogonal eigenbasis instead of the coordinate axes.
    #[serde(default = "default_true")]
    pub rotate: bool,
    /// `||x0 - x*||`, with `x0 = 0`.
    #[serde(default = "default_distance")]
    pub initial_distance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl QuadraticSpec {
    pub fn new(dim: usize, workers: usize) -> Self {
        Self {
            dim,
            workers,
            smoothness: default_smoothness(),
            spectrum: default_spectrum(),
            xi: 0.0,
            sigma: 0.0,
            strict_noise: false,
            rotate: true,
            initial_distance: default_distance(),
            seed: 0,
        }
    }

    pub fn build(&self) -> Result<QuadraticProblem> {
        let d = self.dim;
        if d == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if !(self.smoothness.is_finite() && self.smoothness > 0.0) {
            return Err(invalid("smoothness", "must be positive"));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(invalid("xi", "must be finite and non-negative"));
        }
        let stream = |k| Rng::new(self.seed, StreamId::new(Domain::Problem, 0, k));
        let eigenvalues = self.spectrum.eigenvalues(d, self.smoothness)?;
        let basis = self.rotate.then(|| random_orthogonal(d, &mut stream(0)));

        let mut rng = stream(1);
        let mut x_star: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let n = norm_sq(&x_star).sqrt();
        for x in &mut x_star {
            *x *= self.initial_distance / n;
        }

        let offsets = heterogeneous_offsets(d, self.workers, self.xi, &mut stream(2))?;
        QuadraticProblem::from_parts(
            eigenvalues,
            basis,
            x_star,
            offsets,
            vec![0.0; d],
            NoiseModel::new(self.sigma, self.strict_noise)?,
        )
    }
}

/// Random orthogonal matrix (row-major) by modified Gram-Schmidt on a
/// Gaussian matrix.
fn random_orthogonal(d: usize, rng: &mut Rng) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut c: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        for q in &cols {
            let proj = dot(q, &c);
            for (x, y) in c.iter_mut().zip(q) {
                *x -= proj * y;
            }
        }
        let n = norm_sq(&c).sqrt();
        if n > 1e-8 {
            c.iter_mut().for_each(|x| *x /= n);
            cols.push(c);
        }
    }
    let mut out = vec![0.0; d * d];
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            out[i * d + j] = x;
        }
    }
    out
}

/// Centered offsets with `(1/M) sum ||h_i||^2 = xi^2`.
fn heterogeneous_offsets(d: usize, m: usize, xi: f64, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if xi == 0.0 || m == 1 {
        return Ok(vec![vec![0.0; d]; m]);
    }
    let mut h: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| rng.standard_normal()).collect())
        .collect();
    for j in 0..d {
        let mean = h.iter().map(|r| r[j]).sum::<f64>() / m as f64;
        h.iter_mut().for_each(|r| r[j] -= mean);
    }
    let spread = h.iter().map(|r| norm_sq(r)).sum::<f64>() / m as f64;
    if spread == 0.0 {
        return Err(invalid(
            "xi",
            "cannot realize heterogeneity in this dimension",
        ));
    }
    let scale = xi / spread.sqrt();
    h.iter_mut().flatten().for_each(|x| *x *= scale);
    Ok(h)
}

/// `f_i(x) = 1/2 (x - x*)^T A (x - x*) + h_i^T (x - x*)` with shared
/// `A = Q diag(lambda) Q^T` and offsets summing to zero, so
/// `f(x) - f* = 1/2 (x - x*)^T A (x - x*)` and `f* = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    eigenvalues: Vec<f64>,
    basis: Option<Vec<f64>>,
    x_star: Vec<f64>,
    offsets: Vec<Vec<f64>>,
    x0: Vec<f64>,
    noise: NoiseModel,
}

impl QuadraticProblem {
    pub fn from_parts(
        eigenvalues: Vec<f64>,
        basis: Option<Vec<f64>>,
        x_star: Vec<f64>,
        offsets: Vec<Vec<f64>>,
        x0: Vec<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let d = eigenvalues.len();
        if d == 0 {
            return Err(Error::EmptyVector);
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid("eigenvalues", "must be finite and non-negative"));
        }
        let check = |len: usize| {
            if len == d {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: d,
                    actual: len,
                })
            }
        };
        check(x_star.len())?;
        check(x0.len())?;
        if let Some(q) = &basis {
            if q.len() != d * d {
                return Err(Error::DimensionMismatch {
                    expected: d * d,
                    actual: q.len(),
                });
            }
        }
        if offsets.is_empty() {
            return Err(invalid("workers", "must be at least 1"));
        }
        for h in &offsets {
            check(h.len())?;
        }
        Ok(Self {
            eigenvalues,
            basis,
            x_star,
            offsets,
            x0,
            noise,
        })
    }

    /// The standard pair of workers whose Top-1 choices cancel: `A = I`,
    /// `x* = (0, -1.5)`, `h = +-(2, 0)`, start at the origin.
    pub fn sign_conflict() -> Self {
        Self {
            eigenvalues: vec![1.0, 1.0],
            basis: None,
            x_star: vec![0.0, -1.5],
            offsets: vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
            x0: vec![0.0, 0.0],
            noise: NoiseModel::none(),
        }
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }

    /// `(1/M) sum_i ||grad f_i - grad f||^2`, the same at every point.
    pub fn heterogeneity_sq(&self) -> f64 {
        self.offsets.iter().map(|h| norm_sq(h)).sum::<f64>() / self.offsets.len() as f64
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_initial_point(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.x_star.len() {
            return Err(Error::DimensionMismatch {
                expected: self.x_star.len(),
                actual: x0.len(),
            });
        }
        self.x0 = x0;
        Ok(self)
    }

    /// `A y`.
    pub fn hessian_apply(&self, y: &[f64]) -> Vec<f64> {
        let d = y.len();
        match &self.basis {
            None => y
                .iter()
                .zip(&self.eigenvalues)
                .map(|(a, l)| a * l)
                .collect(),
            Some(q) => {
                // Q^T y, scale, then Q
                let mut z = vec![0.0; d];
                for (i, &yi) in y.iter().enumerate() {
                    let row = &q[i * d..(i + 1) * d];
                    for (zj, qij) in z.iter_mut().zip(row) {
                        *zj += qij * yi;
                    }
                }
                for (zj, l) in z.iter_mut().zip(&self.eigenvalues) {
                    *zj *= l;
                }
                (0..d).map(|i| dot(&q[i * d..(i + 1) * d], &z)).collect()
            }
        }
    }

    fn displacement(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x_star).map(|(a, b)| a - b).collect()
    }
}

impl Problem for QuadraticProblem {
    fn dim(&self) -> usize {
        self.x_star.len()
    }

    fn workers(&self) -> usize {
        self.offsets.len()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        let g = self.displacement(x);
        0.5 * dot(&g, &self.hessian_apply(&g))
    }

    fn worker_loss(&self, worker: usize, x: &[f64]) -> f64 {
        let g = self.displacement(x);
        0.5 * dot(&g, &self.hessian_apply(&g)) + dot(&self.offsets[worker], &g)
    }

    fn optimal_value(&self) -> f64 {
        0.0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.hessian_apply(&self.displacement(x))
    }

    fn worker_gradient(&self, worker: usize, x: &[f64]) -> Vec<f64> {
        let mut g = self.gradient(x);
        for (a, h) in g.iter_mut().zip(&self.offsets[worker]) {
            *a += h;
        }
        g
    }

    fn smoothness(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, &l| m.max(l))
    }

    fn initial_point(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn noise(&self) -> NoiseModel {
        self.noise
    }
}
