//! Synthetic objectives and their gradient oracles.

mod expdecay;
mod logistic;
mod noise;
mod quadratic;

pub use expdecay::ExpDecayOracle;
pub use logistic::{LogisticProblem, LogisticSpec};
pub use noise::NoiseModel;
pub use quadratic::{QuadraticProblem, QuadraticSpec, Spectrum};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::Rng;
use crate::vector::GradientVector;

/// `f = (1/M) sum_i f_i` split over `M` workers.
pub trait Problem: Sync {
    fn dim(&self) -> usize;
    fn workers(&self) -> usize;
    fn loss(&self, x: &[f64]) -> f64;
    fn worker_loss(&self, worker: usize, x: &[f64]) -> f64;
    fn optimal_value(&self) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn worker_gradient(&self, worker: usize, x: &[f64]) -> Vec<f64>;
    fn smoothness(&self) -> f64;
    fn initial_point(&self) -> Vec<f64>;
    fn noise(&self) -> NoiseModel;

    fn gap(&self, x: &[f64]) -> f64 {
        self.loss(x) - self.optimal_value()
    }

    /// `grad f_i(x) + noise`, unbiased with variance at most `sigma^2`.
    fn stochastic_gradient(
        &self,
        worker: usize,
        x: &[f64],
        rng: &mut Rng,
    ) -> Result<GradientVector> {
        let mut g = self.worker_gradient(worker, x);
        self.noise().perturb(&mut g, rng);
        GradientVector::new(g)
    }
}

/// Serializable problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic(QuadraticSpec),
    SignConflict,
    Logistic(LogisticSpec),
}

impl ProblemSpec {
    pub fn build(&self) -> Result<AnyProblem> {
        Ok(match self {
            ProblemSpec::Quadratic(s) => AnyProblem::Quadratic(s.build()?),
            ProblemSpec::SignConflict => AnyProblem::Quadratic(QuadraticProblem::sign_conflict()),
            ProblemSpec::Logistic(s) => AnyProblem::Logistic(s.build()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyProblem {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            AnyProblem::Quadratic($p) => $e,
            AnyProblem::Logistic($p) => $e,
        }
    };
}

impl Problem for AnyProblem {
    fn dim(&self) -> usize {
        delegate!(self, p => p.dim())
    }
    fn workers(&self) -> usize {
        delegate!(self, p => p.workers())
    }
    fn loss(&self, x: &[f64]) -> f64 {
        delegate!(self, p => p.loss(x))
    }
    fn worker_loss(&self, worker: usize, x: &[f64]) -> f64 {
        delegate!(self, p => p.worker_loss(worker, x))
    }
    fn optimal_value(&self) -> f64 {
        delegate!(self, p => p.optimal_value())
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        delegate!(self, p => p.gradient(x))
    }
    fn worker_gradient(&self, worker: usize, x: &[f64]) -> Vec<f64> {
        delegate!(self, p => p.worker_gradient(worker, x))
    }
    fn smoothness(&self) -> f64 {
        delegate!(self, p => p.smoothness())
    }
    fn initial_point(&self) -> Vec<f64> {
        delegate!(self, p => p.initial_point())
    }
    fn noise(&self) -> NoiseModel {
        delegate!(self, p => p.noise())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlmc::mean_and_std_error;
    use crate::vector::dot;

    fn quadratic() -> AnyProblem {
        let mut spec = QuadraticSpec::new(4, 3);
        spec.xi = 0.5;
        spec.sigma = 0.3;
        spec.seed = 2;
        ProblemSpec::Quadratic(spec).build().unwrap()
    }

    #[test]
    fn smoothness_inequality_at_random_points() {
        let problems = [
            quadratic(),
            ProblemSpec::Logistic(LogisticSpec {
                dim: 4,
                workers: 3,
                samples_per_worker: 10,
                ridge: 0.1,
                xi: 0.5,
                sigma: 0.0,
                seed: 1,
            })
            .build()
            .unwrap(),
        ];
        let mut rng = Rng::for_worker(77, 0, 0);
        for p in &problems {
            let l = p.smoothness();
            for _ in 0..100 {
                let x: Vec<f64> = (0..4).map(|_| 2.0 * rng.standard_normal()).collect();
                let y: Vec<f64> = (0..4).map(|_| 2.0 * rng.standard_normal()).collect();
                let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
                for i in 0..p.workers() {
                    let bound = p.worker_loss(i, &x)
                        + dot(&p.worker_gradient(i, &x), &diff)
                        + 0.5 * l * dot(&diff, &diff);
                    assert!(p.worker_loss(i, &y) <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn heterogeneity_bound_holds_everywhere() {
        let p = quadratic();
        let mut rng = Rng::for_worker(5, 0, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            let g = p.gradient(&x);
            let spread: f64 = (0..3)
                .map(|i| crate::vector::dist_sq(&p.worker_gradient(i, &x), &g))
                .sum::<f64>()
                / 3.0;
            assert!(spread <= 0.25 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn exact_gradients_without_noise() {
        let mut spec = QuadraticSpec::new(3, 1);
        spec.seed = 9;
        let p = spec.build().unwrap();
        let mut rng = Rng::for_worker(0, 0, 0);
        let g = p.stochastic_gradient(0, p.x_star(), &mut rng).unwrap();
        assert!(g.as_slice().iter().all(|x| x.abs() < 1e-15));
        let x = [0.4, 0.1, -0.3];
        assert_eq!(
            p.stochastic_gradient(0, &x, &mut rng).unwrap().as_slice(),
            p.worker_gradient(0, &x).as_slice()
        );
    }

    #[test]
    fn noisy_gradient_is_unbiased() {
        let p = quadratic();
        let x = [0.2, -0.1, 0.5, 1.0];
        let exact = p.worker_gradient(1, &x);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let mut rng = Rng::for_worker(3, 1, t as u64);
                p.stochastic_gradient(1, &x, &mut rng).unwrap().into_inner()
            })
            .collect();
        for j in 0..4 {
            let (mean, se) = mean_and_std_error(draws.iter().map(|d| d[j]));
            assert!((mean - exact[j]).abs() <= 5.0 * se, "coordinate {j}");
        }
        let (var, _) = mean_and_std_error(draws.iter().map(|d| crate::vector::dist_sq(d, &exact)));
        assert!((var - 0.09).abs() < 0.09 * 0.02);
    }

    #[test]
    fn spec_round_trip() {
        let spec = ProblemSpec::Quadratic(QuadraticSpec::new(3, 2));
        let text = toml::to_string(&spec).unwrap();
        let back: ProblemSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
