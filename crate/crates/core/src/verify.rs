//! Named property suites with measured-vs-expected reporting.

use std::fmt;

use serde::Serialize;

use crate::compressors::{
    uncompressed_bits, Compressor, FixedScale, MultilevelCompressor, FIXED_POINT_LEVELS,
    FLOATING_POINT_LEVELS,
};
use crate::error::{Error, Result};
use crate::mlmc::{
    adaptive_distribution, analytic_variance, bitwise_worst_case_second_moment,
    distribution_from_alpha, estimate_at_level, exp_decay_variance_prediction,
    fixed_point_comp_variance, fixed_point_distribution, floating_point_comp_variance,
    floating_point_distribution, optimal_comp_variance, variance_with_samples, LevelDistribution,
};
use crate::problems::{ExpDecayOracle, QuadraticSpec, Spectrum};
use crate::rng::{Domain, Rng, StreamId};
use crate::simulator::{variance_probe, DistributionMode, Method};
use crate::vector::{dist_sq, GradientVector};

pub const SUITES: [&str; 6] = [
    "unbiasedness",
    "optimal-probs",
    "variance-closed-forms",
    "expdecay",
    "bits",
    "scaling",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    /// How `measured` is compared against `expected`.
    pub criterion: String,
    pub pass: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.6e}, expected {:.6e} ({})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.expected,
            self.criterion
        )
    }
}

fn check(
    name: impl Into<String>,
    measured: f64,
    expected: f64,
    criterion: impl Into<String>,
    pass: bool,
) -> Check {
    Check {
        name: name.into(),
        measured,
        expected,
        criterion: criterion.into(),
        pass,
    }
}

pub fn run_suite(name: &str) -> Result<Vec<Check>> {
    match name {
        "unbiasedness" => unbiasedness(),
        "optimal-probs" => optimal_probs(),
        "variance-closed-forms" => variance_closed_forms(),
        "expdecay" => expdecay(),
        "bits" => bits(),
        "scaling" => scaling(),
        other => Err(Error::Config(format!(
            "unknown suite {other:?}; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

/// The compressors every suite iterates over.
pub fn suite_compressors() -> Vec<Compressor> {
    vec![
        Compressor::TopK,
        Compressor::SegmentedTopK { segment: 3 },
        Compressor::FixedPoint {
            scale: FixedScale::MaxAbs,
        },
        Compressor::FloatingPoint,
        Compressor::Rtn {
            clip: 2.0,
            grid_levels: 8,
        },
    ]
}

/// `count` Gaussian vectors with dimensions in `1..=max_dim`.
pub fn random_vectors(count: usize, max_dim: usize, stream: u64) -> Vec<GradientVector> {
    (0..count)
        .map(|i| {
            let mut rng = Rng::new(0, StreamId::new(Domain::Verify, stream, i as u64));
            let d = 1 + rng.below(max_dim);
            let v = (0..d).map(|_| rng.standard_normal()).collect();
            GradientVector::new(v).expect("finite draws")
        })
        .collect()
}

/// `sum_l p^l g~(l)` over every level with positive probability.
pub fn enumerated_mean(
    c: &Compressor,
    v: &GradientVector,
    dist: &LevelDistribution,
) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; v.dim()];
    for l in 1..=dist.num_levels() {
        let p = dist.prob(l);
        if p == 0.0 {
            continue;
        }
        let e = estimate_at_level(c, v, dist, l)?;
        for (m, x) in mean.iter_mut().zip(e.estimate.as_slice()) {
            *m += p * x;
        }
    }
    Ok(mean)
}

/// `sum_l p^l ||g~(l) - v||^2` by enumeration.
pub fn enumerated_comp_variance(
    c: &Compressor,
    v: &GradientVector,
    dist: &LevelDistribution,
) -> Result<f64> {
    let mut total = 0.0;
    for l in 1..=dist.num_levels() {
        let p = dist.prob(l);
        if p > 0.0 {
            total += p * dist_sq(
                estimate_at_level(c, v, dist, l)?.estimate.as_slice(),
                v.as_slice(),
            );
        }
    }
    Ok(total)
}

/// Relative error, floored at `1e-6 ||v||^2` so that mathematically zero
/// variances are compared on the scale of the input.
fn relative(a: f64, b: f64, v: &GradientVector) -> f64 {
    (a - b).abs() / b.abs().max(1e-6 * v.norms().l2_squared)
}

/// Distance of a sample mean from its target in standard errors. The
/// error is floored at rounding level, since under the adaptive
/// distribution `||g~||^2` can be the same for every level.
pub fn z_score(mean: f64, se: f64, target: f64) -> f64 {
    (mean - target).abs() / se.max(1e-12 * target.abs()).max(f64::MIN_POSITIVE)
}

fn distributions_for(
    c: &Compressor,
    v: &GradientVector,
) -> Result<Vec<(&'static str, LevelDistribution)>> {
    let mut out = vec![("adaptive", adaptive_distribution(c, v)?)];
    match c {
        Compressor::FixedPoint { .. } => out.push(("geometric", fixed_point_distribution())),
        Compressor::FloatingPoint => out.push(("geometric", floating_point_distribution())),
        _ => out.push((
            "uniform",
            LevelDistribution::uniform(c.num_levels(v.dim()))?,
        )),
    }
    Ok(out)
}

fn unbiasedness() -> Result<Vec<Check>> {
    let vectors = random_vectors(50, 32, 1);
    let mut checks = Vec::new();
    for c in suite_compressors() {
        let mut worst: f64 = 0.0;
        for v in &vectors {
            for (_, dist) in distributions_for(&c, v)? {
                let mean = enumerated_mean(&c, v, &dist)?;
                let err = dist_sq(&mean, v.as_slice()).sqrt() / v.norms().l2_squared.sqrt();
                worst = worst.max(err);
            }
        }
        checks.push(check(
            format!("{} enumerated mean over 50 vectors", c.name()),
            worst,
            0.0,
            "max relative error <= 1e-12",
            worst <= 1e-12,
        ));
    }
    Ok(checks)
}

/// Multiplies each probability by `exp(N(0, spread^2))` and renormalizes.
pub fn perturb(dist: &LevelDistribution, spread: f64, rng: &mut Rng) -> LevelDistribution {
    let raw: Vec<f64> = dist
        .probs()
        .iter()
        .map(|p| p * (spread * rng.standard_normal()).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    LevelDistribution::new(raw.into_iter().map(|p| p / total).collect()).expect("positive weights")
}

fn optimal_probs() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (label, dist, levels) in [
        (
            "fixed-point",
            fixed_point_distribution(),
            FIXED_POINT_LEVELS,
        ),
        (
            "floating-point",
            floating_point_distribution(),
            FLOATING_POINT_LEVELS,
        ),
    ] {
        let norm = 1.0 - 0.5f64.powi(levels as i32);
        let err = (1..=levels)
            .map(|l| (dist.prob(l) - 0.5f64.powi(l as i32) / norm).abs())
            .fold(0.0, f64::max);
        checks.push(check(
            format!("{label} p^l = 2^-l/(1-2^-{levels})"),
            err,
            0.0,
            "max abs error <= 1e-15",
            err <= 1e-15,
        ));
        let sum: f64 = dist.probs().iter().sum();
        checks.push(check(
            format!("{label} probabilities sum"),
            sum,
            1.0,
            "abs error <= 1e-15",
            (sum - 1.0).abs() <= 1e-15,
        ));
    }
    let vectors = random_vectors(50, 32, 2);
    let mut rng = Rng::new(0, StreamId::new(Domain::Verify, 2, u64::MAX));
    for (c, dist) in [
        (
            Compressor::FixedPoint {
                scale: FixedScale::MaxAbs,
            },
            fixed_point_distribution(),
        ),
        (Compressor::FloatingPoint, floating_point_distribution()),
    ] {
        let mut worst_ratio = f64::INFINITY;
        for v in &vectors {
            let base = bitwise_worst_case_second_moment(&c, v, &dist)?;
            for _ in 0..100 {
                let other =
                    bitwise_worst_case_second_moment(&c, v, &perturb(&dist, 0.5, &mut rng))?;
                worst_ratio = worst_ratio.min(other / base);
            }
        }
        checks.push(check(
            format!(
                "{} worst-case second moment vs 5000 perturbations",
                c.name()
            ),
            worst_ratio,
            1.0,
            "min perturbed/geometric >= 1",
            worst_ratio >= 1.0,
        ));
    }
    Ok(checks)
}

fn variance_closed_forms() -> Result<Vec<Check>> {
    let vectors = random_vectors(50, 32, 3);
    let mut checks = Vec::new();
    for c in suite_compressors() {
        let mut worst: f64 = 0.0;
        for v in &vectors {
            let dist = adaptive_distribution(&c, v)?;
            worst = worst.max(relative(
                optimal_comp_variance(&c, v)?,
                enumerated_comp_variance(&c, v, &dist)?,
                v,
            ));
        }
        checks.push(check(
            format!("{} optimal variance closed form", c.name()),
            worst,
            0.0,
            "max relative error <= 1e-9",
            worst <= 1e-9,
        ));
    }
    let fixed = Compressor::FixedPoint {
        scale: FixedScale::MaxAbs,
    };
    let mut worst_fixed: f64 = 0.0;
    let mut worst_float: f64 = 0.0;
    for v in &vectors {
        let scale = v.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let e = enumerated_comp_variance(&fixed, v, &fixed_point_distribution())?;
        worst_fixed = worst_fixed.max(relative(fixed_point_comp_variance(v, scale), e, v));
        let e = enumerated_comp_variance(
            &Compressor::FloatingPoint,
            v,
            &floating_point_distribution(),
        )?;
        worst_float = worst_float.max(relative(floating_point_comp_variance(v), e, v));
    }
    checks.push(check(
        "fixed_point geometric variance closed form",
        worst_fixed,
        0.0,
        "max relative error <= 1e-9",
        worst_fixed <= 1e-9,
    ));
    checks.push(check(
        "floating_point geometric variance closed form",
        worst_float,
        0.0,
        "max relative error <= 1e-9",
        worst_float <= 1e-9,
    ));
    let mut rng = Rng::new(0, StreamId::new(Domain::Verify, 3, u64::MAX));
    for c in suite_compressors() {
        let mut worst_z: f64 = 0.0;
        for v in vectors.iter().take(5) {
            for (_, dist) in distributions_for(&c, v)? {
                let r = variance_with_samples(&c, v, &dist, 100_000, &mut rng)?;
                let m = r.empirical_second_moment.unwrap_or(f64::NAN);
                let se = r.empirical_std_error.unwrap_or(0.0);
                worst_z = worst_z.max(z_score(m, se, r.analytic_second_moment));
            }
        }
        checks.push(check(
            format!("{} empirical second moment, 1e5 samples", c.name()),
            worst_z,
            0.0,
            "max |z| <= 5 standard errors",
            worst_z <= 5.0,
        ));
    }
    Ok(checks)
}

fn expdecay() -> Result<Vec<Check>> {
    let d = 10_000;
    let mut checks = Vec::new();
    for r in [0.01f64, 0.05] {
        for rs in [0.25, 0.5, 1.0] {
            let s = (rs / r).round() as usize;
            let oracle = ExpDecayOracle::new(d, r, 1.0)?;
            let mut rng = Rng::new(0, StreamId::new(Domain::Verify, 4, s as u64));
            let v = oracle.sample(&mut rng);
            let c = Compressor::SegmentedTopK { segment: s };
            let omega = analytic_variance(&c, &v, &adaptive_distribution(&c, &v)?)?.omega_hat;
            let predicted = exp_decay_variance_prediction(r, s as f64, 1.0);
            let ratio = omega / predicted;
            checks.push(check(
                format!("r={r} s={s} variance ratio"),
                omega,
                predicted,
                "within factor 2",
                (0.5..=2.0).contains(&ratio),
            ));
            let randk = (d as f64 / s as f64) - 1.0;
            checks.push(check(
                format!("r={r} s={s} below Rand-k(k=s)"),
                omega,
                randk,
                "measured < expected",
                omega < randk,
            ));
        }
    }
    Ok(checks)
}

fn bits() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let d = 1000;
    let mut rng = Rng::new(0, StreamId::new(Domain::Verify, 5, 0));
    let v = GradientVector::new((0..d).map(|_| rng.standard_normal()).collect())?;
    let fixed = Compressor::FixedPoint {
        scale: FixedScale::MaxAbs,
    };
    for (c, expected, label) in [
        (fixed, 2070u64, "fixed-point d=1000"),
        (
            Compressor::FloatingPoint,
            13 * d as u64 + 6,
            "floating-point d=1000",
        ),
    ] {
        let levels = c.num_levels(d);
        let sizes: Vec<u64> = [1, levels / 2, levels]
            .iter()
            .map(|&l| c.residual(&v, l).map(|p| c.encoded_bits(&p)))
            .collect::<Result<_>>()?;
        let all_equal = sizes.iter().all(|&b| b == expected);
        checks.push(check(
            format!("{label} message bits"),
            sizes[0] as f64,
            expected as f64,
            "exact, at levels 1, L/2, L",
            all_equal,
        ));
    }
    let raw = uncompressed_bits(d);
    checks.push(check(
        "uncompressed d=1000 bits",
        raw as f64,
        64_000.0,
        "exact",
        raw == 64_000,
    ));
    Ok(checks)
}

/// Per-worker variance times `M`, relative to `M = 1`, at a fixed point.
pub fn scaling_ratios(samples: usize) -> Result<Vec<(usize, f64, f64)>> {
    let method = Method::Mlmc {
        compressor: Compressor::TopK,
        distribution: DistributionMode::Adaptive,
    };
    let mut out = Vec::new();
    let mut base = None;
    for m in [1, 4, 16] {
        let mut spec = QuadraticSpec::new(20, m);
        spec.sigma = 0.5;
        spec.spectrum = Spectrum::Linear { mu: 0.1 };
        spec.seed = 7;
        let p = spec.build()?;
        let x = vec![0.3; 20];
        let probe = variance_probe(&p, &method, &x, samples, 11)?;
        let scaled = probe.mean * m as f64;
        let b = *base.get_or_insert(scaled);
        out.push((m, probe.mean, scaled / b));
    }
    Ok(out)
}

fn scaling() -> Result<Vec<Check>> {
    Ok(scaling_ratios(20_000)?
        .into_iter()
        .map(|(m, var, ratio)| {
            check(
                format!("M={m} variance x M relative to M=1"),
                ratio,
                1.0,
                format!("within 20% (variance {var:.4e})"),
                (ratio - 1.0).abs() <= 0.2,
            )
        })
        .collect())
}

/// Checks that the two forms of the adaptive distribution coincide.
pub fn alpha_form_gap(segment: usize, v: &GradientVector) -> Result<f64> {
    let c = Compressor::SegmentedTopK { segment };
    let a = adaptive_distribution(&c, v)?;
    let b = distribution_from_alpha(&c.alpha_profile(v)?)?;
    Ok(a.probs()
        .iter()
        .zip(b.probs())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
