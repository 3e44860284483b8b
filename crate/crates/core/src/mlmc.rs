//! The MLMC estimator and its level distributions.
//!
//! Given a multilevel compressor and a distribution `p` over levels `1..=L`,
//! the estimator draws `l ~ p` and returns `g0 + (g^l - g^(l-1)) / p^l`, where
//! `g0 = C^0(v)` (zero for every compressor except floating-point). Averaging
//! over `l` telescopes to `C^L(v)`.

use serde::{Deserialize, Serialize};

use crate::compressors::{
    zero_message_bits, FixedPoint, MultilevelCompressor, FIXED_POINT_LEVELS, FLOATING_POINT_LEVELS,
};
use crate::error::{Error, Result};
use crate::message::{pow2, Payload, ResidualMessage};
use crate::rng::{sample_validated, validate_probabilities, Rng};
use crate::vector::{dot, norm_sq, GradientVector};

/// Probabilities `p^1..p^L` (stored 0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LevelDistribution {
    probs: Vec<f64>,
}

impl LevelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_probabilities(&probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidDistribution("no levels".into()));
        }
        Ok(Self {
            probs: vec![1.0 / levels as f64; levels],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_levels(&self) -> usize {
        self.probs.len()
    }

    /// `p^level`, 1-based.
    pub fn prob(&self, level: usize) -> f64 {
        self.probs[level - 1]
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        sample_validated(rng, &self.probs)
    }

    fn check_levels(&self, levels: usize) -> Result<()> {
        if self.probs.len() != levels {
            return Err(Error::InvalidDistribution(format!(
                "{} probabilities for a {levels}-level compressor",
                self.probs.len()
            )));
        }
        Ok(())
    }

    /// Zero probability is only allowed on levels whose residual vanishes.
    pub fn check_support(&self, deltas: &[f64]) -> Result<()> {
        for (l, (&p, &delta)) in self.probs.iter().zip(deltas).enumerate() {
            if p == 0.0 && delta > 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "level {} has a nonzero residual but probability 0",
                    l + 1
                )));
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for LevelDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<LevelDistribution> for Vec<f64> {
    fn from(d: LevelDistribution) -> Self {
        d.probs
    }
}

fn geometric_distribution(levels: usize) -> LevelDistribution {
    let norm = 1.0 - pow2(-(levels as i32));
    LevelDistribution {
        probs: (1..=levels).map(|l| pow2(-(l as i32)) / norm).collect(),
    }
}

/// `p^l = 2^-l / (1 - 2^-63)`.
pub fn fixed_point_distribution() -> LevelDistribution {
    geometric_distribution(FIXED_POINT_LEVELS)
}

/// `p^l = 2^-l / (1 - 2^-52)`.
pub fn floating_point_distribution() -> LevelDistribution {
    geometric_distribution(FLOATING_POINT_LEVELS)
}

/// Per-vector optimum `p^l = Delta^l / sum Delta`.
///
/// If every residual vanishes (the input equals its own level-0 image) any
/// distribution is exact and the uniform one is returned.
pub fn adaptive_distribution<C>(desc: &C, v: &GradientVector) -> Result<LevelDistribution>
where
    C: MultilevelCompressor + ?Sized,
{
    if v.is_zero() {
        return Err(Error::ZeroVector);
    }
    distribution_from_deltas(&desc.residual_norms(v)?)
}

pub fn distribution_from_deltas(deltas: &[f64]) -> Result<LevelDistribution> {
    let total: f64 = deltas.iter().sum();
    if total == 0.0 {
        return LevelDistribution::uniform(deltas.len());
    }
    LevelDistribution::new(deltas.iter().map(|d| d / total).collect())
}

/// The same optimum written with retained-energy fractions,
/// `p^l ~ sqrt(alpha^l - alpha^(l-1))`.
pub fn distribution_from_alpha(alpha: &[f64]) -> Result<LevelDistribution> {
    if alpha.len() < 2 {
        return Err(Error::InvalidDistribution(
            "alpha profile needs levels 0..=L".into(),
        ));
    }
    let weights: Vec<f64> = alpha
        .windows(2)
        .map(|w| (w[1] - w[0]).max(0.0).sqrt())
        .collect();
    distribution_from_deltas(&weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcEstimate {
    pub estimate: GradientVector,
    /// 0 when the designated zero message was sent without drawing a level.
    pub sampled_level: usize,
    pub prob_used: f64,
    pub message: ResidualMessage,
}

/// `g0 + payload / p`, with `g0` taken from the payload when it carries one.
pub fn reconstruct(payload: &Payload, prob: f64) -> Vec<f64> {
    let residual = payload.densify();
    match payload.base() {
        Some(base) => base
            .iter()
            .zip(&residual)
            .map(|(b, r)| b + r / prob)
            .collect(),
        None => residual.into_iter().map(|r| r / prob).collect(),
    }
}

fn build<C>(desc: &C, v: &GradientVector, level: usize, prob: f64) -> Result<MlmcEstimate>
where
    C: MultilevelCompressor + ?Sized,
{
    let payload = desc.residual(v, level)?;
    let bit_cost = desc.encoded_bits(&payload);
    Ok(MlmcEstimate {
        estimate: GradientVector::from_trusted(reconstruct(&payload, prob)),
        sampled_level: level,
        prob_used: prob,
        message: ResidualMessage {
            payload,
            level,
            prob,
            bit_cost,
        },
    })
}

fn zero_estimate(dim: usize, levels: usize) -> MlmcEstimate {
    MlmcEstimate {
        estimate: GradientVector::from_trusted(vec![0.0; dim]),
        sampled_level: 0,
        prob_used: 1.0,
        message: ResidualMessage {
            payload: Payload::Zero { dim },
            level: 0,
            prob: 1.0,
            bit_cost: zero_message_bits(levels),
        },
    }
}

/// One draw of the estimator under a fixed distribution.
pub fn estimate<C>(
    desc: &C,
    v: &GradientVector,
    dist: &LevelDistribution,
    rng: &mut Rng,
) -> Result<MlmcEstimate>
where
    C: MultilevelCompressor + ?Sized,
{
    dist.check_levels(desc.num_levels(v.dim()))?;
    if dist.probs.contains(&0.0) {
        dist.check_support(&desc.residual_norms_sq(v)?)?;
    }
    let level = dist.sample(rng);
    build(desc, v, level, dist.prob(level))
}

/// One draw under the per-vector optimal distribution. A zero vector sends
/// the designated zero message.
pub fn estimate_adaptive<C>(desc: &C, v: &GradientVector, rng: &mut Rng) -> Result<MlmcEstimate>
where
    C: MultilevelCompressor + ?Sized,
{
    let levels = desc.num_levels(v.dim());
    if v.is_zero() {
        return Ok(zero_estimate(v.dim(), levels));
    }
    let dist = adaptive_distribution(desc, v)?;
    let level = dist.sample(rng);
    build(desc, v, level, dist.prob(level))
}

/// The estimate produced when `level` is drawn, for exact enumeration.
pub fn estimate_at_level<C>(
    desc: &C,
    v: &GradientVector,
    dist: &LevelDistribution,
    level: usize,
) -> Result<MlmcEstimate>
where
    C: MultilevelCompressor + ?Sized,
{
    dist.check_levels(desc.num_levels(v.dim()))?;
    build(desc, v, level, dist.prob(level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// `E ||g~||^2`.
    pub analytic_second_moment: f64,
    /// `E ||g~ - C^L(v)||^2`.
    pub analytic_comp_variance: f64,
    pub empirical_second_moment: Option<f64>,
    pub empirical_std_error: Option<f64>,
    /// `sigma_comp^2 / ||v||^2`, per vector.
    pub omega_hat: f64,
}

/// Exact moments of the estimator for one vector and distribution.
pub fn analytic_variance<C>(
    desc: &C,
    v: &GradientVector,
    dist: &LevelDistribution,
) -> Result<VarianceReport>
where
    C: MultilevelCompressor + ?Sized,
{
    let levels = desc.num_levels(v.dim());
    dist.check_levels(levels)?;
    let deltas_sq = desc.residual_norms_sq(v)?;
    dist.check_support(&deltas_sq)?;
    let weighted: f64 = deltas_sq
        .iter()
        .zip(&dist.probs)
        .filter(|(d, _)| **d > 0.0)
        .map(|(d, p)| d / p)
        .sum();
    let base = desc.compress(v, 0)?;
    let top = desc.compress(v, levels)?;
    let b = base.as_slice();
    let spread: Vec<f64> = top.as_slice().iter().zip(b).map(|(t, b)| t - b).collect();
    let second = norm_sq(b) + 2.0 * dot(b, &spread) + weighted;
    let comp = weighted - norm_sq(&spread);
    let v_sq = v.norms().l2_squared;
    Ok(VarianceReport {
        analytic_second_moment: second,
        analytic_comp_variance: comp,
        empirical_second_moment: None,
        empirical_std_error: None,
        omega_hat: if v_sq > 0.0 { comp / v_sq } else { 0.0 },
    })
}

/// [`analytic_variance`] plus a Monte Carlo estimate of `E ||g~||^2`.
pub fn variance_with_samples<C>(
    desc: &C,
    v: &GradientVector,
    dist: &LevelDistribution,
    samples: usize,
    rng: &mut Rng,
) -> Result<VarianceReport>
where
    C: MultilevelCompressor + ?Sized,
{
    let mut report = analytic_variance(desc, v, dist)?;
    // one estimate per level, then sample indices
    let per_level: Vec<f64> = (1..=dist.num_levels())
        .map(|l| {
            if dist.prob(l) == 0.0 {
                Ok(0.0)
            } else {
                estimate_at_level(desc, v, dist, l).map(|e| e.estimate.norms().l2_squared)
            }
        })
        .collect::<Result<_>>()?;
    let (mean, se) = mean_and_std_error((0..samples).map(|_| per_level[dist.sample(rng) - 1]));
    report.empirical_second_moment = Some(mean);
    report.empirical_std_error = Some(se);
    Ok(report)
}

/// Sample mean and its standard error (Welford).
pub fn mean_and_std_error(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let mut n = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for x in xs {
        n += 1.0;
        let delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
    }
    if n < 2.0 {
        return (mean, 0.0);
    }
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

/// `(sum Delta)^2 - ||C^L(v) - C^0(v)||^2`, the compression variance at the
/// adaptive optimum.
pub fn optimal_comp_variance<C>(desc: &C, v: &GradientVector) -> Result<f64>
where
    C: MultilevelCompressor + ?Sized,
{
    let levels = desc.num_levels(v.dim());
    let total: f64 = desc.residual_norms(v)?.iter().sum();
    let base = desc.compress(v, 0)?;
    let top = desc.compress(v, levels)?;
    Ok(total * total - crate::vector::dist_sq(top.as_slice(), base.as_slice()))
}

/// `(1 - 2^-63) * scale * ||v||_1 - ||v||^2` under the geometric distribution.
pub fn fixed_point_comp_variance(v: &GradientVector, scale: f64) -> f64 {
    let n = v.norms();
    (1.0 - pow2(-63)) * scale * n.l1 - n.l2_squared
}

/// Floating-point analogue under the geometric distribution. Each entry
/// contributes `u (1 - 2^-52) f - f^2` with `u` its leading unit and
/// `f = |e| - |C^0(e)|` the part carried by the mantissa.
pub fn floating_point_comp_variance(v: &GradientVector) -> f64 {
    let factor = 1.0 - pow2(-52);
    let mut total = 0.0;
    for &e in v.as_slice() {
        let u = crate::compressors::unit_weight(e);
        let lead = if e.to_bits() & (0x7FF << 52) == 0 {
            0.0
        } else {
            u
        };
        let f = e.abs() - lead;
        total += u * factor * f - f * f;
    }
    total
}

/// Second moment when every bit is set, the objective the geometric
/// distributions minimize. Only the bitwise compressors have one.
pub fn bitwise_worst_case_second_moment(
    kind: &crate::compressors::Compressor,
    v: &GradientVector,
    dist: &LevelDistribution,
) -> Result<f64> {
    use crate::compressors::Compressor;
    let (levels, weight) = match *kind {
        Compressor::FixedPoint { scale } => {
            let s = FixedPoint { scale }.encode(v)?.scale;
            (FIXED_POINT_LEVELS, s * s * v.dim() as f64)
        }
        Compressor::FloatingPoint => {
            let w = v
                .as_slice()
                .iter()
                .map(|&e| {
                    let u = crate::compressors::unit_weight(e);
                    u * u
                })
                .sum();
            (FLOATING_POINT_LEVELS, w)
        }
        _ => {
            return Err(Error::Unsupported(
                "worst-case objective of non-bitwise compressors",
            ))
        }
    };
    dist.check_levels(levels)?;
    let sum: f64 = dist
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| pow2(-2 * (i as i32 + 1)) / p)
        .sum();
    Ok(weight * sum)
}

/// `||v||^2 (4 / (r s) - 1)`, the small-`rs` approximation for adaptive
/// s-Top-k on exponentially decaying vectors.
pub fn exp_decay_variance_prediction(r: f64, s: f64, v_norm_sq: f64) -> f64 {
    v_norm_sq * (4.0 / (r * s) - 1.0)
}

/// The exact compression variance for the same setting, by direct
/// summation over the blocks of sorted weights `e^(-r j)`.
pub fn exp_decay_variance_exact(r: f64, s: usize, d: usize, v_norm_sq: f64) -> f64 {
    let weights: Vec<f64> = (0..d).map(|j| (-r * j as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    let sum_delta: f64 = weights
        .chunks(s)
        .map(|c| c.iter().sum::<f64>().sqrt())
        .sum();
    v_norm_sq * (sum_delta * sum_delta / total - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressors::{Compressor, FixedScale, SegmentedTopK};

    fn gv(v: &[f64]) -> GradientVector {
        GradientVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn geometric_distributions() {
        let p = fixed_point_distribution();
        assert_eq!(p.num_levels(), 63);
        assert_eq!(p.prob(1), 0.5 / (1.0 - 2f64.powi(-63)));
        assert_eq!(p.prob(2) / p.prob(1), 0.5);
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let p = floating_point_distribution();
        assert_eq!(p.prob(1), 0.5 / (1.0 - 2f64.powi(-52)));
        assert_eq!(p.prob(52), 2f64.powi(-52) / (1.0 - 2f64.powi(-52)));
    }

    #[test]
    fn adaptive_top_k_example() {
        let v = gv(&[4.0, -3.0]);
        let p = adaptive_distribution(&SegmentedTopK::top_k(), &v).unwrap();
        assert!((p.prob(1) - 4.0 / 7.0).abs() < 1e-15);
        assert!((p.prob(2) - 3.0 / 7.0).abs() < 1e-15);
        let alpha = SegmentedTopK::top_k().alpha_profile(&v).unwrap();
        let q = distribution_from_alpha(&alpha).unwrap();
        for l in 1..=2 {
            assert!((p.prob(l) - q.prob(l)).abs() < 1e-12);
        }
        let u = adaptive_distribution(&SegmentedTopK::top_k(), &gv(&[1.0; 4])).unwrap();
        assert_eq!(u.probs(), &[0.25; 4]);
    }

    #[test]
    fn sampled_top_k_estimate() {
        let v = gv(&[4.0, -3.0]);
        let dist = LevelDistribution::new(vec![4.0 / 7.0, 3.0 / 7.0]).unwrap();
        let e = estimate_at_level(&SegmentedTopK::top_k(), &v, &dist, 2).unwrap();
        let g = e.estimate.as_slice();
        assert_eq!(g[0], 0.0);
        assert!((g[1] + 7.0).abs() < 1e-14);
        assert_eq!(e.message.bit_cost, 64 + 1 + 1);
    }

    #[test]
    fn analytic_top_k_example() {
        let v = gv(&[4.0, -3.0]);
        let c = SegmentedTopK::top_k();
        let dist = adaptive_distribution(&c, &v).unwrap();
        let r = analytic_variance(&c, &v, &dist).unwrap();
        assert!((r.analytic_second_moment - 49.0).abs() < 1e-12);
        assert!((r.analytic_comp_variance - 24.0).abs() < 1e-12);
        assert!((optimal_comp_variance(&c, &v).unwrap() - 24.0).abs() < 1e-12);
        assert!((r.omega_hat - 24.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn identity_has_no_compression_variance() {
        let v = gv(&[0.3, -2.0, 5.0]);
        let dist = LevelDistribution::uniform(1).unwrap();
        let r = analytic_variance(&Compressor::Identity, &v, &dist).unwrap();
        assert_eq!(r.analytic_comp_variance, 0.0);
        let mut rng = Rng::for_worker(1, 0, 0);
        assert_eq!(
            estimate(&Compressor::Identity, &v, &dist, &mut rng)
                .unwrap()
                .estimate,
            v
        );
    }

    #[test]
    fn fixed_point_single_entry_variance() {
        // levels 1 and 2 carry 0.5 and 0.25
        let v = gv(&[0.75]);
        let c = FixedPoint::new(FixedScale::Fixed(1.0)).unwrap();
        let r = analytic_variance(&c, &v, &fixed_point_distribution()).unwrap();
        let expected = (1.0 - 2f64.powi(-63)) * 0.75 - 0.5625;
        assert!((r.analytic_comp_variance - expected).abs() < 1e-15);
        assert!((fixed_point_comp_variance(&v, 1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn support_rule() {
        let c = SegmentedTopK::top_k();
        let v = gv(&[3.0, 0.0, 0.0]);
        let dist = adaptive_distribution(&c, &v).unwrap();
        assert_eq!(dist.probs(), &[1.0, 0.0, 0.0]);
        let bad = LevelDistribution::new(vec![0.0, 0.5, 0.5]).unwrap();
        let mut rng = Rng::for_worker(0, 0, 0);
        assert!(matches!(
            estimate(&c, &v, &bad, &mut rng),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(analytic_variance(&c, &v, &bad).is_err());
    }

    #[test]
    fn zero_vector_handling() {
        let c = SegmentedTopK::top_k();
        let v = GradientVector::zeros(4).unwrap();
        assert_eq!(adaptive_distribution(&c, &v), Err(Error::ZeroVector));
        let mut rng = Rng::for_worker(0, 0, 0);
        let e = estimate_adaptive(&c, &v, &mut rng).unwrap();
        assert!(e.estimate.is_zero());
        assert_eq!(e.message.bit_cost, 3);
    }

    #[test]
    fn wrong_length_distribution_rejected() {
        let v = gv(&[1.0, 2.0]);
        let dist = LevelDistribution::uniform(3).unwrap();
        let mut rng = Rng::for_worker(0, 0, 0);
        assert!(estimate(&SegmentedTopK::top_k(), &v, &dist, &mut rng).is_err());
    }

    #[test]
    fn exp_decay_prediction_examples() {
        assert_eq!(exp_decay_variance_prediction(0.01, 100.0, 1.0), 3.0);
        assert_eq!(exp_decay_variance_prediction(0.5, 2.0, 2.0), 6.0);
        assert_eq!(exp_decay_variance_prediction(0.01, 100.0, 0.0), 0.0);
        // rs = 1, rd = 100: 4.08 - 1
        let exact = exp_decay_variance_exact(0.01, 100, 10_000, 1.0);
        let e = (-1f64).exp();
        let closed = (1.0 - e) / (1.0 - e.sqrt()).powi(2) - 1.0;
        assert!((exact - closed).abs() < 1e-6, "{exact} vs {closed}");
    }

    #[test]
    fn mean_and_std_error_small() {
        let (m, se) = mean_and_std_error([1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
