//! Counter-based, replayable random streams.
//!
//! A stream is keyed by `(seed, domain, worker)` and positioned by the
//! iteration counter, so worker `i` at step `t` always sees the same draws no
//! matter how many other workers exist or in which order they are evaluated.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// What a stream is used for. Distinct domains never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Per-worker training draws (gradient noise, level sampling, subsets).
    Worker,
    /// Variance probes at a fixed point.
    Probe,
    /// Problem and data generation.
    Problem,
    /// Verification suites.
    Verify,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Worker => 0x5752_4b52,
            Domain::Probe => 0x5052_4f42,
            Domain::Problem => 0x5052_424c,
            Domain::Verify => 0x5645_5246,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub domain: Domain,
    pub worker: u64,
    pub iteration: u64,
}

impl StreamId {
    pub fn worker(worker: usize, iteration: u64) -> Self {
        Self {
            domain: Domain::Worker,
            worker: worker as u64,
            iteration,
        }
    }

    pub fn new(domain: Domain, worker: u64, iteration: u64) -> Self {
        Self {
            domain,
            worker,
            iteration,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for one `(seed, stream)` pair.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: StreamId) -> Self {
        let mut state = seed ^ stream.domain.tag().rotate_left(32);
        let mut key = [0u8; 32];
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state) ^ stream.worker,
            splitmix64(&mut state),
            splitmix64(&mut state),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream.iteration);
        Self { inner }
    }

    /// Convenience for the training streams.
    pub fn for_worker(seed: u64, worker: usize, iteration: u64) -> Self {
        Self::new(seed, StreamId::worker(worker, iteration))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Tolerance on `sum(probs) == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Draws a 1-based level `l` with probability `probs[l - 1]`.
pub fn sample_categorical(rng: &mut Rng, probs: &[f64]) -> Result<usize> {
    validate_probabilities(probs)?;
    Ok(sample_validated(rng, probs))
}

pub(crate) fn validate_probabilities(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("no levels".into()));
    }
    let mut sum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "probability {p} at level {}",
                i + 1
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {sum}"
        )));
    }
    Ok(())
}

pub(crate) fn sample_validated(rng: &mut Rng, probs: &[f64]) -> usize {
    let u = rng.uniform();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = i;
        cumulative += p;
        if u < cumulative {
            return i + 1;
        }
    }
    // u landed in the rounding gap above the accumulated total
    last_positive + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_replayable() {
        let mut a = Rng::for_worker(7, 3, 11);
        let mut b = Rng::for_worker(7, 3, 11);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ_by_worker_iteration_domain_and_seed() {
        let first = |seed, stream| Rng::new(seed, stream).next_u64();
        let base = first(7, StreamId::worker(3, 11));
        assert_ne!(base, first(7, StreamId::worker(4, 11)));
        assert_ne!(base, first(7, StreamId::worker(3, 12)));
        assert_ne!(base, first(8, StreamId::worker(3, 11)));
        assert_ne!(base, first(7, StreamId::new(Domain::Probe, 3, 11)));
    }

    #[test]
    fn degenerate_distribution_always_level_one() {
        let mut rng = Rng::for_worker(1, 0, 0);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&mut rng, &[1.0]).unwrap(), 1);
        }
    }

    #[test]
    fn zero_probability_level_never_drawn() {
        let mut rng = Rng::for_worker(2, 0, 0);
        for _ in 0..10_000 {
            assert_ne!(sample_categorical(&mut rng, &[0.5, 0.0, 0.5]).unwrap(), 2);
            assert_eq!(sample_categorical(&mut rng, &[0.0, 1.0]).unwrap(), 2);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        // 6 sigma for n = 10^6 is 0.003
        let mut rng = Rng::for_worker(3, 0, 0);
        let n = 1_000_000;
        let ones = (0..n)
            .filter(|_| sample_categorical(&mut rng, &[0.5, 0.5]).unwrap() == 1)
            .count();
        let freq = ones as f64 / n as f64;
        assert!((0.497..=0.503).contains(&freq), "{freq}");
    }

    #[test]
    fn rejects_non_normalized() {
        let mut rng = Rng::for_worker(0, 0, 0);
        assert!(sample_categorical(&mut rng, &[0.5, 0.4]).is_err());
        assert!(sample_categorical(&mut rng, &[1.5, -0.5]).is_err());
        assert!(sample_categorical(&mut rng, &[]).is_err());
        assert!(sample_categorical(&mut rng, &[f64::NAN]).is_err());
    }
}
