//! Synchronous parameter-server training loop.
//!
//! Every iteration each worker draws a stochastic gradient at the shared
//! model, encodes it with the configured method and reports the message
//! size; the server averages the decoded vectors in worker order and takes a
//! step. Worker randomness comes from the `(seed, worker, t)` stream: noise
//! first, then whatever the method samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::{qsgd_quantize, rand_k, top_k_direct, EfCompressor, ErrorFeedbackState};
use crate::compressors::{uncompressed_bits, Compressor, MultilevelCompressor};
use crate::error::{invalid, Error, Result};
use crate::mlmc::{
    self, fixed_point_distribution, floating_point_distribution, mean_and_std_error,
    LevelDistribution,
};
use crate::problems::Problem;
use crate::rng::{Domain, Rng, StreamId};
use crate::vector::{dist_sq, norm_sq, GradientVector};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DistributionMode {
    /// A fixed distribution given explicitly.
    Static { probs: Vec<f64> },
    /// Geometric for the bitwise compressors, uniform otherwise.
    Optimal,
    /// Recomputed for every gradient from its residual norms.
    #[default]
    Adaptive,
}

fn default_beta() -> f64 {
    crate::baselines::DEFAULT_MOMENTUM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Mlmc {
        compressor: Compressor,
        #[serde(default)]
        distribution: DistributionMode,
    },
    RandK {
        k: usize,
    },
    Qsgd {
        levels: usize,
    },
    TopKDirect {
        k: usize,
    },
    EfMomentum {
        compressor: EfCompressor,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    MomentumSgd {
        #[serde(default = "default_beta")]
        beta: f64,
    },
}

fn compressor_label(c: &Compressor) -> String {
    match c {
        Compressor::SegmentedTopK { segment } => format!("s_top_k{segment}"),
        Compressor::Rtn { grid_levels, .. } => format!("rtn{grid_levels}"),
        other => other.name().to_string(),
    }
}

impl Method {
    /// Short name, stable enough for file names.
    pub fn label(&self) -> String {
        match self {
            Method::Sgd => "sgd".into(),
            Method::Mlmc {
                compressor,
                distribution,
            } => {
                let mode = match distribution {
                    DistributionMode::Static { .. } => "static",
                    DistributionMode::Optimal => "optimal",
                    DistributionMode::Adaptive => "adaptive",
                };
                format!("mlmc-{}-{mode}", compressor_label(compressor))
            }
            Method::RandK { k } => format!("rand_k{k}"),
            Method::Qsgd { levels } => format!("qsgd{levels}"),
            Method::TopKDirect { k } => format!("top_k_direct{k}"),
            Method::EfMomentum { compressor, .. } => match compressor {
                EfCompressor::Identity => "ef_momentum-identity".into(),
                EfCompressor::TopK { k } => format!("ef_momentum-top_k{k}"),
            },
            Method::MomentumSgd { .. } => "momentum_sgd".into(),
        }
    }

    fn check_k(k: usize, dim: usize) -> Result<()> {
        if k == 0 || k > dim {
            return Err(invalid("k", format!("{k} not in 1..={dim}")));
        }
        Ok(())
    }

    fn check_beta(beta: f64) -> Result<()> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid("beta", format!("{beta} not in (0, 1]")));
        }
        Ok(())
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Method::Sgd => Ok(()),
            Method::Mlmc { compressor, .. } => {
                compressor.validate()?;
                self.static_distribution(dim).map(|_| ())
            }
            Method::RandK { k } | Method::TopKDirect { k } => Self::check_k(*k, dim),
            Method::Qsgd { levels } => {
                if *levels < 2 {
                    return Err(invalid("levels", format!("{levels} must be at least 2")));
                }
                Ok(())
            }
            Method::EfMomentum { compressor, beta } => {
                if let EfCompressor::TopK { k } = compressor {
                    Self::check_k(*k, dim)?;
                }
                Self::check_beta(*beta)
            }
            Method::MomentumSgd { beta } => Self::check_beta(*beta),
        }
    }

    /// The fixed distribution used by a non-adaptive MLMC method.
    pub fn static_distribution(&self, dim: usize) -> Result<Option<LevelDistribution>> {
        let Method::Mlmc {
            compressor,
            distribution,
        } = self
        else {
            return Ok(None);
        };
        let levels = compressor.num_levels(dim);
        let dist = match distribution {
            DistributionMode::Adaptive => return Ok(None),
            DistributionMode::Static { probs } => {
                if probs.len() != levels {
                    return Err(Error::InvalidDistribution(format!(
                        "{} probabilities for {levels} levels",
                        probs.len()
                    )));
                }
                LevelDistribution::new(probs.clone())?
            }
            DistributionMode::Optimal => match compressor {
                Compressor::FixedPoint { .. } => fixed_point_distribution(),
                Compressor::FloatingPoint => floating_point_distribution(),
                _ => LevelDistribution::uniform(levels)?,
            },
        };
        Ok(Some(dist))
    }

    fn is_stateless(&self) -> bool {
        !matches!(self, Method::EfMomentum { .. } | Method::MomentumSgd { .. })
    }
}

#[derive(Debug, Clone)]
enum WorkerState {
    Stateless,
    Ef(ErrorFeedbackState),
    Momentum(Vec<f64>),
}

struct WorkerOut {
    vector: Vec<f64>,
    bits: u64,
    level: Option<usize>,
}

struct Prepared<'a> {
    method: &'a Method,
    dist: Option<LevelDistribution>,
}

impl<'a> Prepared<'a> {
    fn new(method: &'a Method, dim: usize) -> Result<Self> {
        method.validate(dim)?;
        Ok(Self {
            method,
            dist: method.static_distribution(dim)?,
        })
    }

    fn initial_state(&self, dim: usize) -> Result<WorkerState> {
        Ok(match self.method {
            Method::EfMomentum { beta, .. } => {
                WorkerState::Ef(ErrorFeedbackState::new(dim, *beta)?)
            }
            Method::MomentumSgd { .. } => WorkerState::Momentum(vec![0.0; dim]),
            _ => WorkerState::Stateless,
        })
    }

    fn encode(
        &self,
        v: GradientVector,
        rng: &mut Rng,
        state: &mut WorkerState,
    ) -> Result<WorkerOut> {
        let dim = v.dim();
        let plain = |vector: Vec<f64>, bits| WorkerOut {
            vector,
            bits,
            level: None,
        };
        Ok(match (self.method, state) {
            (Method::Sgd, _) => plain(v.into_inner(), uncompressed_bits(dim)),
            (Method::Mlmc { compressor, .. }, _) => {
                let est = match &self.dist {
                    Some(d) => mlmc::estimate(compressor, &v, d, rng)?,
                    None => mlmc::estimate_adaptive(compressor, &v, rng)?,
                };
                WorkerOut {
                    vector: est.estimate.into_inner(),
                    bits: est.message.bit_cost,
                    level: Some(est.sampled_level),
                }
            }
            (Method::RandK { k }, _) => {
                let c = rand_k(&v, *k, rng)?;
                plain(c.vector, c.bits)
            }
            (Method::Qsgd { levels }, _) => {
                let c = qsgd_quantize(&v, *levels, rng)?;
                plain(c.vector, c.bits)
            }
            (Method::TopKDirect { k }, _) => {
                let c = top_k_direct(&v, *k)?;
                plain(c.vector, c.bits)
            }
            (Method::EfMomentum { compressor, .. }, WorkerState::Ef(s)) => {
                let c = s.step(&v, compressor)?;
                plain(c.vector, c.bits)
            }
            (Method::MomentumSgd { beta }, WorkerState::Momentum(m)) => {
                for (mj, x) in m.iter_mut().zip(v.as_slice()) {
                    *mj = (1.0 - beta) * *mj + beta * x;
                }
                plain(m.clone(), uncompressed_bits(dim))
            }
            _ => unreachable!("worker state matches its method"),
        })
    }
}

fn default_divergence() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub iterations: u64,
    pub eta: f64,
    pub seed: u64,
    /// Evaluate workers on threads; results are merged in worker order.
    #[serde(default)]
    pub parallel: bool,
    /// Abort once `f` exceeds this multiple of its initial value.
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
    /// Keep every iterate in the record.
    #[serde(default)]
    pub record_iterates: bool,
}

impl SimConfig {
    pub fn new(iterations: u64, eta: f64, seed: u64) -> Self {
        Self {
            iterations,
            eta,
            seed,
            parallel: false,
            divergence_factor: default_divergence(),
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub t: u64,
    pub gap: f64,
    pub grad_norm_sq: f64,
    pub cum_bits: u64,
    pub level_hist: BTreeMap<usize, u64>,
    /// `||g_t - grad f(x_t)||^2` for the direction actually applied.
    pub var_probe: f64,
}

pub const CSV_HEADER: &str = "t,gap,grad_norm_sq,cum_bits,level_hist,var_probe";

impl Row {
    fn csv_line(&self, out: &mut String) {
        let hist: Vec<String> = self
            .level_hist
            .iter()
            .map(|(l, c)| format!("{l}:{c}"))
            .collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            self.t,
            self.gap,
            self.grad_norm_sq,
            self.cum_bits,
            hist.join(";"),
            self.var_probe
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub eta: f64,
    pub seed: u64,
    /// State before the first update.
    pub initial: Row,
    /// One row per update, `t = 1..=T`.
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
    pub diverged_at: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterates: Option<Vec<Vec<f64>>>,
}

impl RunRecord {
    pub fn final_row(&self) -> &Row {
        self.rows.last().unwrap_or(&self.initial)
    }

    pub fn final_gap(&self) -> f64 {
        if self.diverged_at.is_some() {
            f64::INFINITY
        } else {
            self.final_row().gap
        }
    }

    pub fn total_bits(&self) -> u64 {
        self.final_row().cum_bits
    }

    /// Gap of the last row whose cumulative bits do not exceed `budget`.
    pub fn gap_at_bits(&self, budget: u64) -> f64 {
        std::iter::once(&self.initial)
            .chain(&self.rows)
            .take_while(|r| r.cum_bits <= budget)
            .last()
            .map_or(self.initial.gap, |r| r.gap)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            r.csv_line(&mut out);
        }
        out
    }
}

fn mean_in_order(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut sum = vectors[0].clone();
    for v in &vectors[1..] {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let m = vectors.len() as f64;
    sum.iter_mut().for_each(|s| *s /= m);
    sum
}

fn collect_workers<P: Problem + ?Sized>(
    problem: &P,
    prepared: &Prepared,
    x: &[f64],
    states: &mut [WorkerState],
    parallel: bool,
    stream: impl Fn(usize) -> Rng + Sync,
) -> Result<Vec<WorkerOut>> {
    let one = |i: usize, state: &mut WorkerState| -> Result<WorkerOut> {
        let mut rng = stream(i);
        let v = problem.stochastic_gradient(i, x, &mut rng)?;
        prepared.encode(v, &mut rng, state)
    };
    if !parallel || states.len() == 1 {
        return states
            .iter_mut()
            .enumerate()
            .map(|(i, s)| one(i, s))
            .collect();
    }
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(states.len());
    let total = states.len();
    let chunk = total.div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = states
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, part)| {
                let one = &one;
                scope.spawn(move || {
                    part.iter_mut()
                        .enumerate()
                        .map(|(j, s)| one(c * chunk + j, s))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(total);
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

fn row<P: Problem + ?Sized>(problem: &P, t: u64, x: &[f64], cum_bits: u64) -> Row {
    Row {
        t,
        gap: problem.gap(x),
        grad_norm_sq: norm_sq(&problem.gradient(x)),
        cum_bits,
        level_hist: BTreeMap::new(),
        var_probe: 0.0,
    }
}

/// Runs `cfg.iterations` synchronous updates of `method` on `problem`.
pub fn run<P: Problem + ?Sized>(
    problem: &P,
    method: &Method,
    cfg: &SimConfig,
) -> Result<RunRecord> {
    if !(cfg.eta.is_finite() && cfg.eta > 0.0) {
        return Err(invalid("eta", format!("{} must be positive", cfg.eta)));
    }
    let dim = problem.dim();
    let workers = problem.workers();
    let prepared = Prepared::new(method, dim)?;
    let mut states = (0..workers)
        .map(|_| prepared.initial_state(dim))
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    let limit = 1.0 / (2.0 * problem.smoothness());
    if cfg.eta > limit {
        warnings.push(format!("step size {} exceeds 1/(2L) = {limit}", cfg.eta));
    }

    let mut x = problem.initial_point();
    let initial = row(problem, 0, &x, 0);
    let f0 = problem.loss(&x);
    let threshold = cfg.divergence_factor * f0.abs().max(f64::MIN_POSITIVE);
    // error feedback keeps the server copy of the mean worker state
    let mut server = matches!(method, Method::EfMomentum { .. }).then(|| vec![0.0; dim]);

    let mut record = RunRecord {
        method: method.label(),
        eta: cfg.eta,
        seed: cfg.seed,
        initial,
        rows: Vec::with_capacity(cfg.iterations as usize),
        warnings,
        diverged_at: None,
        iterates: cfg.record_iterates.then(|| vec![x.clone()]),
    };
    let mut cum_bits = 0u64;

    for t in 0..cfg.iterations {
        let outs = collect_workers(problem, &prepared, &x, &mut states, cfg.parallel, |i| {
            Rng::for_worker(cfg.seed, i, t)
        })?;
        let mut level_hist = BTreeMap::new();
        for o in &outs {
            cum_bits += o.bits;
            if let Some(l) = o.level {
                *level_hist.entry(l).or_insert(0) += 1;
            }
        }
        let vectors: Vec<Vec<f64>> = outs.into_iter().map(|o| o.vector).collect();
        let mut direction = mean_in_order(&vectors);
        if let Some(s) = server.as_mut() {
            for (a, b) in s.iter_mut().zip(&direction) {
                *a += b;
            }
            direction = s.clone();
        }
        let var_probe = dist_sq(&direction, &problem.gradient(&x));
        for (a, g) in x.iter_mut().zip(&direction) {
            *a -= cfg.eta * g;
        }

        let mut r = row(problem, t + 1, &x, cum_bits);
        r.level_hist = level_hist;
        r.var_probe = var_probe;
        record.rows.push(r);
        if let Some(it) = record.iterates.as_mut() {
            it.push(x.clone());
        }
        let f = problem.loss(&x);
        if !f.is_finite() || f > threshold || x.iter().any(|v| !v.is_finite()) {
            record.diverged_at = Some(t + 1);
            break;
        }
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `E ||g_t - grad f(x)||^2` for the aggregated
/// estimate at a fixed point. Methods with worker state are not supported.
pub fn variance_probe<P: Problem + ?Sized>(
    problem: &P,
    method: &Method,
    x: &[f64],
    samples: usize,
    seed: u64,
) -> Result<ProbeResult> {
    if !method.is_stateless() {
        return Err(Error::Unsupported("variance probe of stateful methods"));
    }
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    let prepared = Prepared::new(method, problem.dim())?;
    let mut states = vec![WorkerState::Stateless; problem.workers()];
    let grad = problem.gradient(x);
    let mut errs = Vec::with_capacity(samples);
    for s in 0..samples {
        let outs = collect_workers(problem, &prepared, x, &mut states, false, |i| {
            Rng::new(seed, StreamId::new(Domain::Probe, i as u64, s as u64))
        })?;
        let vectors: Vec<Vec<f64>> = outs.into_iter().map(|o| o.vector).collect();
        errs.push(dist_sq(&mean_in_order(&vectors), &grad));
    }
    let (mean, std_error) = mean_and_std_error(errs);
    Ok(ProbeResult {
        mean,
        std_error,
        samples,
    })
}

/// `{2^-8, ..., 2^0}`, in units of `1/L`.
pub fn default_step_grid() -> Vec<f64> {
    (0..=8).rev().map(|k| 0.5f64.powi(k)).collect()
}

/// Runs every `multiplier / L` and keeps the run with the lowest final gap
/// (earliest grid entry on ties).
pub fn tune_step_size<P: Problem + ?Sized>(
    problem: &P,
    method: &Method,
    cfg: &SimConfig,
    multipliers: &[f64],
) -> Result<RunRecord> {
    let l = problem.smoothness();
    let mut best: Option<RunRecord> = None;
    for &m in multipliers {
        let mut c = cfg.clone();
        c.eta = m / l;
        let r = run(problem, method, &c)?;
        let better = match &best {
            None => true,
            Some(b) => r.final_gap() < b.final_gap(),
        };
        if better {
            best = Some(r);
        }
    }
    best.ok_or_else(|| invalid("eta_grid", "must not be empty"))
}
