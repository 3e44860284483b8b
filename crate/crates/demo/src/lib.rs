//! Browser-facing wrappers. Each export takes plain numbers or strings and
//! returns a JSON string, so the page needs no bindings beyond
//! `JSON.parse`.

use mlmc_core::compressors::{Compressor, FixedScale, MultilevelCompressor};
use mlmc_core::mlmc::{
    adaptive_distribution, analytic_variance, exp_decay_variance_prediction,
    fixed_point_distribution, floating_point_distribution, optimal_comp_variance,
    LevelDistribution,
};
use mlmc_core::problems::{ExpDecayOracle, QuadraticSpec, Spectrum};
use mlmc_core::rng::{Domain, Rng, StreamId};
use mlmc_core::simulator::{run, DistributionMode, Method, SimConfig};
use mlmc_core::GradientVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct ExpDecayPoint {
    pub s: usize,
    pub measured: f64,
    pub predicted: f64,
    pub rand_k: f64,
}

/// Normalized compression variance of adaptive s-Top-k on one
/// exponentially decaying vector, for every segment size in `segments`.
pub fn expdecay_curve(
    dim: usize,
    rate: f64,
    segments: &[usize],
) -> Result<Vec<ExpDecayPoint>, String> {
    let oracle = ExpDecayOracle::new(dim, rate, 1.0).map_err(|e| e.to_string())?;
    let v = oracle.sample(&mut Rng::new(0, StreamId::new(Domain::Verify, 0, 0)));
    let norm = v.norms().l2_squared;
    segments
        .iter()
        .filter(|&&s| s >= 1 && s <= dim)
        .map(|&s| {
            let c = Compressor::SegmentedTopK { segment: s };
            let measured = optimal_comp_variance(&c, &v).map_err(|e| e.to_string())? / norm;
            Ok(ExpDecayPoint {
                s,
                measured,
                predicted: exp_decay_variance_prediction(rate, s as f64, 1.0),
                rand_k: dim as f64 / s as f64 - 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct LevelView {
    pub compressor: String,
    pub levels: Vec<LevelRow>,
    /// `E ||g~ - v||^2 / ||v||^2` under `probs`.
    pub omega_hat: f64,
    pub geometric_omega_hat: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct LevelRow {
    pub level: usize,
    pub delta: f64,
    pub prob: f64,
    pub bits: u64,
}

fn parse_compressor(name: &str, segment: usize) -> Result<Compressor, String> {
    Ok(match name {
        "top_k" => Compressor::TopK,
        "segmented_top_k" => Compressor::SegmentedTopK { segment },
        "fixed_point" => Compressor::FixedPoint {
            scale: FixedScale::MaxAbs,
        },
        "floating_point" => Compressor::FloatingPoint,
        "rtn" => Compressor::Rtn {
            clip: 4.0,
            grid_levels: 8,
        },
        other => return Err(format!("unknown compressor {other:?}")),
    })
}

/// Residual norms, adaptive probabilities and message sizes per level.
pub fn level_view(values: &[f64], compressor: &str, segment: usize) -> Result<LevelView, String> {
    let c = parse_compressor(compressor, segment)?;
    c.validate().map_err(|e| e.to_string())?;
    let v = GradientVector::new(values.to_vec()).map_err(|e| e.to_string())?;
    let dist = adaptive_distribution(&c, &v).map_err(|e| e.to_string())?;
    let deltas = c.residual_norms(&v).map_err(|e| e.to_string())?;
    let levels = deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let bits = c
                .residual(&v, i + 1)
                .map(|p| c.encoded_bits(&p))
                .map_err(|e| e.to_string())?;
            Ok(LevelRow {
                level: i + 1,
                delta,
                prob: dist.prob(i + 1),
                bits,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let omega = |d: LevelDistribution| {
        analytic_variance(&c, &v, &d)
            .map(|r| r.omega_hat)
            .map_err(|e| e.to_string())
    };
    let geometric = match c {
        Compressor::FixedPoint { .. } => Some(omega(fixed_point_distribution())?),
        Compressor::FloatingPoint => Some(omega(floating_point_distribution())?),
        _ => None,
    };
    Ok(LevelView {
        compressor: c.name().to_string(),
        levels,
        omega_hat: omega(dist)?,
        geometric_omega_hat: geometric,
    })
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub method: String,
    pub bits: Vec<u64>,
    pub gap: Vec<f64>,
}

/// Gap against cumulative bits for MLMC s-Top-k, Rand-k and direct Top-k
/// on a quadratic whose gradients decay exponentially.
pub fn convergence(
    dim: usize,
    workers: usize,
    rate: f64,
    k: usize,
    iterations: u64,
    eta: f64,
) -> Result<Vec<Curve>, String> {
    let mut spec = QuadraticSpec::new(dim, workers);
    spec.spectrum = Spectrum::ExpDecay { rate };
    spec.rotate = false;
    spec.seed = 1;
    let problem = spec.build().map_err(|e| e.to_string())?;
    let methods = [
        Method::Mlmc {
            compressor: Compressor::SegmentedTopK { segment: k },
            distribution: DistributionMode::Adaptive,
        },
        Method::RandK { k },
        Method::TopKDirect { k },
    ];
    let stride = (iterations / 200).max(1) as usize;
    methods
        .iter()
        .map(|m| {
            let r =
                run(&problem, m, &SimConfig::new(iterations, eta, 0)).map_err(|e| e.to_string())?;
            let rows =
                std::iter::once(&r.initial).chain(r.rows.iter().skip(stride - 1).step_by(stride));
            let (bits, gap) = rows.map(|row| (row.cum_bits, row.gap)).unzip();
            Ok(Curve {
                method: m.label(),
                bits,
                gap,
            })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = expdecayCurve)]
pub fn expdecay_curve_js(dim: usize, rate: f64, segments: Vec<u32>) -> Result<String, JsValue> {
    let s: Vec<usize> = segments.into_iter().map(|x| x as usize).collect();
    to_js(expdecay_curve(dim, rate, &s))
}

#[wasm_bindgen(js_name = levelView)]
pub fn level_view_js(
    values: Vec<f64>,
    compressor: &str,
    segment: usize,
) -> Result<String, JsValue> {
    to_js(level_view(&values, compressor, segment))
}

#[wasm_bindgen(js_name = convergence)]
pub fn convergence_js(
    dim: usize,
    workers: usize,
    rate: f64,
    k: usize,
    iterations: u32,
    eta: f64,
) -> Result<String, JsValue> {
    to_js(convergence(dim, workers, rate, k, iterations as u64, eta))
}
