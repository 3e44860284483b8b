//! Declarative experiments: TOML configs, CSV records and summaries.
//!
//! A config names one problem, a list of methods, a step-size rule and a
//! list of seeds. Running it writes one CSV per (method, seed) plus
//! `summary.json` into `<output root>/<out_dir>`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};
use crate::problems::{Problem, ProblemSpec};
use crate::simulator::{default_step_grid, run, tune_step_size, Method, RunRecord, SimConfig};

/// Overrides the directory that relative `out_dir`s are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "MLMC_OUTPUT_ROOT";

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_divergence() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub iterations: u64,
    /// Fixed step size. Mutually exclusive with `eta_grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Step sizes in units of `1/L`; the best final gap on the first seed
    /// wins. Defaults to `{2^-8, ..., 1}` when `eta` is absent too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_grid: Option<Vec<f64>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory, relative to the output root. Defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub parallel: bool,
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
    pub problem: ProblemSpec,
    pub methods: Vec<Method>,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| match locate(text) {
            Some(msg) => config_error(msg),
            None => config_error(e),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_error)
    }

    pub fn validate(&self) -> Result<()> {
        let safe = |s: &str| {
            !s.is_empty()
                && s.chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        };
        if !safe(&self.name) {
            return Err(config_error(format!(
                "name: {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.name
            )));
        }
        if self.methods.is_empty() {
            return Err(config_error("methods: at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(config_error("seeds: at least one seed is required"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(config_error("seeds: duplicate seed"));
        }
        match (&self.eta, &self.eta_grid) {
            (Some(_), Some(_)) => return Err(config_error("eta and eta_grid are exclusive")),
            (Some(e), None) if !(e.is_finite() && *e > 0.0) => {
                return Err(config_error(format!("eta: {e} must be positive")))
            }
            (None, Some(g)) if g.is_empty() || g.iter().any(|m| !(m.is_finite() && *m > 0.0)) => {
                return Err(config_error("eta_grid: entries must be positive"))
            }
            _ => {}
        }
        if self.divergence_factor.is_nan() || self.divergence_factor <= 1.0 {
            return Err(config_error("divergence_factor: must exceed 1"));
        }
        let problem = self
            .problem
            .build()
            .map_err(|e| config_error(format!("problem: {e}")))?;
        let mut labels = BTreeSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            m.validate(problem.dim())
                .map_err(|e| config_error(format!("methods[{i}]: {e}")))?;
            if !labels.insert(m.label()) {
                return Err(config_error(format!(
                    "methods[{i}]: duplicate method {}",
                    m.label()
                )));
            }
        }
        Ok(())
    }

    /// File stem shared by all seeds of one method.
    pub fn csv_stem(&self, method: &Method) -> String {
        if self.methods.len() == 1 {
            self.name.clone()
        } else {
            format!("{}-{}", self.name, method.label())
        }
    }

    pub fn output_dir(&self, root: &Path) -> PathBuf {
        root.join(self.out_dir.as_deref().unwrap_or(&self.name))
    }
}

/// Internally tagged enums lose the field path in serde errors, so retry
/// the nested tables one at a time to find which one is at fault.
fn locate(text: &str) -> Option<String> {
    let table: toml::Table = toml::from_str(text).ok()?;
    if let Some(p) = table.get("problem") {
        if let Err(e) = p.clone().try_into::<ProblemSpec>() {
            return Some(format!("problem: {}", e.message()));
        }
    }
    let methods = table.get("methods")?.as_array()?;
    for (i, m) in methods.iter().enumerate() {
        for key in ["compressor", "distribution"] {
            let Some(inner) = m.get(key) else { continue };
            let err = if key == "compressor"
                && m.get("kind").and_then(|k| k.as_str()) == Some("ef_momentum")
            {
                inner
                    .clone()
                    .try_into::<crate::baselines::EfCompressor>()
                    .err()
            } else if key == "compressor" {
                inner
                    .clone()
                    .try_into::<crate::compressors::Compressor>()
                    .err()
            } else {
                inner
                    .clone()
                    .try_into::<crate::simulator::DistributionMode>()
                    .err()
            };
            if let Some(e) = err {
                return Some(format!("methods[{i}].{key}: {}", e.message()));
            }
        }
        if let Err(e) = m.clone().try_into::<Method>() {
            return Some(format!("methods[{i}]: {}", e.message()));
        }
    }
    None
}

/// The output root: `$MLMC_OUTPUT_ROOT` if set, else `default`.
pub fn output_root(default: &Path) -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map_or_else(|| default.to_path_buf(), PathBuf::from)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub eta: f64,
    /// `None` when the run diverged.
    pub final_gap: Option<f64>,
    pub total_bits: u64,
    pub iterations_completed: u64,
    pub diverged_at: Option<u64>,
    pub warnings: Vec<String>,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub name: String,
    pub runs: Vec<RunSummary>,
}

impl ExperimentSummary {
    pub fn diverged(&self) -> bool {
        self.runs.iter().any(|r| r.diverged_at.is_some())
    }
}

fn summarize(record: &RunRecord, csv: String) -> RunSummary {
    let gap = record.final_gap();
    RunSummary {
        method: record.method.clone(),
        seed: record.seed,
        eta: record.eta,
        final_gap: gap.is_finite().then_some(gap),
        total_bits: record.total_bits(),
        iterations_completed: record.rows.len() as u64,
        diverged_at: record.diverged_at,
        warnings: record.warnings.clone(),
        csv,
    }
}

/// Runs every (method, seed) pair and writes the outputs under `root`.
pub fn run_experiment(config: &ExperimentConfig, root: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    let problem = config.problem.build()?;
    let dir = config.output_dir(root);
    let mut runs = Vec::new();
    for method in &config.methods {
        let sim = |seed| SimConfig {
            iterations: config.iterations,
            eta: config.eta.unwrap_or(1.0),
            seed,
            parallel: config.parallel,
            divergence_factor: config.divergence_factor,
            record_iterates: false,
        };
        let first = sim(config.seeds[0]);
        let first_record = match config.eta {
            Some(_) => run(&problem, method, &first)?,
            None => {
                let grid = config.eta_grid.clone().unwrap_or_else(default_step_grid);
                tune_step_size(&problem, method, &first, &grid)?
            }
        };
        let eta = first_record.eta;
        let stem = config.csv_stem(method);
        for (i, &seed) in config.seeds.iter().enumerate() {
            let record = if i == 0 {
                first_record.clone()
            } else {
                run(&problem, method, &SimConfig { eta, ..sim(seed) })?
            };
            let file = format!("{stem}_{seed}.csv");
            write_atomic(&dir.join(&file), record.to_csv().as_bytes())?;
            runs.push(summarize(&record, file));
        }
    }
    let summary = ExperimentSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        name: config.name.clone(),
        runs,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(config_error)?;
    write_atomic(&dir.join("summary.json"), json.as_bytes())?;
    Ok(summary)
}

/// Final state of one CSV, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRun {
    pub file: String,
    pub rows: usize,
    pub gaps: Vec<f64>,
    pub bits: Vec<u64>,
}

impl CsvRun {
    pub fn parse(file: String, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(crate::simulator::CSV_HEADER) {
            return Err(config_error(format!("{file}: unexpected CSV header")));
        }
        let (mut gaps, mut bits) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || config_error(format!("{file}: malformed row {}", n + 1));
            if cols.len() != 6 {
                return Err(bad());
            }
            gaps.push(cols[1].parse().map_err(|_| bad())?);
            bits.push(cols[3].parse().map_err(|_| bad())?);
        }
        Ok(Self {
            file,
            rows: gaps.len(),
            gaps,
            bits,
        })
    }

    pub fn total_bits(&self) -> u64 {
        self.bits.last().copied().unwrap_or(0)
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.gaps.last().copied()
    }

    /// Gap of the last row within `budget` bits.
    pub fn gap_at_bits(&self, budget: u64) -> Option<f64> {
        self.bits
            .iter()
            .zip(&self.gaps)
            .take_while(|(b, _)| **b <= budget)
            .last()
            .map(|(_, g)| *g)
    }
}

/// Bits-vs-gap table over every CSV in `dir`, compared at the smallest
/// total bit count among them.
pub fn report(dir: &Path) -> Result<String> {
    let mut runs = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
        let name = p
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        runs.push(CsvRun::parse(name, &text)?);
    }
    if runs.is_empty() {
        return Err(config_error(format!("{}: no CSV files", dir.display())));
    }
    let budget = runs.iter().map(CsvRun::total_bits).min().unwrap_or(0);
    let fmt = |g: Option<f64>| g.map_or_else(|| "".to_string(), |g| format!("{g:.6e}"));
    let mut out = format!("file,rows,total_bits,final_gap,gap_at_{budget}_bits\n");
    for r in &runs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.file,
            r.rows,
            r.total_bits(),
            fmt(r.final_gap()),
            fmt(r.gap_at_bits(budget))
        ));
    }
    Ok(out)
}
