//! Scenario files, multi-seed execution and on-disk artifacts.
//!
//! A run directory holds the resolved `scenario.json`, one `seed_<s>.jsonl`
//! log per seed, and `diagnostics.json` with exact misspecification figures
//! for the environment. [`report`] turns such a directory into CSV curves and
//! a detection report.

pub mod report;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bandit::{Algorithm, EpochRecord, ModIgw, RoundRecord, RunConfig, RunLog};
use crate::env::{DiagnosticsReport, Environment};
use crate::models::{validate_nested, ClassSpec, ModelClass};
use crate::{Error, Result};

pub use report::{
    detection_report, fit_regret_slope, log_grid, mean_curve, write_report, ClassDetection,
    CurvePoint, DetectionReport, Eviction, RegretTrace, SlopeFit,
};

/// Environment variable naming a root directory for relative output paths.
pub const OUT_ROOT_VAR: &str = "MODSEL_OUT_ROOT";

pub const SCENARIO_FILE: &str = "scenario.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub environment: Environment,
    pub classes: Vec<ClassSpec>,
    pub algorithm: Algorithm,
    pub run: RunSpec,
}

/// Run parameters shared by every seed of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_tau1")]
    pub tau1: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "half")]
    pub alpha_ho: f64,
    #[serde(default = "half")]
    pub split_ratio: f64,
    #[serde(default)]
    pub cumulative_data: bool,
}

fn default_tau1() -> u64 {
    2
}
fn default_delta() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}

impl RunSpec {
    pub fn config(&self, seed: u64) -> RunConfig {
        RunConfig {
            horizon: self.horizon,
            tau1: self.tau1,
            delta: self.delta,
            c0: self.c0,
            c1: self.c1,
            alpha_ho: self.alpha_ho,
            split_ratio: self.split_ratio,
            cumulative_data: self.cumulative_data,
            seed,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let s: Scenario = serde_json::from_value(value)?;
        s.validate()?;
        Ok(s)
    }

    /// Loads a scenario, applying `key=value` overrides on dotted paths.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn build_classes(&self) -> Result<Vec<ModelClass>> {
        self.classes
            .iter()
            .map(|c| {
                ModelClass::from_spec(
                    c,
                    self.environment.num_contexts(),
                    self.environment.num_arms(),
                )
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        let distinct: BTreeSet<_> = self.run.seeds.iter().collect();
        if distinct.len() != self.run.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("class sequence is empty".into()));
        }
        let classes = self.build_classes()?;
        validate_nested(&classes)?;
        if let Algorithm::FixedClassIgw { class } = self.algorithm {
            if class >= classes.len() {
                return Err(Error::ClassIndex {
                    index: class,
                    count: classes.len(),
                });
            }
        }
        self.run.config(self.run.seeds[0]).validate()
    }
}

/// Sets the JSON value at a dotted path (`run.tau1=64`, `classes.0.d=4`).
///
/// The right-hand side is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(|| {
                    Error::InvalidConfig(format!("override path `{key}`: no field `{part}`"))
                })?
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    Error::InvalidConfig(format!("override path `{key}`: `{part}` is not an index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::InvalidConfig(format!("override path `{key}`: index {idx} >= {len}"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "override path `{key}` descends into a scalar"
                )))
            }
        };
    }
    Err(Error::InvalidConfig("empty override key".into()))
}

/// One line of a per-seed log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Round(RoundRecord),
    Epoch(EpochRecord),
}

/// Runs one seed.
pub fn run_seed(scenario: &Scenario, seed: u64) -> Result<RunLog> {
    let classes = scenario.build_classes()?;
    let run = ModIgw::new(
        &scenario.environment,
        &classes,
        &scenario.algorithm,
        scenario.run.config(seed),
    )?;
    let log = run.run()?;
    RegretTrace::from_log(&log)?;
    Ok(log)
}

/// Runs every seed in parallel. Results are in seed-list order.
pub fn run_scenario(scenario: &Scenario) -> Vec<(u64, Result<RunLog>)> {
    scenario
        .run
        .seeds
        .par_iter()
        .map(|&s| (s, run_seed(scenario, s)))
        .collect()
}

/// Resolves `out` against [`OUT_ROOT_VAR`] when it is relative.
pub fn resolve_out_dir(out: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) if out.is_relative() && !root.is_empty() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

pub fn log_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.jsonl"))
}

/// Writes a run log as JSON lines, epoch records following their last round.
pub fn write_log(path: &Path, log: &RunLog) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut epochs = log.epochs.iter().peekable();
    for r in &log.rounds {
        serde_json::to_writer(&mut w, &LogLine::Round(r.clone()))?;
        w.write_all(b"\n")?;
        while let Some(e) = epochs.next_if(|e| e.tau_end == r.t) {
            serde_json::to_writer(&mut w, &LogLine::Epoch(e.clone()))?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path, seed: u64) -> Result<RunLog> {
    let mut log = RunLog {
        seed,
        rounds: Vec::new(),
        epochs: Vec::new(),
    };
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line)? {
            LogLine::Round(r) => log.rounds.push(r),
            LogLine::Epoch(e) => log.epochs.push(e),
        }
    }
    Ok(log)
}

/// Seeds with a log file in `dir`, ascending.
pub fn logged_seeds(dir: &Path) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(s) = name
            .strip_prefix("seed_")
            .and_then(|r| r.strip_suffix(".jsonl"))
        {
            if let Ok(s) = s.parse() {
                seeds.push(s);
            }
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

pub fn read_logs(dir: &Path) -> Result<Vec<RunLog>> {
    logged_seeds(dir)?
        .into_iter()
        .map(|s| read_log(&log_path(dir, s), s))
        .collect()
}

/// Outcome of [`run_to_dir`].
#[derive(Debug)]
pub struct RunSummary {
    pub written: Vec<u64>,
    pub failed: Vec<(u64, Error)>,
}

/// Runs a scenario and writes its artifacts into `dir`.
pub fn run_to_dir(scenario: &Scenario, dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(SCENARIO_FILE),
        serde_json::to_string_pretty(scenario)? + "\n",
    )?;
    let classes = scenario.build_classes()?;
    let diagnostics = DiagnosticsReport::compute(
        &scenario.environment,
        &classes,
        &scenario.run.config(0).rate(),
        scenario.run.c0,
        scenario.run.delta,
        scenario.run.tau1,
    )?;
    fs::write(
        dir.join(DIAGNOSTICS_FILE),
        serde_json::to_string_pretty(&diagnostics)? + "\n",
    )?;

    let mut summary = RunSummary {
        written: Vec::new(),
        failed: Vec::new(),
    };
    for (seed, result) in run_scenario(scenario) {
        match result {
            Ok(log) => {
                write_log(&log_path(dir, seed), &log)?;
                summary.written.push(seed);
            }
            Err(e) => summary.failed.push((seed, e)),
        }
    }
    Ok(summary)
}

pub fn read_scenario(dir: &Path) -> Result<Scenario> {
    Scenario::from_json(&fs::read_to_string(dir.join(SCENARIO_FILE))?)
}
