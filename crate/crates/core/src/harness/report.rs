//! Regret traces, aggregate curves, slope fits and detection summaries.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::bandit::RunLog;
use crate::{Error, Result};

/// Slack allowed on per-round regret bounds for accumulated rounding.
const TRACE_TOLERANCE: f64 = 1e-9;

/// Cumulative expected regret of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub seed: u64,
    /// `cumulative[t]` is `R_t`; `cumulative[0] = 0`.
    pub cumulative: Vec<f64>,
    /// Last round of each completed epoch.
    pub epoch_ends: Vec<u64>,
    /// `(m, i_m)` for every epoch that started.
    pub index_trajectory: Vec<(u32, usize)>,
}

impl RegretTrace {
    pub fn from_log(log: &RunLog) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(log.rounds.len() + 1);
        cumulative.push(0.0);
        let mut total = 0.0;
        for (k, r) in log.rounds.iter().enumerate() {
            if r.t != k as u64 + 1 {
                return Err(Error::Invariant(format!(
                    "round {} logged at position {}",
                    r.t,
                    k + 1
                )));
            }
            if !(-TRACE_TOLERANCE..=1.0 + TRACE_TOLERANCE).contains(&r.regret) {
                return Err(Error::Invariant(format!(
                    "regret {} at round {} outside [0, 1]",
                    r.regret, r.t
                )));
            }
            total += r.regret;
            cumulative.push(total);
        }
        let mut index_trajectory = Vec::new();
        if let Some(first) = log.rounds.first().and_then(|r| r.i_m) {
            index_trajectory.push((1, first));
            let horizon = log.rounds.len() as u64;
            for e in log.epochs.iter().filter(|e| e.tau_end < horizon) {
                index_trajectory.push((e.m + 1, e.i_next));
            }
        }
        Ok(Self {
            seed: log.seed,
            cumulative,
            epoch_ends: log.epochs.iter().map(|e| e.tau_end).collect(),
            index_trajectory,
        })
    }

    pub fn horizon(&self) -> u64 {
        self.cumulative.len() as u64 - 1
    }

    pub fn at(&self, t: u64) -> f64 {
        self.cumulative[t as usize]
    }

    /// `R_b - R_a`.
    pub fn increment(&self, a: u64, b: u64) -> f64 {
        self.at(b) - self.at(a)
    }
}

/// Powers of two in `[lo, hi]`, followed by `hi` itself if it is not one.
pub fn log_grid(lo: u64, hi: u64) -> Vec<u64> {
    let mut grid: Vec<u64> = (0..64)
        .map(|k| 1u64 << k)
        .filter(|&t| t >= lo.max(1) && t <= hi)
        .collect();
    if hi >= lo.max(1) && grid.last() != Some(&hi) {
        grid.push(hi);
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: u64,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

fn mean_stderr(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, n);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

/// Mean and standard error of `R_t` across traces at each grid point.
pub fn mean_curve(traces: &[RegretTrace], grid: &[u64]) -> Result<Vec<CurvePoint>> {
    if traces.is_empty() {
        return Err(Error::DegenerateWindow("no traces".into()));
    }
    let horizon = traces.iter().map(RegretTrace::horizon).min().unwrap_or(0);
    grid.iter()
        .map(|&t| {
            if t > horizon {
                return Err(Error::DegenerateWindow(format!(
                    "t = {t} beyond horizon {horizon}"
                )));
            }
            let (mean, stderr, seeds) = mean_stderr(traces.iter().map(|tr| tr.at(t)));
            Ok(CurvePoint {
                t,
                mean,
                stderr,
                seeds,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: Vec<u64>,
}

/// Least-squares slope of `log mean R_t` against `log t` on the log grid of
/// `[t0, t1]`.
pub fn fit_regret_slope(traces: &[RegretTrace], t0: u64, t1: u64) -> Result<SlopeFit> {
    let grid = log_grid(t0, t1);
    if t0 == 0 || t0 >= t1 || grid.len() < 5 {
        return Err(Error::DegenerateWindow(format!(
            "[{t0}, {t1}] has {} grid points, need at least 5",
            grid.len()
        )));
    }
    let curve = mean_curve(traces, &grid)?;
    if let Some(p) = curve
        .iter()
        .find(|p| p.mean.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::DegenerateWindow(format!(
            "mean regret {} at t = {} is not positive",
            p.mean, p.t
        )));
    }
    let xs: Vec<f64> = curve.iter().map(|p| (p.t as f64).ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.mean.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(SlopeFit {
        slope,
        stderr: (ssr / (n - 2.0) / sxx).sqrt(),
        points: grid,
    })
}

/// When a class index stopped being at or above the selected index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Eviction {
    /// `m_hat`: last epoch with `i_m <= i`, and the round ending it.
    After {
        epoch: u32,
        round: u64,
    },
    Never,
}

impl Eviction {
    pub fn round(&self) -> Option<u64> {
        match self {
            Eviction::After { round, .. } => Some(*round),
            Eviction::Never => None,
        }
    }

    pub fn epoch(&self) -> Option<u32> {
        match self {
            Eviction::After { epoch, .. } => Some(*epoch),
            Eviction::Never => None,
        }
    }
}

fn inf_or<T: Serialize, S: Serializer>(
    v: &Option<T>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => v.serialize(s),
        None => s.serialize_str("inf"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedDetection {
    pub seed: u64,
    #[serde(serialize_with = "inf_or")]
    pub m_hat: Option<u32>,
    #[serde(serialize_with = "inf_or")]
    pub eviction_round: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDetection {
    pub class: usize,
    pub seeds: Vec<SeedDetection>,
    pub evicted: usize,
    /// Median eviction round, counting never-evicted seeds as infinite.
    #[serde(serialize_with = "inf_or")]
    pub median_eviction_round: Option<u64>,
    /// `(m_hat, count)` over evicted seeds.
    pub histogram: Vec<(u32, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub classes: Vec<ClassDetection>,
}

impl DetectionReport {
    pub fn class(&self, i: usize) -> &ClassDetection {
        &self.classes[i]
    }
}

/// Per-seed eviction of class `i`: `m_hat_i = max { m : i_m <= i }`, or
/// never when `i_m <= i` still holds in the last epoch reached.
pub fn eviction(log: &RunLog, i: usize) -> Eviction {
    let horizon = log.rounds.len() as u64;
    let mut i_m = 0;
    let mut last_ok = 1;
    let mut round_after_last_ok = 0;
    for e in &log.epochs {
        if i_m <= i {
            last_ok = e.m;
            round_after_last_ok = e.tau_end;
        }
        if e.tau_end < horizon {
            i_m = e.i_next;
        } else {
            // the transition at the horizon starts no epoch
            break;
        }
    }
    if i_m <= i {
        Eviction::Never
    } else {
        Eviction::After {
            epoch: last_ok,
            round: round_after_last_ok,
        }
    }
}

pub fn detection_report(logs: &[RunLog], num_classes: usize) -> DetectionReport {
    let classes = (0..num_classes)
        .map(|i| {
            let evictions: Vec<(u64, Eviction)> =
                logs.iter().map(|l| (l.seed, eviction(l, i))).collect();
            let mut sorted: Vec<Eviction> = evictions.iter().map(|e| e.1).collect();
            sorted.sort();
            let median = sorted
                .get(sorted.len().saturating_sub(1) / 2)
                .and_then(Eviction::round);
            let mut histogram: Vec<(u32, usize)> = Vec::new();
            for m in sorted.iter().filter_map(Eviction::epoch) {
                match histogram.last_mut() {
                    Some((k, c)) if *k == m => *c += 1,
                    _ => histogram.push((m, 1)),
                }
            }
            ClassDetection {
                class: i,
                evicted: sorted.iter().filter(|e| e.round().is_some()).count(),
                seeds: evictions
                    .iter()
                    .map(|(seed, e)| SeedDetection {
                        seed: *seed,
                        m_hat: e.epoch(),
                        eviction_round: e.round(),
                    })
                    .collect(),
                median_eviction_round: median,
                histogram,
            }
        })
        .collect();
    DetectionReport { classes }
}

pub const CURVE_FILE: &str = "regret_curve.csv";
pub const DETECTION_FILE: &str = "detection.json";
pub const TIMELINE_FILE: &str = "index_timeline.csv";

/// Writes the aggregate curve, detection report and index timeline.
pub fn write_report(dir: &Path, logs: &[RunLog], num_classes: usize) -> Result<Vec<CurvePoint>> {
    let traces = logs
        .iter()
        .map(RegretTrace::from_log)
        .collect::<Result<Vec<_>>>()?;
    let horizon = traces.iter().map(RegretTrace::horizon).min().unwrap_or(0);
    let curve = mean_curve(&traces, &log_grid(1, horizon))?;

    let mut csv = String::from("t,mean_regret,stderr,seeds\n");
    for p in &curve {
        csv.push_str(&format!("{},{},{},{}\n", p.t, p.mean, p.stderr, p.seeds));
    }
    fs::write(dir.join(CURVE_FILE), csv)?;

    let report = detection_report(logs, num_classes);
    fs::write(
        dir.join(DETECTION_FILE),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;

    let mut timeline = fs::File::create(dir.join(TIMELINE_FILE))?;
    writeln!(timeline, "seed,epoch,tau_start,i_m,index_set")?;
    for (log, trace) in logs.iter().zip(&traces) {
        for &(m, i_m) in &trace.index_trajectory {
            let (tau_start, set) = if m == 1 {
                (
                    0,
                    (0..num_classes).map(|i| i.to_string()).collect::<Vec<_>>(),
                )
            } else {
                let e = &log.epochs[m as usize - 2];
                (
                    e.tau_end,
                    e.index_set.iter().map(|i| i.to_string()).collect(),
                )
            };
            writeln!(
                timeline,
                "{},{},{},{},{}",
                log.seed,
                m,
                tau_start,
                i_m,
                set.join(" ")
            )?;
        }
    }
    Ok(curve)
}
