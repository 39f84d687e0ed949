//! Hypothesis classes, ERM fitting and the offline model-selection oracle.
//!
//! Two class kinds are supported over the finite cell set `(x, a)`:
//!
//! - tabular classes, which assign one free value to each group of a
//!   partition of the cells (constant, per-arm, per-context, full table, or
//!   any custom grouping);
//! - linear classes over an explicit feature table, using the first `d`
//!   feature columns.
//!
//! `d` is the number of free parameters: number of groups for tabular
//! classes, feature dimension for linear ones.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::Sample;
use crate::{Error, Result};

/// Prediction for a tabular cell with no training data.
pub const EMPTY_CELL_PREDICTION: f64 = 0.5;
pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.5;
/// Validation losses closer than this count as tied.
pub const ORACLE_TIE_TOLERANCE: f64 = 1e-12;

/// How a tabular class groups the `(x, a)` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// One value shared by every cell.
    Constant,
    /// One value per arm, shared across contexts.
    PerArm,
    /// One value per context, shared across arms.
    PerContext,
    /// One value per `(x, a)` cell.
    Full,
    /// Contexts are grouped; one value per `(group, arm)`.
    ContextGroups(Vec<usize>),
    /// Explicit group label for every cell, row-major by context.
    Cells(Vec<usize>),
}

/// Configuration-file form of a model class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    Tabular {
        partition: Partition,
        /// Optional check against the derived group count.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<usize>,
    },
    Linear {
        d: usize,
        /// One row per cell, row-major by context; at least `d` columns.
        features: Vec<Vec<f64>>,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

#[derive(Debug, Clone, PartialEq)]
enum ClassKind {
    Tabular {
        groups: Vec<usize>,
        num_groups: usize,
    },
    Linear {
        features: Vec<f64>,
        dim: usize,
        ridge: f64,
    },
}

/// A hypothesis family over the `(x, a)` cells of a finite environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelClass {
    kind: ClassKind,
    num_contexts: usize,
    num_arms: usize,
}

impl ModelClass {
    pub fn tabular(partition: &Partition, num_contexts: usize, num_arms: usize) -> Result<Self> {
        let cells = num_contexts * num_arms;
        if cells == 0 {
            return Err(Error::InvalidClass("empty cell space".into()));
        }
        let raw: Vec<usize> = match partition {
            Partition::Constant => vec![0; cells],
            Partition::PerArm => (0..cells).map(|c| c % num_arms).collect(),
            Partition::PerContext => (0..cells).map(|c| c / num_arms).collect(),
            Partition::Full => (0..cells).collect(),
            Partition::ContextGroups(g) => {
                if g.len() != num_contexts {
                    return Err(Error::InvalidClass(format!(
                        "context_groups has {} entries for {num_contexts} contexts",
                        g.len()
                    )));
                }
                (0..cells)
                    .map(|c| g[c / num_arms] * num_arms + c % num_arms)
                    .collect()
            }
            Partition::Cells(g) => {
                if g.len() != cells {
                    return Err(Error::InvalidClass(format!(
                        "cells partition has {} entries for {cells} cells",
                        g.len()
                    )));
                }
                g.clone()
            }
        };
        // relabel to 0..num_groups in order of first appearance
        let mut relabel = HashMap::new();
        let groups = raw
            .iter()
            .map(|g| {
                let next = relabel.len();
                *relabel.entry(*g).or_insert(next)
            })
            .collect();
        Ok(Self {
            kind: ClassKind::Tabular {
                groups,
                num_groups: relabel.len(),
            },
            num_contexts,
            num_arms,
        })
    }

    pub fn linear(
        features: &[Vec<f64>],
        dim: usize,
        ridge: f64,
        num_contexts: usize,
        num_arms: usize,
    ) -> Result<Self> {
        let cells = num_contexts * num_arms;
        if dim == 0 {
            return Err(Error::InvalidClass("linear class needs d >= 1".into()));
        }
        if features.len() != cells {
            return Err(Error::InvalidClass(format!(
                "feature table has {} rows for {cells} cells",
                features.len()
            )));
        }
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidClass(format!(
                "ridge {ridge} must be finite and >= 0"
            )));
        }
        let mut flat = Vec::with_capacity(cells * dim);
        for (c, row) in features.iter().enumerate() {
            if row.len() < dim {
                return Err(Error::InvalidClass(format!(
                    "feature row {c} has {} columns, need {dim}",
                    row.len()
                )));
            }
            if row[..dim].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidClass(format!(
                    "feature row {c} is not finite"
                )));
            }
            flat.extend_from_slice(&row[..dim]);
        }
        Ok(Self {
            kind: ClassKind::Linear {
                features: flat,
                dim,
                ridge,
            },
            num_contexts,
            num_arms,
        })
    }

    pub fn from_spec(spec: &ClassSpec, num_contexts: usize, num_arms: usize) -> Result<Self> {
        match spec {
            ClassSpec::Tabular { partition, d } => {
                let class = Self::tabular(partition, num_contexts, num_arms)?;
                if let Some(d) = d {
                    if *d != class.dim() {
                        return Err(Error::InvalidClass(format!(
                            "declared d = {d} but partition has {} groups",
                            class.dim()
                        )));
                    }
                }
                Ok(class)
            }
            ClassSpec::Linear { d, features, ridge } => {
                Self::linear(features, *d, *ridge, num_contexts, num_arms)
            }
        }
    }

    /// Number of free parameters.
    pub fn dim(&self) -> usize {
        match &self.kind {
            ClassKind::Tabular { num_groups, .. } => *num_groups,
            ClassKind::Linear { dim, .. } => *dim,
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self.kind, ClassKind::Tabular { .. })
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_cells(&self) -> usize {
        self.num_contexts * self.num_arms
    }

    /// Group label of each cell for tabular classes.
    pub fn groups(&self) -> Option<&[usize]> {
        match &self.kind {
            ClassKind::Tabular { groups, .. } => Some(groups),
            ClassKind::Linear { .. } => None,
        }
    }

    fn cell_of(&self, s: &Sample) -> Result<usize> {
        if s.context >= self.num_contexts || s.action >= self.num_arms {
            return Err(Error::InvalidClass(format!(
                "sample (x = {}, a = {}) outside {} contexts x {} arms",
                s.context, s.action, self.num_contexts, self.num_arms
            )));
        }
        Ok(s.context * self.num_arms + s.action)
    }

    /// Weighted least-squares projection of `targets` onto the class.
    ///
    /// Returns the prediction table minimising
    /// `sum_c weights[c] * (f(c) - targets[c])^2`. Linear projections are not
    /// clamped; cells of a zero-weight tabular group get
    /// [`EMPTY_CELL_PREDICTION`].
    pub fn project(&self, targets: &[f64], weights: &[f64]) -> Vec<f64> {
        let cells = self.num_cells();
        debug_assert_eq!(targets.len(), cells);
        debug_assert_eq!(weights.len(), cells);
        match &self.kind {
            ClassKind::Tabular { groups, num_groups } => {
                let mut num = vec![0.0; *num_groups];
                let mut den = vec![0.0; *num_groups];
                for c in 0..cells {
                    num[groups[c]] += weights[c] * targets[c];
                    den[groups[c]] += weights[c];
                }
                groups
                    .iter()
                    .map(|&g| {
                        if den[g] > 0.0 {
                            num[g] / den[g]
                        } else {
                            EMPTY_CELL_PREDICTION
                        }
                    })
                    .collect()
            }
            ClassKind::Linear { features, dim, .. } => {
                let d = *dim;
                let mut gram = DMatrix::<f64>::zeros(d, d);
                let mut rhs = DVector::<f64>::zeros(d);
                for c in 0..cells {
                    let w = weights[c];
                    if w == 0.0 {
                        continue;
                    }
                    let phi = &features[c * d..(c + 1) * d];
                    for i in 0..d {
                        rhs[i] += w * phi[i] * targets[c];
                        for j in 0..d {
                            gram[(i, j)] += w * phi[i] * phi[j];
                        }
                    }
                }
                // min-norm solution; exact for rank-deficient designs
                let theta = gram
                    .svd(true, true)
                    .solve(&rhs, 1e-12)
                    .unwrap_or_else(|_| DVector::zeros(d));
                (0..cells)
                    .map(|c| linear_predict(&features[c * d..(c + 1) * d], theta.as_slice()))
                    .collect()
            }
        }
    }

    /// True if every set of cells this class ties together is also tied by
    /// `coarser`, i.e. `coarser` is a subset of `self`.
    pub fn refines(&self, coarser: &ModelClass) -> bool {
        if self.num_cells() != coarser.num_cells() {
            return false;
        }
        match (&self.kind, &coarser.kind) {
            (
                ClassKind::Tabular { groups: fine, .. },
                ClassKind::Tabular { groups: coarse, .. },
            ) => {
                let mut map = HashMap::new();
                fine.iter()
                    .zip(coarse)
                    .all(|(f, c)| *map.entry(*f).or_insert(*c) == *c)
            }
            (
                ClassKind::Linear {
                    features: big,
                    dim: db,
                    ..
                },
                ClassKind::Linear {
                    features: small,
                    dim: ds,
                    ..
                },
            ) => {
                ds <= db
                    && (0..self.num_cells())
                        .all(|c| big[c * db..c * db + ds] == small[c * ds..(c + 1) * ds])
            }
            _ => false,
        }
    }
}

fn linear_predict(phi: &[f64], theta: &[f64]) -> f64 {
    phi.iter().zip(theta).map(|(p, t)| p * t).sum()
}

/// Checks `d_1 <= ... <= d_M`, and for consecutive classes of the same kind
/// that each one contains the previous (partition refinement for tabular
/// classes, feature-prefix for linear ones).
pub fn validate_nested(classes: &[ModelClass]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::InvalidConfig("class sequence is empty".into()));
    }
    for (j, pair) in classes.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.num_cells() != prev.num_cells() {
            return Err(Error::InvalidConfig(format!(
                "classes {j} and {} are defined on different cell spaces",
                j + 1
            )));
        }
        if next.dim() < prev.dim() {
            return Err(Error::InvalidConfig(format!(
                "class dimensions must be nondecreasing: d_{j} = {} > d_{} = {}",
                prev.dim(),
                j + 1,
                next.dim()
            )));
        }
        if prev.is_tabular() == next.is_tabular() && !next.refines(prev) {
            return Err(Error::InvalidConfig(format!(
                "class {} does not contain class {j}",
                j + 1
            )));
        }
    }
    Ok(())
}

/// A fitted predictor: a clamped prediction table over all cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Position in the class sequence that produced it; `None` for fixed
    /// models such as the initial all-zero predictor.
    pub class_index: Option<usize>,
    /// Group values (tabular) or coefficients (linear).
    pub parameters: Vec<f64>,
    num_arms: usize,
    table: Vec<f64>,
}

impl FittedModel {
    /// The model predicting `value` everywhere.
    pub fn constant(value: f64, num_contexts: usize, num_arms: usize) -> Self {
        Self {
            class_index: None,
            parameters: vec![value],
            num_arms,
            table: vec![value.clamp(0.0, 1.0); num_contexts * num_arms],
        }
    }

    /// Builds a model from an explicit prediction table (row-major, clamped).
    pub fn from_table(table: Vec<f64>, num_arms: usize) -> Self {
        Self {
            class_index: None,
            parameters: table.clone(),
            num_arms,
            table: table.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn predict(&self, context: usize, action: usize) -> f64 {
        self.table[context * self.num_arms + action]
    }

    /// Predictions for every arm at `context`.
    pub fn row(&self, context: usize) -> &[f64] {
        &self.table[context * self.num_arms..(context + 1) * self.num_arms]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_contexts(&self) -> usize {
        self.table.len() / self.num_arms
    }
}

/// Empirical risk minimiser of squared loss over `class`.
///
/// Tabular classes get per-group sample means (empty groups predict 0.5);
/// linear classes get ridge-damped least squares, then predictions are
/// clamped to `[0, 1]`.
pub fn erm_fit(class: &ModelClass, data: &[Sample]) -> Result<FittedModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (parameters, table) = match &class.kind {
        ClassKind::Tabular { groups, num_groups } => {
            let mut sum = vec![0.0; *num_groups];
            let mut count = vec![0usize; *num_groups];
            for s in data {
                let g = groups[class.cell_of(s)?];
                sum[g] += s.reward;
                count[g] += 1;
            }
            let params: Vec<f64> = sum
                .iter()
                .zip(&count)
                .map(|(s, &n)| {
                    if n > 0 {
                        s / n as f64
                    } else {
                        EMPTY_CELL_PREDICTION
                    }
                })
                .collect();
            let table = groups.iter().map(|&g| params[g].clamp(0.0, 1.0)).collect();
            (params, table)
        }
        ClassKind::Linear {
            features,
            dim,
            ridge,
        } => {
            let d = *dim;
            let mut gram = DMatrix::<f64>::identity(d, d) * *ridge;
            let mut rhs = DVector::<f64>::zeros(d);
            for s in data {
                let c = class.cell_of(s)?;
                let phi = &features[c * d..(c + 1) * d];
                for i in 0..d {
                    rhs[i] += phi[i] * s.reward;
                    for j in 0..d {
                        gram[(i, j)] += phi[i] * phi[j];
                    }
                }
            }
            let theta = match gram.clone().cholesky() {
                Some(chol) => chol.solve(&rhs),
                None => gram
                    .svd(true, true)
                    .solve(&rhs, 1e-12)
                    .map_err(|e| Error::Invariant(format!("least squares failed: {e}")))?,
            };
            let params = theta.as_slice().to_vec();
            let table = (0..class.num_cells())
                .map(|c| linear_predict(&features[c * d..(c + 1) * d], &params).clamp(0.0, 1.0))
                .collect();
            (params, table)
        }
    };
    Ok(FittedModel {
        class_index: None,
        parameters,
        num_arms: class.num_arms,
        table,
    })
}

/// Mean squared error of `model` on `data`.
pub fn empirical_loss(data: &[Sample], model: &FittedModel) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = data
        .iter()
        .map(|s| {
            let e = model.predict(s.context, s.action) - s.reward;
            e * e
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Result of the estimation oracle.
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub model: FittedModel,
    /// Validation loss of each candidate, in class order.
    pub validation_losses: Vec<f64>,
}

impl OracleFit {
    pub fn selected(&self) -> usize {
        self.model
            .class_index
            .expect("oracle output carries its class")
    }
}

/// Training sizes for a stream-order split with `ceil(n * ratio)` leading
/// samples in the first part.
pub fn split_sizes(n: usize, ratio: f64) -> Result<(usize, usize)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio {ratio} must lie in (0, 1)"
        )));
    }
    let first = (n as f64 * ratio).ceil() as usize;
    if first == 0 || first >= n {
        return Err(Error::SplitInfeasible {
            n,
            reason: format!("ratio {ratio} leaves an empty part"),
        });
    }
    Ok((first, n - first))
}

/// Offline model-selection oracle over the first `count` classes.
///
/// Fits each candidate by ERM on the first `ceil(n * split_ratio)` samples
/// and returns the candidate with the lowest loss on the rest. Ties go to
/// the smallest class index, with losses within [`ORACLE_TIE_TOLERANCE`]
/// treated as equal.
pub fn est_oracle(
    classes: &[ModelClass],
    count: usize,
    data: &[Sample],
    split_ratio: f64,
) -> Result<OracleFit> {
    if count == 0 || count > classes.len() {
        return Err(Error::ClassIndex {
            index: count,
            count: classes.len(),
        });
    }
    if data.len() < 2 {
        return Err(Error::SplitInfeasible {
            n: data.len(),
            reason: "need at least 2 samples".into(),
        });
    }
    let (n_train, _) = split_sizes(data.len(), split_ratio)?;
    let (train, valid) = data.split_at(n_train);

    let mut best: Option<(f64, FittedModel)> = None;
    let mut validation_losses = Vec::with_capacity(count);
    for (j, class) in classes[..count].iter().enumerate() {
        let mut fit = erm_fit(class, train)?;
        fit.class_index = Some(j);
        let loss = empirical_loss(valid, &fit)?;
        validation_losses.push(loss);
        if best
            .as_ref()
            .is_none_or(|(b, _)| loss < *b - ORACLE_TIE_TOLERANCE)
        {
            best = Some((loss, fit));
        }
    }
    let (_, model) = best.expect("at least one candidate");
    Ok(OracleFit {
        model,
        validation_losses,
    })
}

/// Parametric estimation rate `C1 * d * ln(n) * ln(1/zeta) / n`.
///
/// Sample sizes below 2 are evaluated at `n = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    pub c1: f64,
}

impl Default for RateFunction {
    fn default() -> Self {
        Self { c1: 1.0 }
    }
}

impl RateFunction {
    pub fn new(c1: f64) -> Result<Self> {
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(Error::InvalidConfig(format!("C1 = {c1} must be positive")));
        }
        Ok(Self { c1 })
    }

    pub fn eval(&self, d: usize, n: u64, zeta: f64) -> f64 {
        let n = n.max(2) as f64;
        self.c1 * d as f64 * n.ln() * (1.0 / zeta).ln() / n
    }

    /// Rate for estimating a bounded mean, `ln(1/zeta) / n`.
    pub fn mean_rate(n: u64, zeta: f64) -> f64 {
        (1.0 / zeta).ln() / n.max(1) as f64
    }

    /// First `n` in `[n_min, n_max)` where `xi(n, zeta / ln n)` increases
    /// going to `n + 1`, if any.
    pub fn monotonicity_violation(
        &self,
        d: usize,
        zeta: f64,
        n_min: u64,
        n_max: u64,
    ) -> Option<u64> {
        let at = |n: u64| self.eval(d, n, zeta / (n as f64).ln());
        let mut prev = at(n_min);
        for n in n_min..n_max {
            let next = at(n + 1);
            if next > prev * (1.0 + 1e-12) {
                return Some(n);
            }
            prev = next;
        }
        None
    }

    /// First `n` in `[n_min, n_max)` where the ratio `xi_i / xi_{i-1}` at
    /// `(n, zeta / ln n)` is below 1 or increases going to `n + 1`.
    pub fn ratio_violation(
        &self,
        d_prev: usize,
        d: usize,
        zeta: f64,
        n_min: u64,
        n_max: u64,
    ) -> Option<u64> {
        let ratio = |n: u64| {
            let z = zeta / (n as f64).ln();
            self.eval(d, n, z) / self.eval(d_prev, n, z)
        };
        let mut prev = ratio(n_min);
        for n in n_min..n_max {
            let next = ratio(n + 1);
            if prev < 1.0 || next > prev * (1.0 + 1e-12) {
                return Some(n);
            }
            prev = next;
        }
        None
    }
}
