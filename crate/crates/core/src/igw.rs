//! Inverse-gap-weighting action selection.
//!
//! For a reward model `f` and exploration parameter `gamma > 0`, the kernel
//! at context `x` puts mass `1 / (K + gamma * (f(x, a_hat) - f(x, a)))` on
//! every arm other than the predicted best `a_hat`, and the remainder on
//! `a_hat`.

use rand::Rng;

use crate::env::{argmax_lowest, Environment};
use crate::models::FittedModel;
use crate::{Error, Result};

/// Largest tolerated deviation of a kernel row from summing to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Writes the IGW distribution for one context into `out`.
///
/// `predictions[a]` is the model's prediction for arm `a`. Returns the
/// predicted best arm (ties to the lowest index).
pub fn igw_probs(predictions: &[f64], gamma: f64, out: &mut [f64]) -> usize {
    let k = predictions.len();
    debug_assert_eq!(out.len(), k);
    let best = argmax_lowest(predictions);
    let top = predictions[best];
    let mut rest = 0.0;
    for a in 0..k {
        if a != best {
            let p = 1.0 / (k as f64 + gamma * (top - predictions[a]));
            out[a] = p;
            rest += p;
        }
    }
    out[best] = 1.0 - rest;
    best
}

fn sample_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// An explicit action-selection kernel: one distribution per context.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    num_arms: usize,
    probs: Vec<f64>,
}

impl KernelTable {
    pub fn uniform(num_contexts: usize, num_arms: usize) -> Self {
        Self {
            num_arms,
            probs: vec![1.0 / num_arms as f64; num_contexts * num_arms],
        }
    }

    /// Point mass on `policy[x]` at each context.
    pub fn deterministic(policy: &[usize], num_arms: usize) -> Self {
        let mut probs = vec![0.0; policy.len() * num_arms];
        for (x, &a) in policy.iter().enumerate() {
            probs[x * num_arms + a] = 1.0;
        }
        Self { num_arms, probs }
    }

    /// Builds a table from row-major probabilities, checking each row.
    pub fn from_rows(probs: Vec<f64>, num_arms: usize) -> Result<Self> {
        if num_arms == 0 || !probs.len().is_multiple_of(num_arms) {
            return Err(Error::InvalidConfig("kernel table shape mismatch".into()));
        }
        for (x, row) in probs.chunks(num_arms).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "kernel row {x} is not a distribution"
                )));
            }
        }
        Ok(Self { num_arms, probs })
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_contexts(&self) -> usize {
        self.probs.len() / self.num_arms
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.probs[context * self.num_arms..(context + 1) * self.num_arms]
    }

    pub fn prob(&self, context: usize, action: usize) -> f64 {
        self.probs[context * self.num_arms + action]
    }

    /// Row-major probabilities.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, context: usize, rng: &mut R) -> usize {
        sample_from(self.row(context), rng)
    }

    /// `sum_x w(x) / p(pi(x) | x)`.
    pub fn expected_inverse_weight(&self, env: &Environment, policy: &[usize]) -> f64 {
        env.weights()
            .iter()
            .enumerate()
            .map(|(x, w)| w / self.prob(x, policy[x]))
            .sum()
    }

    /// Expected true regret of one round drawn from this kernel.
    pub fn expected_regret(&self, env: &Environment) -> f64 {
        (0..env.num_contexts())
            .map(|x| {
                env.weight(x)
                    * self
                        .row(x)
                        .iter()
                        .enumerate()
                        .map(|(a, p)| p * env.instant_regret(x, a))
                        .sum::<f64>()
            })
            .sum()
    }
}

/// The IGW kernel built from a fitted model and an exploration parameter.
#[derive(Debug, Clone)]
pub struct IgwKernel {
    model: FittedModel,
    gamma: f64,
}

impl IgwKernel {
    pub fn new(model: FittedModel, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma = {gamma} must be positive"
            )));
        }
        Ok(Self { model, gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn model(&self) -> &FittedModel {
        &self.model
    }

    pub fn num_arms(&self) -> usize {
        self.model.num_arms()
    }

    /// Predicted best arm at `context`.
    pub fn best_arm(&self, context: usize) -> usize {
        argmax_lowest(self.model.row(context))
    }

    pub fn probs(&self, context: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_arms()];
        igw_probs(self.model.row(context), self.gamma, &mut out);
        out
    }

    /// Like [`probs`](Self::probs) but fails if the row does not sum to one
    /// within [`NORMALIZATION_TOLERANCE`]. Rows are never renormalised.
    pub fn checked_probs(&self, context: usize) -> Result<Vec<f64>> {
        let p = self.probs(context);
        let residual = (p.iter().sum::<f64>() - 1.0).abs();
        if residual > NORMALIZATION_TOLERANCE || p.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::Invariant(format!(
                "IGW row at context {context} is not a distribution (residual {residual:e})"
            )));
        }
        Ok(p)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, context: usize, rng: &mut R) -> usize {
        sample_from(&self.probs(context), rng)
    }

    /// Materialises the kernel over all contexts.
    pub fn table(&self) -> Result<KernelTable> {
        let k = self.num_arms();
        let mut probs = Vec::with_capacity(self.model.table().len());
        for x in 0..self.model.num_contexts() {
            probs.extend(self.checked_probs(x)?);
        }
        Ok(KernelTable { num_arms: k, probs })
    }

    /// `V(p, pi) = sum_x w(x) / p(pi(x) | x)`.
    pub fn expected_inverse_weight(&self, env: &Environment, policy: &[usize]) -> f64 {
        env.weights()
            .iter()
            .enumerate()
            .map(|(x, w)| w / self.probs(x)[policy[x]])
            .sum()
    }

    /// `sum_x w(x) sum_a p(a|x) (f(x, a_hat) - f(x, a))`, the kernel's regret
    /// measured against its own model.
    pub fn expected_model_regret(&self, env: &Environment) -> f64 {
        (0..env.num_contexts())
            .map(|x| env.weight(x) * self.context_model_regret(x))
            .sum()
    }

    pub fn context_model_regret(&self, context: usize) -> f64 {
        let row = self.model.row(context);
        let top = row[argmax_lowest(row)];
        self.probs(context)
            .iter()
            .zip(row)
            .map(|(p, f)| p * (top - f))
            .sum()
    }

    /// Right-hand side of the inverse-weight bound,
    /// `K + gamma * E_x[f(x, a_hat) - f(x, pi(x))]`.
    pub fn inverse_weight_bound(&self, env: &Environment, policy: &[usize]) -> f64 {
        let gap: f64 = (0..env.num_contexts())
            .map(|x| {
                let row = self.model.row(x);
                env.weight(x) * (row[argmax_lowest(row)] - row[policy[x]])
            })
            .sum();
        self.num_arms() as f64 + self.gamma * gap
    }
}
