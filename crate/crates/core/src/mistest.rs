//! Holdout goodness-of-fit test for misspecification.
//!
//! The epoch's data is split in stream order: the last `ceil(alpha_ho * n)`
//! samples form the holdout set, the rest are for training. The estimation
//! oracle is run twice on the training part, once over classes `0..=i` and
//! once over the whole sequence. The union of classes `0..=i` is declared
//! misspecified when its holdout loss exceeds the full sequence's holdout
//! loss by more than
//!
//! ```text
//! 4 xi_i(n_tr, zeta / (6 (i + 1))) + (26 / 3) ln(6 / zeta) / n_ho
//! ```

use serde::{Deserialize, Serialize};

use crate::env::Sample;
use crate::models::{empirical_loss, est_oracle, ModelClass, RateFunction, DEFAULT_SPLIT_RATIO};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisTestConfig {
    /// Fraction of the epoch's samples held out.
    pub alpha_ho: f64,
    pub zeta: f64,
    pub rate: RateFunction,
    /// Training/validation split used by the estimation oracle.
    pub oracle_split: f64,
}

impl MisTestConfig {
    pub fn new(alpha_ho: f64, zeta: f64, rate: RateFunction) -> Result<Self> {
        if !(alpha_ho > 0.0 && alpha_ho < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_ho = {alpha_ho} must lie in (0, 1)"
            )));
        }
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "zeta = {zeta} must lie in (0, 1)"
            )));
        }
        Ok(Self {
            alpha_ho,
            zeta,
            rate,
            oracle_split: DEFAULT_SPLIT_RATIO,
        })
    }

    pub fn with_zeta(self, zeta: f64) -> Result<Self> {
        Self { zeta, ..self }.validated()
    }

    fn validated(self) -> Result<Self> {
        Self::new(self.alpha_ho, self.zeta, self.rate).map(|c| Self {
            oracle_split: self.oracle_split,
            ..c
        })
    }

    /// `(n_tr, n_ho)` for `n` samples.
    pub fn split_sizes(&self, n: usize) -> Result<(usize, usize)> {
        let n_ho = (self.alpha_ho * n as f64).ceil() as usize;
        if n_ho < 1 || n < n_ho + 2 {
            return Err(Error::SplitInfeasible {
                n,
                reason: format!("holdout of {n_ho} leaves fewer than 2 training samples"),
            });
        }
        Ok((n - n_ho, n_ho))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParts {
    /// Holdout loss of the oracle over the full sequence.
    pub loss_full: f64,
    pub rate_term: f64,
    pub bernstein_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    /// Class index that was tested (the union of classes `0..=class`).
    pub class: usize,
    pub misspecified: bool,
    /// Holdout loss of the oracle over classes `0..=class`.
    pub lhs: f64,
    pub rhs: f64,
    pub components: ThresholdParts,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// `4 xi(n_tr, zeta / (6 rank)) + (26/3) ln(6/zeta) / n_ho` for the class of
/// dimension `d` at position `rank` (1-based) in the sequence.
pub fn threshold(
    rate: &RateFunction,
    d: usize,
    rank: usize,
    n_tr: usize,
    n_ho: usize,
    zeta: f64,
) -> f64 {
    let (r, b) = threshold_terms(rate, d, rank, n_tr, n_ho, zeta);
    r + b
}

fn threshold_terms(
    rate: &RateFunction,
    d: usize,
    rank: usize,
    n_tr: usize,
    n_ho: usize,
    zeta: f64,
) -> (f64, f64) {
    let rate_term = 4.0 * rate.eval(d, n_tr as u64, zeta / (6.0 * rank as f64));
    let bernstein_term = 26.0 / 3.0 * (6.0 / zeta).ln() / n_ho as f64;
    (rate_term, bernstein_term)
}

/// Tests whether the union of classes `0..=class` may be well-specified.
pub fn run_test(
    data: &[Sample],
    class: usize,
    classes: &[ModelClass],
    config: &MisTestConfig,
) -> Result<TestVerdict> {
    if class >= classes.len() {
        return Err(Error::ClassIndex {
            index: class,
            count: classes.len(),
        });
    }
    let (n_tr, n_ho) = config.split_sizes(data.len())?;
    let (train, holdout) = data.split_at(n_tr);

    let restricted = est_oracle(classes, class + 1, train, config.oracle_split)?;
    let full = if class + 1 == classes.len() {
        restricted.clone()
    } else {
        est_oracle(classes, classes.len(), train, config.oracle_split)?
    };
    let lhs = empirical_loss(holdout, &restricted.model)?;
    let loss_full = empirical_loss(holdout, &full.model)?;
    let (rate_term, bernstein_term) = threshold_terms(
        &config.rate,
        classes[class].dim(),
        class + 1,
        n_tr,
        n_ho,
        config.zeta,
    );
    let rhs = loss_full + rate_term + bernstein_term;

    Ok(TestVerdict {
        class,
        misspecified: lhs > rhs,
        lhs,
        rhs,
        components: ThresholdParts {
            loss_full,
            rate_term,
            bernstein_term,
        },
        n_train: n_tr,
        n_holdout: n_ho,
    })
}
