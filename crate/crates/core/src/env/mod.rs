//! Synthetic contextual-bandit environments with an exact ground-truth table.
//!
//! An [`Environment`] has a finite context space with a probability weight per
//! context, `K` arms, a mean-reward table `f*(x, a)` in `[0, 1]` and a reward
//! noise family. Because everything is finite, regret and misspecification
//! quantities can be evaluated exactly by summation (see [`diagnostics`]).

pub mod diagnostics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use diagnostics::{
    max_misspecification, min_misspecification, misspec_of_kernel, safe_epoch, DiagnosticsReport,
    MaxMisspecification, SafeEpoch,
};

const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Reward noise around the mean table.
///
/// `Gaussian` noise is clamped symmetrically to `[-r, r]` with
/// `r = min(f, 1 - f)`, which keeps rewards in `[0, 1]` and leaves the mean
/// at exactly `f`. At `f = 0` or `f = 1` the reward is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    Bernoulli,
    Gaussian { sigma: f64 },
}

/// One observed `(context, action, reward)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub context: usize,
    pub action: usize,
    pub reward: f64,
}

impl Sample {
    pub fn new(context: usize, action: usize, reward: f64) -> Self {
        Self {
            context,
            action,
            reward,
        }
    }
}

/// On-disk form of an environment; validated into [`Environment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub context_weights: Vec<f64>,
    pub num_arms: usize,
    pub true_model: Vec<Vec<f64>>,
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentSpec", into = "EnvironmentSpec")]
pub struct Environment {
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    num_arms: usize,
    // row-major, index x * K + a
    means: Vec<f64>,
    optimal: Vec<usize>,
    noise: Noise,
    seed: u64,
}

impl TryFrom<EnvironmentSpec> for Environment {
    type Error = Error;

    fn try_from(spec: EnvironmentSpec) -> Result<Self> {
        Environment::new(
            spec.context_weights,
            spec.num_arms,
            spec.true_model,
            spec.noise,
            spec.seed,
        )
    }
}

impl From<Environment> for EnvironmentSpec {
    fn from(env: Environment) -> Self {
        let true_model = env
            .means
            .chunks(env.num_arms)
            .map(|row| row.to_vec())
            .collect();
        EnvironmentSpec {
            context_weights: env.weights,
            num_arms: env.num_arms,
            true_model,
            noise: env.noise,
            seed: env.seed,
        }
    }
}

impl Environment {
    pub fn new(
        context_weights: Vec<f64>,
        num_arms: usize,
        true_model: Vec<Vec<f64>>,
        noise: Noise,
        seed: u64,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidEnvironment(msg));
        if num_arms < 2 {
            return bad(format!("need at least 2 arms, got {num_arms}"));
        }
        if context_weights.is_empty() {
            return bad("context space is empty".into());
        }
        if let Some(w) = context_weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return bad(format!("context weight {w} is negative or not finite"));
        }
        let total: f64 = context_weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return bad(format!("context weights sum to {total}, expected 1"));
        }
        if true_model.len() != context_weights.len() {
            return bad(format!(
                "true_model has {} rows for {} contexts",
                true_model.len(),
                context_weights.len()
            ));
        }
        let mut means = Vec::with_capacity(true_model.len() * num_arms);
        for (x, row) in true_model.iter().enumerate() {
            if row.len() != num_arms {
                return bad(format!(
                    "true_model row {x} has {} entries, expected {num_arms}",
                    row.len()
                ));
            }
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("true_model[{x}] entry {v} outside [0, 1]"));
                }
            }
            means.extend_from_slice(row);
        }
        if let Noise::Gaussian { sigma } = noise {
            if !sigma.is_finite() || sigma < 0.0 {
                return bad(format!(
                    "gaussian sigma {sigma} must be finite and nonnegative"
                ));
            }
        }

        let mut acc = 0.0;
        let cumulative = context_weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let optimal = means.chunks(num_arms).map(argmax_lowest).collect();

        Ok(Self {
            weights: context_weights,
            cumulative,
            num_arms,
            means,
            optimal,
            noise,
            seed,
        })
    }

    pub fn num_contexts(&self) -> usize {
        self.weights.len()
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_cells(&self) -> usize {
        self.means.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, context: usize) -> f64 {
        self.weights[context]
    }

    /// Mean-reward table, row-major by context.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn mean(&self, context: usize, action: usize) -> f64 {
        self.means[context * self.num_arms + action]
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Best arm at `context`, ties to the lowest index.
    pub fn optimal_arm(&self, context: usize) -> usize {
        self.optimal[context]
    }

    /// `f*(x, pi*(x)) - f*(x, a)`.
    pub fn instant_regret(&self, context: usize, action: usize) -> f64 {
        self.mean(context, self.optimal[context]) - self.mean(context, action)
    }

    /// Draws a context from the marginal and a full reward vector for it.
    pub fn sample_round<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let context = self.sample_context(rng);
        let rewards = (0..self.num_arms)
            .map(|a| self.sample_reward(context, a, rng))
            .collect();
        (context, rewards)
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        if idx < self.weights.len() && self.weights[idx] > 0.0 {
            idx
        } else {
            // u landed past the rounded total; take the last supported context
            self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
        }
    }

    pub fn sample_reward<R: Rng + ?Sized>(
        &self,
        context: usize,
        action: usize,
        rng: &mut R,
    ) -> f64 {
        let f = self.mean(context, action);
        match self.noise {
            Noise::Bernoulli => {
                if rng.random::<f64>() < f {
                    1.0
                } else {
                    0.0
                }
            }
            Noise::Gaussian { sigma } => {
                let eps = if sigma > 0.0 {
                    Normal::new(0.0, sigma)
                        .expect("validated sigma")
                        .sample(rng)
                } else {
                    // keep the stream aligned with the sigma > 0 case
                    let _: f64 = rng.random();
                    0.0
                };
                let radius = f.min(1.0 - f);
                (f + eps.clamp(-radius, radius)).clamp(0.0, 1.0)
            }
        }
    }
}

/// Index of the largest entry, ties broken toward the lowest index.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Deterministic PRNG for one named stream of one run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_arm(f: [f64; 2], noise: Noise) -> Environment {
        Environment::new(vec![1.0], 2, vec![f.to_vec()], noise, 0).unwrap()
    }

    #[test]
    fn deterministic_single_context() {
        let env = two_arm([0.3, 0.7], Noise::Gaussian { sigma: 0.0 });
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            let (x, r) = env.sample_round(&mut rng);
            assert_eq!(x, 0);
            assert_eq!(r, vec![0.3, 0.7]);
        }
    }

    #[test]
    fn context_frequencies_are_binomial() {
        let env = Environment::new(
            vec![0.5, 0.5],
            2,
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            Noise::Bernoulli,
            0,
        )
        .unwrap();
        let mut rng = stream_rng(7, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| env.sample_context(&mut rng) == 0).count() as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((hits - 0.5 * n as f64).abs() < 3.0 * sd, "hits = {hits}");
    }

    #[test]
    fn bernoulli_mean_within_three_sigma() {
        let env = two_arm([0.4, 0.9], Noise::Bernoulli);
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let sum: f64 = (0..n).map(|_| env.sample_reward(0, 0, &mut rng)).sum();
        let sd = (0.4f64 * 0.6 / n as f64).sqrt();
        assert!((sum / n as f64 - 0.4).abs() < 3.0 * sd);
    }

    #[test]
    fn clamped_gaussian_stays_in_range_and_keeps_mean() {
        let env = two_arm([0.1, 0.5], Noise::Gaussian { sigma: 0.3 });
        let mut rng = stream_rng(3, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let r = env.sample_reward(0, 0, &mut rng);
            assert!((0.0..=1.0).contains(&r));
            sum += r;
        }
        // clamped noise has |eps| <= 0.1, so sd <= 0.1
        let sd = 0.1 / (n as f64).sqrt();
        assert!((sum / n as f64 - 0.1).abs() < 3.0 * sd);
    }

    #[test]
    fn regret_values() {
        let env = Environment::new(
            vec![0.5, 0.5],
            2,
            vec![vec![0.2, 0.9], vec![0.5, 0.5]],
            Noise::Bernoulli,
            0,
        )
        .unwrap();
        assert_eq!(env.instant_regret(0, 1), 0.0);
        assert!((env.instant_regret(0, 0) - 0.7).abs() < 1e-15);
        assert_eq!(env.optimal_arm(1), 0);
        assert_eq!(env.instant_regret(1, 1), 0.0);
    }

    #[test]
    fn rejects_bad_environments() {
        assert!(Environment::new(
            vec![0.5, 0.4],
            2,
            vec![vec![0.0; 2]; 2],
            Noise::Bernoulli,
            0
        )
        .is_err());
        assert!(Environment::new(vec![1.0], 1, vec![vec![0.0]], Noise::Bernoulli, 0).is_err());
        assert!(Environment::new(vec![1.0], 2, vec![vec![0.0, 1.2]], Noise::Bernoulli, 0).is_err());
        assert!(Environment::new(vec![1.0], 2, vec![vec![0.0]], Noise::Bernoulli, 0).is_err());
        assert!(Environment::new(vec![], 2, vec![], Noise::Bernoulli, 0).is_err());
    }

    #[test]
    fn equal_seeds_replay() {
        let env = Environment::new(
            vec![0.2, 0.3, 0.5],
            3,
            vec![vec![0.1, 0.5, 0.9]; 3],
            Noise::Gaussian { sigma: 0.2 },
            0,
        )
        .unwrap();
        let draw = |seed| {
            let mut rng = stream_rng(seed, 0);
            (0..500)
                .map(|_| env.sample_round(&mut rng))
                .collect::<Vec<_>>()
        };
        let a = draw(42);
        let b = draw(42);
        assert!(a.iter().zip(&b).all(|(x, y)| x.0 == y.0
            && x.1
                .iter()
                .zip(&y.1)
                .all(|(p, q)| p.to_bits() == q.to_bits())));
        assert_ne!(a, draw(43));
    }

    #[test]
    fn json_roundtrip_validates() {
        let text = r#"{"context_weights":[0.5,0.5],"num_arms":2,
            "true_model":[[0.1,0.2],[0.3,0.4]],"noise":{"kind":"gaussian","sigma":0.1},"seed":3}"#;
        let env: Environment = serde_json::from_str(text).unwrap();
        assert_eq!(env.mean(1, 0), 0.3);
        let back: Environment =
            serde_json::from_str(&serde_json::to_string(&env).unwrap()).unwrap();
        assert_eq!(back.means(), env.means());
        let bad = r#"{"context_weights":[0.5,0.6],"num_arms":2,
            "true_model":[[0.1,0.2],[0.3,0.4]],"noise":{"kind":"bernoulli"}}"#;
        assert!(serde_json::from_str::<Environment>(bad).is_err());
    }
}
