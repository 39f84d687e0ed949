//! Mod-IGW: inverse gap weighting with epoch-wise model selection.
//!
//! Epoch `m` covers rounds `tau_{m-1} + 1 ..= tau_m`, with `tau_0 = 0` and
//! `tau_{m+1} = 2 tau_m`. During an epoch the kernel is fixed. At its end
//!
//! 1. the estimation oracle over all classes is refit on the epoch's data;
//! 2. every surviving class index is re-tested for misspecification at
//!    confidence `delta / (4 M m^2)` and dropped if the test fires;
//! 3. the exploration parameter is set from the smallest surviving index.
//!
//! Evicted indices are never re-tested and never return.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{stream_rng, Environment, Sample};
use crate::igw::{IgwKernel, KernelTable};
use crate::mistest::{run_test, MisTestConfig, TestVerdict};
use crate::models::{est_oracle, validate_nested, FittedModel, ModelClass, RateFunction};
use crate::{Error, Result};

/// Epochs beyond this would overflow the round counter for any `tau1 >= 2`.
pub const MAX_EPOCHS: u32 = 62;

const ENV_STREAM: u64 = 0;
const ACTION_STREAM: u64 = 1;

/// `tau_m`, the last round of epoch `m` (`tau_0 = 0`).
pub fn epoch_end(tau1: u64, m: u32) -> Option<u64> {
    if m == 0 {
        return Some(0);
    }
    tau1.checked_mul(1u64.checked_shl(m - 1)?)
        .filter(|t| t.leading_zeros() > 0)
}

/// `tau_m - tau_{m-1}`.
pub fn epoch_length(tau1: u64, m: u32) -> Option<u64> {
    Some(epoch_end(tau1, m)? - epoch_end(tau1, m.checked_sub(1)?)?)
}

/// Confidence level `delta / (4 M m^2)` used for epoch `m`.
pub fn confidence_budget(delta: f64, num_classes: usize, m: u32) -> f64 {
    delta / (4.0 * num_classes as f64 * (m as f64).powi(2))
}

/// Exploration parameter for the class of dimension `d` computed at the end
/// of epoch `m`, i.e. the value used during epoch `m + 1`:
/// `sqrt(K / (8 xi_d(tau_m - tau_{m-1}, delta / (4 M m^2))))`.
pub fn gamma_for(
    rate: &RateFunction,
    d: usize,
    num_arms: usize,
    m: u32,
    delta: f64,
    num_classes: usize,
    tau1: u64,
) -> f64 {
    let n = epoch_length(tau1, m).unwrap_or(u64::MAX);
    let xi = rate.eval(d, n, confidence_budget(delta, num_classes, m));
    (num_arms as f64 / (8.0 * xi)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Algorithm {
    ModIgw,
    /// Mod-IGW restricted to the single class at this index.
    FixedClassIgw {
        class: usize,
    },
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: u64,
    #[serde(default = "defaults::tau1")]
    pub tau1: u64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::one")]
    pub c0: f64,
    #[serde(default = "defaults::one")]
    pub c1: f64,
    #[serde(default = "defaults::half")]
    pub alpha_ho: f64,
    /// Training fraction inside the estimation oracle.
    #[serde(default = "defaults::half")]
    pub split_ratio: f64,
    /// Refit on all data so far instead of the last epoch only.
    #[serde(default)]
    pub cumulative_data: bool,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn tau1() -> u64 {
        2
    }
    pub fn delta() -> f64 {
        0.1
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn half() -> f64 {
        0.5
    }
}

impl RunConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        Self {
            horizon,
            tau1: defaults::tau1(),
            delta: defaults::delta(),
            c0: 1.0,
            c1: 1.0,
            alpha_ho: 0.5,
            split_ratio: 0.5,
            cumulative_data: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.tau1 < 2 {
            return bad(format!("tau1 = {} must be at least 2", self.tau1));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        if !(self.c0 >= 1.0 && self.c0.is_finite()) {
            return bad(format!("c0 = {} must be >= 1", self.c0));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!(
                "split_ratio = {} must lie in (0, 1)",
                self.split_ratio
            ));
        }
        RateFunction::new(self.c1)?;
        MisTestConfig::new(self.alpha_ho, 0.5, RateFunction::default())?;
        Ok(())
    }

    pub fn rate(&self) -> RateFunction {
        RateFunction { c1: self.c1 }
    }
}

/// Mod-IGW state at the start of (or during) epoch `m`.
#[derive(Debug, Clone)]
pub struct EpochState {
    pub m: u32,
    pub tau_prev: u64,
    pub tau_cur: u64,
    /// Surviving class indices, ascending.
    pub index_set: Vec<usize>,
    pub gamma: f64,
    pub model: FittedModel,
    /// Samples collected so far in this epoch.
    pub epoch_data: Vec<Sample>,
}

impl EpochState {
    /// First-epoch state: zero model, all classes, `gamma = 1`.
    pub fn initial(num_classes: usize, num_contexts: usize, num_arms: usize, tau1: u64) -> Self {
        Self {
            m: 1,
            tau_prev: 0,
            tau_cur: tau1,
            index_set: (0..num_classes).collect(),
            gamma: 1.0,
            model: FittedModel::constant(0.0, num_contexts, num_arms),
            epoch_data: Vec::new(),
        }
    }

    /// Smallest surviving class index.
    pub fn i_m(&self) -> usize {
        self.index_set[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub epoch: u32,
    pub context: usize,
    pub action: usize,
    pub reward: f64,
    pub regret: f64,
    pub gamma: Option<f64>,
    pub i_m: Option<usize>,
}

/// Transition at the end of epoch `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub m: u32,
    pub tau_end: u64,
    pub samples: usize,
    /// Index set for epoch `m + 1`.
    pub index_set: Vec<usize>,
    pub i_next: usize,
    pub gamma_next: f64,
    /// Class chosen by the estimation oracle for the next model.
    pub model_class: Option<usize>,
    pub zeta: f64,
    pub verdicts: Vec<TestVerdict>,
    /// Indices left untested because the epoch was too short to split.
    pub untested: Vec<usize>,
}

/// Constants the end-of-epoch update needs besides the data.
#[derive(Debug, Clone, Copy)]
pub struct UpdateParams {
    pub num_arms: usize,
    pub tau1: u64,
    pub delta: f64,
    pub rate: RateFunction,
    pub alpha_ho: f64,
    pub split_ratio: f64,
}

/// Computes the state for epoch `m + 1` from the finished epoch `m`.
///
/// `data` is the oracle's input (the epoch's samples, or all samples when
/// refitting cumulatively).
pub fn end_of_epoch_update(
    state: &EpochState,
    data: &[Sample],
    classes: &[ModelClass],
    params: &UpdateParams,
) -> Result<(EpochState, EpochRecord)> {
    let m = state.m;
    let num_classes = classes.len();
    let zeta = confidence_budget(params.delta, num_classes, m);
    let fit = est_oracle(classes, num_classes, data, params.split_ratio)?;

    let test_config = MisTestConfig {
        oracle_split: params.split_ratio,
        ..MisTestConfig::new(params.alpha_ho, zeta, params.rate)?
    };
    let testable = test_config.split_sizes(data.len()).is_ok();
    let mut verdicts = Vec::new();
    let mut survivors = Vec::with_capacity(state.index_set.len());
    for &i in &state.index_set {
        if !testable {
            survivors.push(i);
            continue;
        }
        let v = run_test(data, i, classes, &test_config)?;
        if !v.misspecified {
            survivors.push(i);
        }
        verdicts.push(v);
    }
    if survivors.is_empty() {
        return Err(Error::Invariant(format!(
            "index set became empty after epoch {m}"
        )));
    }
    let i_next = survivors[0];
    let gamma_next = gamma_for(
        &params.rate,
        classes[i_next].dim(),
        params.num_arms,
        m,
        params.delta,
        num_classes,
        params.tau1,
    );
    let tau_next = state
        .tau_cur
        .checked_mul(2)
        .ok_or_else(|| Error::Invariant("epoch schedule overflow".into()))?;

    let record = EpochRecord {
        m,
        tau_end: state.tau_cur,
        samples: data.len(),
        index_set: survivors.clone(),
        i_next,
        gamma_next,
        model_class: fit.model.class_index,
        zeta,
        verdicts,
        untested: if testable {
            Vec::new()
        } else {
            state.index_set.clone()
        },
    };
    let next = EpochState {
        m: m + 1,
        tau_prev: state.tau_cur,
        tau_cur: tau_next,
        index_set: survivors,
        gamma: gamma_next,
        model: fit.model,
        epoch_data: Vec::new(),
    };
    Ok((next, record))
}

/// Output of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// A single sequential run of Mod-IGW (or a baseline) on one environment.
pub struct ModIgw<'a> {
    env: &'a Environment,
    classes: Vec<ModelClass>,
    config: RunConfig,
    uniform: bool,
    state: EpochState,
    history: Vec<Sample>,
    kernel: KernelTable,
    env_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
    t: u64,
}

impl<'a> ModIgw<'a> {
    pub fn new(
        env: &'a Environment,
        classes: &[ModelClass],
        algorithm: &Algorithm,
        config: RunConfig,
    ) -> Result<Self> {
        config.validate()?;
        let classes: Vec<ModelClass> = match algorithm {
            Algorithm::ModIgw => classes.to_vec(),
            Algorithm::FixedClassIgw { class } => vec![classes
                .get(*class)
                .ok_or(Error::ClassIndex {
                    index: *class,
                    count: classes.len(),
                })?
                .clone()],
            Algorithm::UniformRandom => classes.to_vec(),
        };
        let uniform = matches!(algorithm, Algorithm::UniformRandom);
        if !uniform {
            validate_nested(&classes)?;
        }
        if let Some(c) = classes
            .iter()
            .find(|c| c.num_contexts() != env.num_contexts() || c.num_arms() != env.num_arms())
        {
            return Err(Error::InvalidConfig(format!(
                "class over {}x{} cells does not match the environment",
                c.num_contexts(),
                c.num_arms()
            )));
        }
        let state = EpochState::initial(
            classes.len().max(1),
            env.num_contexts(),
            env.num_arms(),
            config.tau1,
        );
        let stream_seed = mix_seed(env.seed(), config.seed);
        let mut run = Self {
            env,
            classes,
            uniform,
            state,
            history: Vec::new(),
            kernel: KernelTable::uniform(env.num_contexts(), env.num_arms()),
            env_rng: stream_rng(stream_seed, ENV_STREAM),
            action_rng: stream_rng(stream_seed, ACTION_STREAM),
            t: 0,
            config,
        };
        run.rebuild_kernel()?;
        Ok(run)
    }

    pub fn state(&self) -> &EpochState {
        &self.state
    }

    pub fn kernel(&self) -> &KernelTable {
        &self.kernel
    }

    pub fn classes(&self) -> &[ModelClass] {
        &self.classes
    }

    pub fn finished(&self) -> bool {
        self.t >= self.config.horizon
    }

    fn rebuild_kernel(&mut self) -> Result<()> {
        self.kernel = if self.uniform {
            KernelTable::uniform(self.env.num_contexts(), self.env.num_arms())
        } else {
            IgwKernel::new(self.state.model.clone(), self.state.gamma)?.table()?
        };
        Ok(())
    }

    fn update_params(&self) -> UpdateParams {
        UpdateParams {
            num_arms: self.env.num_arms(),
            tau1: self.config.tau1,
            delta: self.config.delta,
            rate: self.config.rate(),
            alpha_ho: self.config.alpha_ho,
            split_ratio: self.config.split_ratio,
        }
    }

    /// Plays the rest of the current epoch, truncated at the horizon.
    pub fn run_epoch(&mut self) -> Vec<RoundRecord> {
        let end = self.state.tau_cur.min(self.config.horizon);
        let mut log = Vec::with_capacity(end.saturating_sub(self.t) as usize);
        while self.t < end {
            self.t += 1;
            let (context, rewards) = self.env.sample_round(&mut self.env_rng);
            let action = self.kernel.sample(context, &mut self.action_rng);
            let reward = rewards[action];
            self.state
                .epoch_data
                .push(Sample::new(context, action, reward));
            log.push(RoundRecord {
                t: self.t,
                epoch: self.state.m,
                context,
                action,
                reward,
                regret: self.env.instant_regret(context, action),
                gamma: (!self.uniform).then_some(self.state.gamma),
                i_m: (!self.uniform).then(|| self.state.i_m()),
            });
        }
        log
    }

    /// Closes a completed epoch and prepares the next one.
    pub fn end_epoch(&mut self) -> Result<EpochRecord> {
        if self.t != self.state.tau_cur {
            return Err(Error::Invariant(format!(
                "epoch {} closed at round {} instead of {}",
                self.state.m, self.t, self.state.tau_cur
            )));
        }
        let epoch_data = std::mem::take(&mut self.state.epoch_data);
        if self.uniform {
            let m = self.state.m;
            self.state.m += 1;
            self.state.tau_prev = self.state.tau_cur;
            self.state.tau_cur *= 2;
            return Ok(EpochRecord {
                m,
                tau_end: self.state.tau_prev,
                samples: epoch_data.len(),
                index_set: self.state.index_set.clone(),
                i_next: self.state.i_m(),
                gamma_next: 0.0,
                model_class: None,
                zeta: 0.0,
                verdicts: Vec::new(),
                untested: Vec::new(),
            });
        }
        let data = if self.config.cumulative_data {
            self.history.extend_from_slice(&epoch_data);
            self.history.as_slice()
        } else {
            epoch_data.as_slice()
        };
        let (next, record) =
            end_of_epoch_update(&self.state, data, &self.classes, &self.update_params())?;
        if !next
            .index_set
            .iter()
            .all(|i| self.state.index_set.contains(i))
        {
            return Err(Error::Invariant("index set grew".into()));
        }
        self.state = next;
        self.rebuild_kernel()?;
        Ok(record)
    }

    /// Runs to the horizon.
    pub fn run(mut self) -> Result<RunLog> {
        let mut rounds = Vec::with_capacity(self.config.horizon as usize);
        let mut epochs = Vec::new();
        while !self.finished() {
            rounds.extend(self.run_epoch());
            if self.t == self.state.tau_cur {
                epochs.push(self.end_epoch()?);
            }
        }
        Ok(RunLog {
            seed: self.config.seed,
            rounds,
            epochs,
        })
    }
}

/// Combines the environment seed with a run seed.
pub fn mix_seed(env_seed: u64, run_seed: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = env_seed ^ run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
