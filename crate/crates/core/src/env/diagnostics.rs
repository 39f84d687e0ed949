//! Exact misspecification measures on finite environments.
//!
//! `b_i(p)` is the smallest kernel-weighted squared distance from the true
//! mean table to class `i`. For a fixed model the weighted distance is linear
//! in the kernel, so `b_i` is concave in `p`. Two consequences:
//!
//! - its maximum over kernels (`B_i`) is generally attained at a randomised
//!   kernel. We climb to it with Frank-Wolfe and bound it from above by
//!   `sum_x w(x) max_a (f(x, a) - f*(x, a))^2` for each visited projection
//!   `f`, which is valid for any `f`;
//! - its minimum over kernels (the clear-misspecification constant) is
//!   attained at a deterministic policy, so enumeration is exact.

use serde::{Serialize, Serializer};

use crate::bandit::{confidence_budget, epoch_length, MAX_EPOCHS};
use crate::env::Environment;
use crate::igw::KernelTable;
use crate::models::{ModelClass, RateFunction};
use crate::{Error, Result};

/// Misspecification at or below this is treated as realizable.
pub const REALIZABLE_TOLERANCE: f64 = 1e-14;

/// Largest policy count enumerated when computing the minimum over kernels.
pub const DEFAULT_POLICY_CAP: u64 = 1 << 20;

fn check_shapes(env: &Environment, class: &ModelClass, kernel: Option<&KernelTable>) -> Result<()> {
    if class.num_contexts() != env.num_contexts() || class.num_arms() != env.num_arms() {
        return Err(Error::InvalidConfig(format!(
            "class is defined on {}x{} cells, environment has {}x{}",
            class.num_contexts(),
            class.num_arms(),
            env.num_contexts(),
            env.num_arms()
        )));
    }
    if let Some(k) = kernel {
        if k.num_contexts() != env.num_contexts() || k.num_arms() != env.num_arms() {
            return Err(Error::InvalidConfig(
                "kernel shape does not match environment".into(),
            ));
        }
    }
    Ok(())
}

/// `b(p)` together with the projection attaining it.
fn evaluate(env: &Environment, class: &ModelClass, probs: &[f64]) -> (f64, Vec<f64>) {
    let k = env.num_arms();
    let q: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(c, p)| env.weight(c / k) * p)
        .collect();
    let f = class.project(env.means(), &q);
    let value = q
        .iter()
        .zip(&f)
        .zip(env.means())
        .map(|((q, f), t)| q * (f - t) * (f - t))
        .sum::<f64>();
    (value, f)
}

/// `sum_x w(x) max_a (f(x, a) - f*(x, a))^2`: an upper bound on `B` for
/// any model `f` in the class.
fn linear_upper_bound(env: &Environment, f: &[f64]) -> (f64, Vec<usize>) {
    let k = env.num_arms();
    let mut total = 0.0;
    let mut vertex = Vec::with_capacity(env.num_contexts());
    for x in 0..env.num_contexts() {
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..k {
            let e = f[x * k + a] - env.mean(x, a);
            if e * e > best.1 {
                best = (a, e * e);
            }
        }
        total += env.weight(x) * best.1;
        vertex.push(best.0);
    }
    (total, vertex)
}

/// Average squared misspecification of `class` under `kernel`.
pub fn misspec_of_kernel(
    env: &Environment,
    class: &ModelClass,
    kernel: &KernelTable,
) -> Result<f64> {
    check_shapes(env, class, Some(kernel))?;
    Ok(evaluate(env, class, kernel.as_slice()).0)
}

#[derive(Debug, Clone)]
pub struct MaxMisspecification {
    /// Best `b(p)` found; a true value at `kernel`.
    pub value: f64,
    /// Certified upper bound on the maximum over all kernels.
    pub upper: f64,
    pub kernel: KernelTable,
    pub iterations: usize,
}

/// Maximises `b(p)` over kernels by Frank-Wolfe ascent from the uniform
/// kernel with exact line search, stopping once the certified bracket
/// `upper - value` is at most `tolerance`.
pub fn max_misspecification(
    env: &Environment,
    class: &ModelClass,
    max_iterations: usize,
    tolerance: f64,
) -> Result<MaxMisspecification> {
    check_shapes(env, class, None)?;
    let (nx, k) = (env.num_contexts(), env.num_arms());
    let mut p = KernelTable::uniform(nx, k).as_slice().to_vec();
    let (mut value, mut f) = evaluate(env, class, &p);
    let mut best = (value, p.clone());
    let mut upper = f64::INFINITY;
    let mut iterations = 0;

    while iterations < max_iterations {
        let (bound, vertex) = linear_upper_bound(env, &f);
        upper = upper.min(bound);
        if upper - best.0 <= tolerance {
            break;
        }
        iterations += 1;
        let s = KernelTable::deterministic(&vertex, k);
        let mix = |eta: f64| -> Vec<f64> {
            p.iter()
                .zip(s.as_slice())
                .map(|(a, b)| (1.0 - eta) * a + eta * b)
                .collect()
        };
        // golden-section search on the concave restriction to the segment
        let phi = |eta: f64| evaluate(env, class, &mix(eta)).0;
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut m1 = hi - ratio * (hi - lo);
        let mut m2 = lo + ratio * (hi - lo);
        let (mut v1, mut v2) = (phi(m1), phi(m2));
        for _ in 0..48 {
            if v1 < v2 {
                lo = m1;
                m1 = m2;
                v1 = v2;
                m2 = lo + ratio * (hi - lo);
                v2 = phi(m2);
            } else {
                hi = m2;
                m2 = m1;
                v2 = v1;
                m1 = hi - ratio * (hi - lo);
                v1 = phi(m1);
            }
        }
        let mut eta = 0.5 * (lo + hi);
        let mut next = phi(eta);
        let at_vertex = phi(1.0);
        if at_vertex > next {
            eta = 1.0;
            next = at_vertex;
        }
        if next <= value {
            // no ascent along this direction; the bracket is as good as it gets
            break;
        }
        p = mix(eta);
        let evaluated = evaluate(env, class, &p);
        value = evaluated.0;
        f = evaluated.1;
        if value > best.0 {
            best = (value, p.clone());
        }
    }
    let (bound, _) = linear_upper_bound(env, &f);
    upper = upper.min(bound).max(best.0);

    Ok(MaxMisspecification {
        value: best.0,
        upper,
        kernel: KernelTable::from_rows(best.1, k)?,
        iterations,
    })
}

/// Exact `min_p b(p)` by enumerating deterministic policies, or `None` when
/// there are more than `cap` of them.
pub fn min_misspecification(
    env: &Environment,
    class: &ModelClass,
    cap: u64,
) -> Result<Option<f64>> {
    check_shapes(env, class, None)?;
    let (nx, k) = (env.num_contexts(), env.num_arms());
    let count = (k as u64).checked_pow(nx as u32);
    if count.is_none_or(|c| c > cap) {
        return Ok(None);
    }
    let mut policy = vec![0usize; nx];
    let mut best = f64::INFINITY;
    loop {
        let (v, _) = evaluate(
            env,
            class,
            KernelTable::deterministic(&policy, k).as_slice(),
        );
        best = best.min(v);
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == nx {
                return Ok(Some(best));
            }
            policy[pos] += 1;
            if policy[pos] < k {
                break;
            }
            policy[pos] = 0;
            pos += 1;
        }
    }
}

/// Last epoch at which a class's estimation rate still dominates the
/// misspecification of every class up to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SafeEpoch {
    Finite(u32),
    Unbounded,
}

impl Serialize for SafeEpoch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SafeEpoch::Finite(m) => s.serialize_u32(*m),
            SafeEpoch::Unbounded => s.serialize_str("inf"),
        }
    }
}

/// `max { m : rate(tau_m - tau_{m-1}, delta / (4 M m^2)) >= c0 * min_b }`.
///
/// Returns [`SafeEpoch::Unbounded`] when `min_b` is zero and `Finite(0)` when
/// no epoch qualifies. `rate(n, zeta)` is the class's estimation rate.
pub fn safe_epoch(
    rate: impl Fn(u64, f64) -> f64,
    c0: f64,
    min_b: f64,
    delta: f64,
    num_classes: usize,
    tau1: u64,
) -> SafeEpoch {
    if min_b <= REALIZABLE_TOLERANCE {
        return SafeEpoch::Unbounded;
    }
    let mut last = 0;
    for m in 1..=MAX_EPOCHS {
        let Some(n) = epoch_length(tau1, m) else {
            break;
        };
        if rate(n, confidence_budget(delta, num_classes, m)) >= c0 * min_b {
            last = m;
        }
    }
    SafeEpoch::Finite(last)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassDiagnostics {
    pub index: usize,
    pub d: usize,
    /// Largest misspecification found over kernels (`B_i`, attained).
    pub b_max: f64,
    /// Certified upper bound on `B_i`.
    pub b_max_upper: f64,
    pub b_uniform: f64,
    /// Lower bound on `min_p b_i(p)`; exact when `kappa_exact`.
    pub kappa_lower: f64,
    pub kappa_exact: bool,
    pub m_star: SafeEpoch,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub classes: Vec<ClassDiagnostics>,
}

impl DiagnosticsReport {
    /// Diagnoses each class of a sequence against `env`.
    pub fn compute(
        env: &Environment,
        classes: &[ModelClass],
        rate: &RateFunction,
        c0: f64,
        delta: f64,
        tau1: u64,
    ) -> Result<Self> {
        let uniform = KernelTable::uniform(env.num_contexts(), env.num_arms());
        let mut out = Vec::with_capacity(classes.len());
        let mut running_min = f64::INFINITY;
        for (i, class) in classes.iter().enumerate() {
            let b_uniform = misspec_of_kernel(env, class, &uniform)?;
            let max = max_misspecification(env, class, 500, 1e-10)?;
            let kappa = min_misspecification(env, class, DEFAULT_POLICY_CAP)?;
            running_min = running_min.min(max.value);
            let d = class.dim();
            let m_star = safe_epoch(
                |n, z| rate.eval(d, n, z),
                c0,
                running_min,
                delta,
                classes.len(),
                tau1,
            );
            out.push(ClassDiagnostics {
                index: i,
                d,
                b_max: max.value,
                b_max_upper: max.upper,
                b_uniform,
                kappa_lower: kappa.unwrap_or(0.0),
                kappa_exact: kappa.is_some(),
                m_star,
            });
        }
        Ok(Self { classes: out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Noise;
    use crate::igw::IgwKernel;
    use crate::models::{FittedModel, Partition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn env(weights: Vec<f64>, k: usize, table: Vec<Vec<f64>>) -> Environment {
        Environment::new(weights, k, table, Noise::Bernoulli, 0).unwrap()
    }

    #[test]
    fn constant_class_against_zero_one() {
        let e = env(vec![1.0], 2, vec![vec![0.0, 1.0]]);
        let c = ModelClass::tabular(&Partition::Constant, 1, 2).unwrap();
        let u = KernelTable::uniform(1, 2);
        assert!((misspec_of_kernel(&e, &c, &u).unwrap() - 0.25).abs() < 1e-15);
        // b(p) = p0 * p1 is maximised by the uniform kernel...
        let max = max_misspecification(&e, &c, 100, 1e-12).unwrap();
        assert!((max.value - 0.25).abs() < 1e-12 && (max.upper - 0.25).abs() < 1e-12);
        // ...and vanishes at point masses
        assert_eq!(min_misspecification(&e, &c, 100).unwrap(), Some(0.0));
    }

    #[test]
    fn realizable_class_is_zero_everywhere() {
        let e = env(vec![0.5, 0.5], 2, vec![vec![0.2, 0.7], vec![0.2, 0.7]]);
        let c = ModelClass::tabular(&Partition::PerArm, 2, 2).unwrap();
        let k = KernelTable::from_rows(vec![0.9, 0.1, 0.3, 0.7], 2).unwrap();
        assert!(misspec_of_kernel(&e, &c, &k).unwrap() < REALIZABLE_TOLERANCE);
        let max = max_misspecification(&e, &c, 100, 1e-12).unwrap();
        assert!(max.upper < REALIZABLE_TOLERANCE);
    }

    #[test]
    fn context_only_truth_is_clearly_misspecified() {
        // f* depends on the context only; the constant class misses by
        // w0 w1 (c0 - c1)^2 under every kernel
        let e = env(vec![0.5, 0.5], 3, vec![vec![0.0; 3], vec![1.0; 3]]);
        let c = ModelClass::tabular(&Partition::Constant, 2, 3).unwrap();
        let max = max_misspecification(&e, &c, 100, 1e-12).unwrap();
        let min = min_misspecification(&e, &c, 1000).unwrap().unwrap();
        assert!((max.value - 0.25).abs() < 1e-12);
        assert!((max.upper - 0.25).abs() < 1e-12);
        assert!((min - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bracket_contains_random_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let (nx, k) = (3, 3);
            let table: Vec<Vec<f64>> = (0..nx)
                .map(|_| (0..k).map(|_| rng.random()).collect())
                .collect();
            let e = env(vec![0.2, 0.3, 0.5], k, table);
            let part = if trial % 2 == 0 {
                Partition::PerArm
            } else {
                Partition::Constant
            };
            let c = ModelClass::tabular(&part, nx, k).unwrap();
            let max = max_misspecification(&e, &c, 400, 1e-9).unwrap();
            assert!(max.value <= max.upper + 1e-15);
            let min = min_misspecification(&e, &c, 1000).unwrap().unwrap();
            for _ in 0..50 {
                let mut probs = Vec::new();
                for _ in 0..nx {
                    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let s: f64 = raw.iter().sum();
                    probs.extend(raw.iter().map(|v| v / s));
                }
                let kt = KernelTable::from_rows(probs, k).unwrap();
                let b = misspec_of_kernel(&e, &c, &kt).unwrap();
                assert!(b <= max.upper + 1e-12, "b = {b}, upper = {}", max.upper);
                assert!(b >= min - 1e-12);
                assert!(b <= 1.0);
            }
        }
    }

    #[test]
    fn igw_kernels_respect_uniform_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let (nx, k) = (4, 3);
            let table: Vec<Vec<f64>> = (0..nx)
                .map(|_| (0..k).map(|_| rng.random()).collect())
                .collect();
            let e = env(vec![0.25; 4], k, table);
            let gamma = 10f64.powf(rng.random_range(-1.0..4.0));
            let model = FittedModel::from_table((0..nx * k).map(|_| rng.random()).collect(), k);
            let kernel = IgwKernel::new(model, gamma).unwrap().table().unwrap();
            for part in [
                Partition::Constant,
                Partition::PerArm,
                Partition::PerContext,
            ] {
                let c = ModelClass::tabular(&part, nx, k).unwrap();
                let bu = misspec_of_kernel(&e, &c, &KernelTable::uniform(nx, k)).unwrap();
                let bp = misspec_of_kernel(&e, &c, &kernel).unwrap();
                assert!(bp >= k as f64 / (k as f64 + gamma) * bu - 1e-15);
            }
        }
    }

    #[test]
    fn safe_epoch_cases() {
        let mean = |n: u64, z: f64| RateFunction::mean_rate(n, z);
        assert_eq!(safe_epoch(mean, 1.0, 0.0, 0.5, 1, 2), SafeEpoch::Unbounded);

        // direct scan with tau = (2, 4, 8, ...): epoch lengths 2, 2, 4, 8, ...
        let oracle = (1..=40u32)
            .filter(|&m| {
                let n = if m == 1 { 2.0 } else { 2f64.powi(m as i32 - 1) };
                (4.0 * (m as f64).powi(2) / 0.5).ln() / n >= 0.5
            })
            .max()
            .unwrap_or(0);
        assert_eq!(oracle, 4);
        assert_eq!(
            safe_epoch(mean, 1.0, 0.5, 0.5, 1, 2),
            SafeEpoch::Finite(oracle)
        );

        let mut last = SafeEpoch::Unbounded;
        for b in [1e-4, 2e-4, 4e-4, 8e-4, 1.6e-3, 0.1, 0.2] {
            let m = safe_epoch(mean, 1.0, b, 0.1, 3, 4);
            assert!(m <= last);
            last = m;
        }
    }

    #[test]
    fn report_is_consistent() {
        let e = env(
            vec![0.25; 4],
            2,
            vec![
                vec![0.1, 0.8],
                vec![0.1, 0.8],
                vec![0.6, 0.3],
                vec![0.6, 0.3],
            ],
        );
        let classes = [
            ModelClass::tabular(&Partition::Constant, 4, 2).unwrap(),
            ModelClass::tabular(&Partition::PerArm, 4, 2).unwrap(),
            ModelClass::tabular(&Partition::ContextGroups(vec![0, 0, 1, 1]), 4, 2).unwrap(),
        ];
        let r = DiagnosticsReport::compute(&e, &classes, &RateFunction::default(), 1.0, 0.1, 4)
            .unwrap();
        for c in &r.classes {
            assert!(c.b_uniform <= c.b_max + 1e-15);
            assert!(c.b_max <= c.b_max_upper + 1e-15);
            assert!(c.kappa_lower <= c.b_uniform + 1e-15);
            assert!(c.kappa_exact);
        }
        assert_eq!(r.classes[2].m_star, SafeEpoch::Unbounded);
        assert!(matches!(r.classes[0].m_star, SafeEpoch::Finite(_)));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"m_star\":\"inf\""));
    }
}
