//! Python bindings for `modsel_core`.
//!
//! Data sets cross the boundary as lists of `(context, action, reward)`
//! tuples; structured results come back as dicts.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use modsel_core::bandit::RunLog;
use modsel_core::env::{
    max_misspecification, min_misspecification, misspec_of_kernel, stream_rng, DiagnosticsReport,
};
use modsel_core::harness::{self, RegretTrace, Scenario};
use modsel_core::igw::igw_probs;
use modsel_core::mistest::{run_test, MisTestConfig};
use modsel_core::models::{est_oracle, ClassSpec};
use modsel_core::{
    Environment, FittedModel, IgwKernel, KernelTable, ModelClass, Noise, Partition, RateFunction,
    Sample,
};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn samples(data: Vec<(usize, usize, f64)>) -> Vec<Sample> {
    data.into_iter()
        .map(|(x, a, r)| Sample::new(x, a, r))
        .collect()
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A finite contextual bandit environment with known mean rewards.
#[pyclass(name = "Environment", module = "modsel_igw")]
struct PyEnvironment {
    inner: Environment,
}

#[pymethods]
impl PyEnvironment {
    #[new]
    #[pyo3(signature = (context_weights, true_model, noise = "bernoulli", sigma = 0.1, seed = 0))]
    fn new(
        context_weights: Vec<f64>,
        true_model: Vec<Vec<f64>>,
        noise: &str,
        sigma: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let noise = match noise {
            "bernoulli" => Noise::Bernoulli,
            "gaussian" => Noise::Gaussian { sigma },
            other => return Err(PyValueError::new_err(format!("unknown noise `{other}`"))),
        };
        let k = true_model.first().map_or(0, Vec::len);
        Environment::new(context_weights, k, true_model, noise, seed)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[getter]
    fn num_contexts(&self) -> usize {
        self.inner.num_contexts()
    }

    #[getter]
    fn num_arms(&self) -> usize {
        self.inner.num_arms()
    }

    fn mean(&self, context: usize, action: usize) -> f64 {
        self.inner.mean(context, action)
    }

    fn optimal_arm(&self, context: usize) -> usize {
        self.inner.optimal_arm(context)
    }

    fn instant_regret(&self, context: usize, action: usize) -> f64 {
        self.inner.instant_regret(context, action)
    }

    /// Draws `n` samples with actions chosen uniformly at random.
    fn sample_uniform(&self, n: usize, seed: u64) -> Vec<(usize, usize, f64)> {
        let kernel = KernelTable::uniform(self.inner.num_contexts(), self.inner.num_arms());
        let mut env_rng = stream_rng(seed, 0);
        let mut act_rng = stream_rng(seed, 1);
        (0..n)
            .map(|_| {
                let (x, r) = self.inner.sample_round(&mut env_rng);
                let a = kernel.sample(x, &mut act_rng);
                (x, a, r[a])
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Environment(num_contexts={}, num_arms={})",
            self.inner.num_contexts(),
            self.inner.num_arms()
        )
    }
}

/// A model class over the cells of an environment.
#[pyclass(name = "ModelClass", module = "modsel_igw")]
struct PyModelClass {
    inner: ModelClass,
}

#[pymethods]
impl PyModelClass {
    /// `partition` is `"constant"`, `"per_arm"`, `"per_context"`, `"full"`,
    /// or a list of context group labels.
    #[staticmethod]
    fn tabular(
        partition: &Bound<'_, PyAny>,
        num_contexts: usize,
        num_arms: usize,
    ) -> PyResult<Self> {
        let partition = if let Ok(name) = partition.extract::<String>() {
            serde_json::from_value::<Partition>(serde_json::Value::String(name)).map_err(err)?
        } else {
            Partition::ContextGroups(partition.extract()?)
        };
        ModelClass::tabular(&partition, num_contexts, num_arms)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Builds a class from its scenario-file JSON form.
    #[staticmethod]
    fn from_json(text: &str, num_contexts: usize, num_arms: usize) -> PyResult<Self> {
        let spec: ClassSpec = serde_json::from_str(text).map_err(err)?;
        ModelClass::from_spec(&spec, num_contexts, num_arms)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Exact misspecification of this class under the uniform kernel.
    fn misspecification_uniform(&self, env: &PyEnvironment) -> PyResult<f64> {
        let u = KernelTable::uniform(env.inner.num_contexts(), env.inner.num_arms());
        misspec_of_kernel(&env.inner, &self.inner, &u).map_err(err)
    }

    /// Largest misspecification over kernels and its certified upper bound.
    fn max_misspecification(&self, env: &PyEnvironment) -> PyResult<(f64, f64)> {
        let m = max_misspecification(&env.inner, &self.inner, 500, 1e-10).map_err(err)?;
        Ok((m.value, m.upper))
    }

    /// Smallest misspecification over kernels, or `None` when the policy
    /// space is too large to enumerate.
    fn min_misspecification(&self, env: &PyEnvironment) -> PyResult<Option<f64>> {
        min_misspecification(&env.inner, &self.inner, 1 << 20).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("ModelClass(dim={})", self.inner.dim())
    }
}

fn class_list(classes: &[PyRef<'_, PyModelClass>]) -> Vec<ModelClass> {
    classes.iter().map(|c| c.inner.clone()).collect()
}

/// IGW action probabilities for one context's predictions.
#[pyfunction]
fn igw_kernel(predictions: Vec<f64>, gamma: f64) -> PyResult<Vec<f64>> {
    if gamma.is_nan() || gamma <= 0.0 || predictions.is_empty() {
        return Err(PyValueError::new_err(
            "need gamma > 0 and at least one prediction",
        ));
    }
    let mut out = vec![0.0; predictions.len()];
    igw_probs(&predictions, gamma, &mut out);
    Ok(out)
}

/// Expected inverse weight `V(p, pi)` and its bound `K + gamma * gap` for a
/// kernel built from a prediction table.
#[pyfunction]
fn inverse_weight(
    env: &PyEnvironment,
    predictions: Vec<f64>,
    gamma: f64,
    policy: Vec<usize>,
) -> PyResult<(f64, f64)> {
    let model = FittedModel::from_table(predictions, env.inner.num_arms());
    let kernel = IgwKernel::new(model, gamma).map_err(err)?;
    if policy.len() != env.inner.num_contexts() {
        return Err(PyValueError::new_err("policy needs one arm per context"));
    }
    Ok((
        kernel.expected_inverse_weight(&env.inner, &policy),
        kernel.inverse_weight_bound(&env.inner, &policy),
    ))
}

/// Exploration parameter for the class of dimension `d` after epoch `m`.
#[pyfunction]
#[pyo3(signature = (d, num_arms, m, delta, num_classes, tau1, c1 = 1.0))]
fn gamma_for(
    d: usize,
    num_arms: usize,
    m: u32,
    delta: f64,
    num_classes: usize,
    tau1: u64,
    c1: f64,
) -> PyResult<f64> {
    let rate = RateFunction::new(c1).map_err(err)?;
    Ok(modsel_core::gamma_for(
        &rate,
        d,
        num_arms,
        m,
        delta,
        num_classes,
        tau1,
    ))
}

/// Runs the estimation oracle; returns `(selected, table, validation_losses)`.
#[pyfunction]
#[pyo3(signature = (classes, data, split_ratio = 0.5))]
fn estimate(
    classes: Vec<PyRef<'_, PyModelClass>>,
    data: Vec<(usize, usize, f64)>,
    split_ratio: f64,
) -> PyResult<(usize, Vec<f64>, Vec<f64>)> {
    let classes = class_list(&classes);
    let fit = est_oracle(&classes, classes.len(), &samples(data), split_ratio).map_err(err)?;
    Ok((
        fit.selected(),
        fit.model.table().to_vec(),
        fit.validation_losses,
    ))
}

/// Holdout misspecification test of classes `0..=class_index`.
#[pyfunction]
#[pyo3(signature = (classes, data, class_index, zeta, alpha_ho = 0.5, c1 = 1.0))]
fn misspecification_test<'py>(
    py: Python<'py>,
    classes: Vec<PyRef<'py, PyModelClass>>,
    data: Vec<(usize, usize, f64)>,
    class_index: usize,
    zeta: f64,
    alpha_ho: f64,
    c1: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let config =
        MisTestConfig::new(alpha_ho, zeta, RateFunction::new(c1).map_err(err)?).map_err(err)?;
    let verdict =
        run_test(&samples(data), class_index, &class_list(&classes), &config).map_err(err)?;
    to_py(py, &verdict)
}

/// Exact per-class diagnostics of an environment.
#[pyfunction]
#[pyo3(signature = (env, classes, c1 = 1.0, c0 = 1.0, delta = 0.1, tau1 = 2))]
fn diagnostics<'py>(
    py: Python<'py>,
    env: &PyEnvironment,
    classes: Vec<PyRef<'py, PyModelClass>>,
    c1: f64,
    c0: f64,
    delta: f64,
    tau1: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let rate = RateFunction::new(c1).map_err(err)?;
    let report =
        DiagnosticsReport::compute(&env.inner, &class_list(&classes), &rate, c0, delta, tau1)
            .map_err(err)?;
    to_py(py, &report)
}

/// Result of one seeded run.
#[pyclass(name = "RunResult", module = "modsel_igw")]
struct PyRunResult {
    log: RunLog,
    trace: RegretTrace,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn seed(&self) -> u64 {
        self.log.seed
    }

    /// `R_t` for `t = 0..=T`.
    #[getter]
    fn cumulative_regret(&self) -> Vec<f64> {
        self.trace.cumulative.clone()
    }

    /// `(epoch, i_m)` for every epoch started.
    #[getter]
    fn index_trajectory(&self) -> Vec<(u32, usize)> {
        self.trace.index_trajectory.clone()
    }

    fn epochs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.log.epochs)
    }

    fn rounds<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.log.rounds)
    }
}

/// Loads a scenario file, applying `key=value` overrides.
#[pyfunction]
#[pyo3(signature = (path, overrides = Vec::new()))]
fn load_scenario(path: PathBuf, overrides: Vec<String>) -> PyResult<String> {
    let s = Scenario::load(&path, &overrides).map_err(err)?;
    serde_json::to_string(&s).map_err(err)
}

/// Runs every seed of a scenario given as JSON text.
#[pyfunction]
fn run_scenario(py: Python<'_>, scenario_json: &str) -> PyResult<Vec<PyRunResult>> {
    let scenario = Scenario::from_json(scenario_json).map_err(err)?;
    let results = py.detach(|| harness::run_scenario(&scenario));
    results
        .into_iter()
        .map(|(_, r)| {
            let log = r.map_err(err)?;
            let trace = RegretTrace::from_log(&log).map_err(err)?;
            Ok(PyRunResult { log, trace })
        })
        .collect()
}

/// Runs a scenario into `out_dir` and writes the aggregate report there.
#[pyfunction]
fn run_and_report<'py>(
    py: Python<'py>,
    scenario_json: &str,
    out_dir: PathBuf,
) -> PyResult<Bound<'py, PyDict>> {
    let scenario = Scenario::from_json(scenario_json).map_err(err)?;
    let dir = harness::resolve_out_dir(&out_dir);
    let summary = py
        .detach(|| harness::run_to_dir(&scenario, &dir))
        .map_err(err)?;
    if let Some((seed, e)) = summary.failed.first() {
        return Err(PyValueError::new_err(format!("seed {seed}: {e}")));
    }
    let logs = harness::read_logs(&dir).map_err(err)?;
    let curve = harness::write_report(&dir, &logs, scenario.classes.len()).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("dir", dir.to_string_lossy().to_string())?;
    out.set_item("seeds", summary.written)?;
    out.set_item("curve", to_py(py, &curve)?)?;
    Ok(out)
}

#[pymodule]
fn modsel_igw(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyModelClass>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(igw_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_weight, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_for, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(misspecification_test, m)?)?;
    m.add_function(wrap_pyfunction!(diagnostics, m)?)?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_and_report, m)?)?;
    Ok(())
}
