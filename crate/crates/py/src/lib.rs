//! Python bindings: service accounting helpers, traces, and policy runs.
//!
//! Reports cross the boundary as plain dicts (decoded from the JSON report).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use fairserve_core::experiment::{self, ExperimentConfig};
use fairserve_core::sched::{self, TokenCounts};
use fairserve_core::workload::{self, AppStageProfile, TokenWeights, Trace};
use fairserve_core::metrics::RunReport;
use fairserve_core::{Error, TraceError};

fn py_err(e: impl Into<Error>) -> PyErr {
    let e = e.into();
    let msg = match std::error::Error::source(&e) {
        Some(src) => format!("{e}: {src}"),
        None => e.to_string(),
    };
    match e {
        Error::Io { .. } | Error::Trace(TraceError::Io { .. }) => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn weights(alpha: f64, beta: f64, gamma: f64) -> PyResult<TokenWeights> {
    TokenWeights::new(alpha, beta, gamma).map_err(py_err)
}

/// Expected weighted token mass of an app stage.
#[pyfunction]
#[pyo3(signature = (input, system, output, alpha=1.0, beta=2.0, gamma=1.0))]
fn app_stage_weight(input: f64, system: f64, output: f64, alpha: f64, beta: f64, gamma: f64) -> PyResult<f64> {
    let profile = AppStageProfile {
        expected_input_tokens: input,
        expected_system_tokens: system,
        expected_output_tokens: output,
    };
    sched::app_stage_weight(&profile, &weights(alpha, beta, gamma)?).map_err(py_err)
}

/// Service charged for a finished call against a stage weight.
#[pyfunction]
#[pyo3(signature = (input, system, output, weight, alpha=1.0, beta=2.0, gamma=1.0, priority=1.0))]
#[allow(clippy::too_many_arguments)]
fn service_increment(
    input: f64,
    system: f64,
    output: f64,
    weight: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    priority: f64,
) -> PyResult<f64> {
    if !(weight.is_finite() && weight > 0.0) {
        return Err(PyValueError::new_err("weight must be positive"));
    }
    let tokens = TokenCounts { input, system, output };
    Ok(sched::service_increment(tokens, weight, &weights(alpha, beta, gamma)?, priority))
}

#[pyfunction]
fn jain_index(values: Vec<f64>) -> PyResult<f64> {
    fairserve_core::metrics::jain_index(&values).map_err(py_err)
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    experiment::PRESETS.to_vec()
}

fn load_config(preset: Option<&str>, config: Option<PathBuf>, seed: Option<u64>) -> PyResult<ExperimentConfig> {
    let mut cfg = match (preset, config) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("pass either preset or config, not both")),
        (Some(name), None) => ExperimentConfig::preset(name).map_err(py_err)?,
        (None, Some(path)) => ExperimentConfig::load(path).map_err(py_err)?,
        (None, None) => return Err(PyValueError::new_err("a preset or config is required")),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// A workload trace.
#[pyclass(name = "Trace", frozen)]
struct PyTrace {
    inner: Trace,
}

#[pymethods]
impl PyTrace {
    /// Generates the workload of a preset or TOML experiment config.
    #[staticmethod]
    #[pyo3(signature = (preset=None, config=None, seed=None))]
    fn generate(preset: Option<&str>, config: Option<PathBuf>, seed: Option<u64>) -> PyResult<Self> {
        let cfg = load_config(preset, config, seed)?;
        Ok(Self {
            inner: cfg.generate().map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: workload::read_trace(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        workload::write_trace(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.users.len()
    }

    #[getter]
    fn num_interactions(&self) -> usize {
        self.inner.interactions.len()
    }

    #[getter]
    fn num_calls(&self) -> usize {
        self.inner.total_calls()
    }

    /// Interaction counts keyed by graph-size bucket label.
    fn bucket_histogram(&self) -> Vec<(&'static str, u64)> {
        workload::GRAPH_SIZE_BUCKETS
            .iter()
            .zip(workload::bucket_histogram(&self.inner))
            .map(|((label, _, _), n)| (*label, n))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.interactions.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(seed={}, users={}, interactions={})",
            self.inner.seed,
            self.inner.users.len(),
            self.inner.interactions.len()
        )
    }
}

fn to_py<'py>(py: Python<'py>, value: &[RunReport]) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Simulates each named policy on `trace` and returns their reports.
///
/// Engine settings and policy parameters come from the preset or config when
/// given, otherwise from the defaults.
#[pyfunction]
#[pyo3(signature = (trace, policies, preset=None, config=None))]
fn compare<'py>(
    py: Python<'py>,
    trace: &PyTrace,
    policies: Vec<String>,
    preset: Option<&str>,
    config: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = match (preset, config) {
        (None, None) => None,
        (p, c) => Some(load_config(p, c, None)?),
    };
    let mut chosen = Vec::with_capacity(policies.len());
    for name in &policies {
        chosen.push(match &cfg {
            Some(c) => c.policy(name),
            None => sched::PolicyConfig::default_for(name),
        }
        .map_err(py_err)?);
    }
    let (engine, opts) = match &cfg {
        Some(c) => (c.engine, c.report_options()),
        None => Default::default(),
    };
    let runs = py
        .detach(|| experiment::compare(&trace.inner, &chosen, engine, &opts))
        .map_err(py_err)?;
    let reports: Vec<_> = runs.into_iter().map(|r| r.report).collect();
    to_py(py, &reports)
}

/// Simulates one policy; shorthand for `compare(trace, [policy])[0]`.
#[pyfunction]
#[pyo3(signature = (trace, policy, preset=None, config=None))]
fn run<'py>(
    py: Python<'py>,
    trace: &PyTrace,
    policy: String,
    preset: Option<&str>,
    config: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    compare(py, trace, vec![policy], preset, config)?.get_item(0)
}

#[pymodule]
#[pyo3(name = "fairserve")]
fn fairserve_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(app_stage_weight, m)?)?;
    m.add_function(wrap_pyfunction!(service_increment, m)?)?;
    m.add_function(wrap_pyfunction!(jain_index, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyTrace>()?;
    m.add("POLICIES", sched::POLICY_NAMES.to_vec())?;
    Ok(())
}
