//! Python module `rachsim`: configuration, experiment runs, the frame
//! simulator and the backlog estimators.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rachsim::control::formula_acb;
use rachsim::estimators::{mle_estimate, mom_closed_form, mom_full, BacklogEstimate, EstimateSource};
use rachsim::harness::{self, ExperimentConfig, ExperimentResult, RunOptions};
use rachsim::neural::write_checkpoint;
use rachsim::rng::RngStream;
use rachsim::sim::{self, ControlAction, Observation};
use rachsim::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidAction(_) | Error::InvalidArgument(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Experiment configuration; unknown JSON keys are rejected.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (scheme, optimizer, seed = 0, trials = 1, episodes = 10))]
    fn new(scheme: &str, optimizer: &str, seed: u64, trials: usize, episodes: usize) -> PyResult<Self> {
        let doc = serde_json::json!({
            "scheme": scheme,
            "optimizer": optimizer,
            "seed": seed,
            "trials": trials,
            "episodes": episodes,
        });
        let inner = ExperimentConfig::from_json(&doc.to_string()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::from_json(text).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::from_file(&path).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Raises `ValueError` naming the offending field.
    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme.as_str()
    }

    #[getter]
    fn optimizer(&self) -> &'static str {
        self.inner.optimizer.as_str()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.trials
    }

    #[setter]
    fn set_trials(&mut self, trials: usize) {
        self.inner.trials = trials;
    }

    #[getter]
    fn episodes(&self) -> usize {
        self.inner.episodes
    }

    #[setter]
    fn set_episodes(&mut self, episodes: usize) {
        self.inner.episodes = episodes;
    }

    #[getter]
    fn channels(&self) -> u32 {
        self.inner.channels
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.inner.label())
    }
}

/// Outcome of [`run`]: per-episode metrics, optional frame rows and the summary.
#[pyclass(name = "Result")]
struct PyResult_ {
    inner: ExperimentResult,
}

#[pymethods]
impl PyResult_ {
    /// Trial means and across-trial mean/std as a JSON string.
    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.summary).map_err(json_err)
    }

    /// Episode successes, trial by trial.
    fn successes(&self) -> Vec<Vec<u64>> {
        self.inner.trials.iter().map(|t| t.episodes.iter().map(|e| e.successes).collect()).collect()
    }

    /// One dict per episode, in trial order.
    fn episodes<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut out = Vec::new();
        for m in self.inner.trials.iter().flat_map(|t| &t.episodes) {
            let d = PyDict::new(py);
            d.set_item("trial", m.trial)?;
            d.set_item("episode", m.episode)?;
            d.set_item("successes", m.successes)?;
            d.set_item("access_success_prob", m.access_success_prob)?;
            d.set_item("mean_delay", m.mean_delay)?;
            d.set_item("transmissions", m.transmissions)?;
            d.set_item("drops", m.drops)?;
            d.set_item("pred_mae", m.pred_mae)?;
            out.push(d);
        }
        Ok(out)
    }

    fn frames_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        harness::write_frame_csv(&mut buf, &self.inner.config, &self.inner.trials).map_err(to_py)?;
        Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
    }

    fn episodes_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        harness::write_episode_csv(&mut buf, &self.inner.trials).map_err(to_py)?;
        Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
    }

    /// Writes the CSV, JSON, checkpoint and Q-table files into `out`.
    fn write(&self, out: PathBuf) -> PyResult<()> {
        harness::write_outputs(&out, &self.inner).map_err(to_py)
    }
}

/// Runs every trial of `config`; the GIL is released while it runs.
#[pyfunction]
#[pyo3(signature = (config, record_frames = true))]
fn run(py: Python<'_>, config: PyConfig, record_frames: bool) -> PyResult<PyResult_> {
    let inner = py.detach(|| harness::run_experiment(&config.inner, RunOptions { record_frames })).map_err(to_py)?;
    Ok(PyResult_ { inner })
}

/// Paired comparison of configs sharing scheme, traffic and seeds, as JSON.
#[pyfunction]
fn compare(py: Python<'_>, configs: Vec<PyConfig>) -> PyResult<String> {
    let cfgs: Vec<ExperimentConfig> = configs.into_iter().map(|c| c.inner).collect();
    let report = py.detach(|| harness::compare(&cfgs)).map_err(to_py)?;
    serde_json::to_string_pretty(&report).map_err(json_err)
}

/// First 1-based episode from which the trailing-window mean stays within
/// `tolerance` of the final-window mean; `None` when not converged.
#[pyfunction]
#[pyo3(signature = (curve, tolerance = 0.05, window = 5))]
fn convergence(curve: Vec<f64>, tolerance: f64, window: usize) -> PyResult<Option<usize>> {
    Ok(harness::convergence_report(&curve, tolerance, window).map_err(to_py)?.converged_at)
}

/// Trains the single-frame correction network; writes it to `path` and
/// returns its held-out summary as JSON.
#[pyfunction]
fn pretrain_corrector(py: Python<'_>, config: PyConfig, path: PathBuf) -> PyResult<String> {
    let result = py.detach(|| harness::pretrain_corrector(&config.inner)).map_err(to_py)?;
    write_checkpoint(&path, &result.corrector.to_records()).map_err(to_py)?;
    serde_json::to_string_pretty(&result.summary).map_err(json_err)
}

/// Framed-ALOHA contention with access barring, back-off and a
/// retransmission limit.
#[pyclass(name = "Simulator")]
struct PySimulator {
    inner: sim::Simulator,
}

#[pymethods]
impl PySimulator {
    #[new]
    #[pyo3(signature = (limit = 10, seed = 0))]
    fn new(limit: u32, seed: u64) -> Self {
        Self { inner: sim::Simulator::new(limit, RngStream::new(seed, 1)) }
    }

    /// Adds fresh devices to the backlog and returns its new size.
    fn admit(&mut self, arrivals: u64) -> u64 {
        self.inner.admit(arrivals)
    }

    /// Resolves one frame and returns its outcome.
    #[pyo3(signature = (p = 1.0, backoff = 0, channels = 54))]
    fn step<'py>(&mut self, py: Python<'py>, p: f64, backoff: u32, channels: u32) -> PyResult<Bound<'py, PyDict>> {
        let report = self.inner.resolve(&ControlAction::new(p, backoff, channels)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("frame", report.observation.frame)?;
        d.set_item("idle", report.observation.idle)?;
        d.set_item("success", report.observation.success)?;
        d.set_item("collision", report.observation.collision)?;
        d.set_item("true_backlog", report.true_backlog)?;
        d.set_item("drops", report.drops)?;
        d.set_item("transmissions", report.transmissions)?;
        Ok(d)
    }

    #[getter]
    fn backlog(&self) -> usize {
        self.inner.backlog().len()
    }

    #[getter]
    fn frame(&self) -> u64 {
        self.inner.frame()
    }
}

/// Expected (idle, success, collision) counts for `n` transmitters over `r` channels.
#[pyfunction]
fn expected_moments(n: f64, r: u32) -> (f64, f64, f64) {
    sim::expected_moments(n, r)
}

fn observation(idle: u32, success: u32, collision: u32, p: f64) -> Observation {
    Observation { frame: 0, idle, success, collision, action: ControlAction::new(p, 0, idle + success + collision) }
}

/// Backlog estimate from one frame's counts and the ACB factor in force.
/// `method` is one of `"MoM_idle"`, `"MoM_full"`, `"MLE"`.
#[pyfunction]
#[pyo3(signature = (idle, success, collision, p = 1.0, method = "MoM_full", search_max = 300))]
fn estimate(idle: u32, success: u32, collision: u32, p: f64, method: &str, search_max: u32) -> PyResult<f64> {
    let obs = observation(idle, success, collision, p);
    let est = match method {
        "MoM_idle" => mom_closed_form(&obs),
        "MoM_full" => mom_full(&obs, search_max.max(success)),
        "MLE" => mle_estimate(&obs, search_max),
        other => return Err(PyValueError::new_err(format!("unknown estimator `{other}`"))),
    };
    Ok(est.map_err(to_py)?.value)
}

/// ACB factor `min(1, r / max(estimate, 1))`.
#[pyfunction]
fn acb_factor(estimate: f64, r: u32) -> f64 {
    let est = BacklogEstimate::new(estimate, EstimateSource::Genie);
    formula_acb(&est, r, ControlAction::new(1.0, 0, r)).acb_factor
}

#[pymodule]
#[pyo3(name = "rachsim")]
fn rachsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyResult_>()?;
    m.add_class::<PySimulator>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain_corrector, m)?)?;
    m.add_function(wrap_pyfunction!(expected_moments, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(acb_factor, m)?)?;
    Ok(())
}
