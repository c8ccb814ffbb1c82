//! Python bindings: ground-truth data, generated models, training, link
//! analysis and Monte Carlo evaluation.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fsnn_core::dynsys::{integrate, integrate_dense, IntegrationConfig, StateVector, Trajectory};
use fsnn_core::evaluation::{self, sobol::SobolSampler, InitSampling};
use fsnn_core::ground_truth::{generate_training_data, GroundTruth, GroundTruthParams};
use fsnn_core::io::{self, RunConfig};
use fsnn_core::ltm::{classify_edges, link_profile, EdgeReport, DEFAULT_EDGE_THRESHOLD};
use fsnn_core::model::{GeneratedModel, ModelShape, ParameterVector};
use fsnn_core::training::{self, TrainingConfig};
use fsnn_core::FsnnError;

fn err(e: FsnnError) -> PyErr {
    match e {
        FsnnError::Integration { .. } | FsnnError::Evaluation(_) => PyArithmeticError::new_err(e.to_string()),
        FsnnError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Rows = (Vec<f64>, Vec<Vec<f64>>);

fn rows(t: &Trajectory) -> Rows {
    (t.times(), t.samples.iter().map(|s| s.0.clone()).collect())
}

fn integration(horizon: f64, dt: f64, dense: bool) -> IntegrationConfig {
    IntegrationConfig {
        dt,
        horizon,
        include_initial: dense,
        ..IntegrationConfig::default()
    }
}

fn edges(report: &EdgeReport) -> Vec<(String, String, i8)> {
    report
        .present_edges()
        .into_iter()
        .map(|(s, t, p)| (report.state_names[s].clone(), report.state_names[t].clone(), p))
        .collect()
}

/// Simulate `sys` and return `(times, rows)`.
fn simulate_system<S: fsnn_core::dynsys::System>(sys: &S, init: Vec<f64>, names: &[String], horizon: f64, dt: f64, dense: bool) -> PyResult<Rows> {
    let cfg = integration(horizon, dt, dense);
    let init = StateVector(init);
    let traj = if dense {
        integrate_dense(sys, &init, &cfg, names)
    } else {
        integrate(sys, &init, &cfg, names)
    };
    Ok(rows(&traj.map_err(err)?))
}

/// Equilibrium level shared by all three stocks.
#[pyfunction]
fn equilibrium() -> f64 {
    GroundTruth::default().equilibrium()[0]
}

/// Ground-truth trajectory as `(times, rows)`; dense output includes t = 0.
#[pyfunction]
#[pyo3(signature = (init, horizon = 100.0, dt = 0.25, dense = false))]
fn ground_truth_trajectory(init: Vec<f64>, horizon: f64, dt: f64, dense: bool) -> PyResult<Rows> {
    simulate_system(&GroundTruth::default(), init, &GroundTruth::state_names(), horizon, dt, dense)
}

/// Present ground-truth edges along the trajectory from `init` as `(source, target, polarity)`.
#[pyfunction]
#[pyo3(signature = (init, threshold = DEFAULT_EDGE_THRESHOLD))]
fn ground_truth_edges(init: Vec<f64>, threshold: f64) -> PyResult<Vec<(String, String, i8)>> {
    let gt = GroundTruth::default();
    let dense = integrate_dense(&gt, &StateVector(init), &IntegrationConfig::default(), &GroundTruth::state_names()).map_err(err)?;
    let profile = link_profile(&gt, &dense).map_err(err)?;
    Ok(edges(&classify_edges(&profile, threshold).map_err(err)?))
}

/// First `n` Sobol points in `dim` dimensions, origin skipped.
#[pyfunction]
fn sobol(dim: usize, n: usize) -> PyResult<Vec<Vec<f64>>> {
    let s = SobolSampler::new(dim).map_err(err)?;
    Ok(s.take(n).collect())
}

/// Sobol initializations in `[0, cube_max]^3` with sums in `[lo, hi]`.
#[pyfunction]
#[pyo3(signature = (n, lo = 30.0, hi = 150.0, cube_max = 150.0))]
fn sample_initializations(n: usize, lo: f64, hi: f64, cube_max: f64) -> PyResult<Vec<Vec<f64>>> {
    let s = InitSampling {
        cube_max,
        sum_range: (lo, hi),
    };
    Ok(evaluation::sample_initializations(n, 3, &s).map_err(err)?.into_iter().map(|v| v.0).collect())
}

/// A neural-derivative ODE model.
#[pyclass(name = "Model", module = "fsnn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: GeneratedModel,
}

#[pymethods]
impl PyModel {
    /// Zero-parameter model over the three ground-truth states.
    #[staticmethod]
    #[pyo3(signature = (hidden = vec![8, 6, 4]))]
    fn zeros(hidden: Vec<usize>) -> PyResult<Self> {
        let cfg = RunConfig {
            hidden_layers: hidden,
            ..RunConfig::default()
        };
        let shape = cfg.model_shape(&GroundTruth::state_names()).map_err(err)?;
        Ok(PyModel {
            inner: GeneratedModel::zeros(shape),
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: io::load_model(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: io::model_from_str(text).map_err(err)?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::save_model(&path, &self.inner).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        io::model_to_string(&self.inner).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.shape.param_count()
    }

    #[getter]
    fn state_names(&self) -> Vec<String> {
        self.inner.shape.state_names.clone()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.0.clone()
    }

    #[setter]
    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner = GeneratedModel::new(self.inner.shape.clone(), ParameterVector(params)).map_err(err)?;
        Ok(())
    }

    fn derivs(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        if state.len() != self.inner.shape.n_states() {
            return Err(PyValueError::new_err("state length does not match the model"));
        }
        Ok(self.inner.derivs(&StateVector(state)).map_err(err)?.0)
    }

    #[pyo3(signature = (init, horizon = 100.0, dt = 0.25, dense = false))]
    fn simulate(&self, init: Vec<f64>, horizon: f64, dt: f64, dense: bool) -> PyResult<Rows> {
        simulate_system(&self.inner, init, &self.inner.shape.state_names, horizon, dt, dense)
    }

    /// Long-format link scores `(time, source, target, raw, normalized)` from `init`.
    fn link_scores(&self, init: Vec<f64>) -> PyResult<Vec<(f64, String, String, f64, f64)>> {
        let dense = integrate_dense(&self.inner, &StateVector(init), &IntegrationConfig::default(), &self.inner.shape.state_names).map_err(err)?;
        let profile = link_profile(&self.inner, &dense).map_err(err)?;
        Ok(profile
            .samples()
            .map(|s| (s.time, s.source, s.target, s.raw, s.normalized))
            .collect())
    }

    #[pyo3(signature = (init, threshold = DEFAULT_EDGE_THRESHOLD))]
    fn edges(&self, init: Vec<f64>, threshold: f64) -> PyResult<Vec<(String, String, i8)>> {
        let dense = integrate_dense(&self.inner, &StateVector(init), &IntegrationConfig::default(), &self.inner.shape.state_names).map_err(err)?;
        let profile = link_profile(&self.inner, &dense).map_err(err)?;
        Ok(edges(&classify_edges(&profile, threshold).map_err(err)?))
    }

    /// Monte Carlo prediction error against the ground truth.
    /// Returns `{"sums": [...], "max_abs_errors": [...], "failed": n}`.
    #[pyo3(signature = (n = 100, lo = 30.0, hi = 150.0))]
    fn monte_carlo<'py>(&self, py: Python<'py>, n: usize, lo: f64, hi: f64) -> PyResult<Bound<'py, PyDict>> {
        let inits = sample_initializations(n, lo, hi, 150.0)?;
        let inits: Vec<StateVector> = inits.into_iter().map(StateVector).collect();
        let report = evaluation::monte_carlo(&self.inner, &GroundTruth::default(), &inits, &IntegrationConfig::default(), &self.inner.shape.state_names)
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("sums", report.runs.iter().map(|r| r.initial_sum()).collect::<Vec<_>>())?;
        d.set_item("max_abs_errors", report.max_abs_errors())?;
        d.set_item("failed", report.failed_runs())?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Model(states={}, params={})", self.inner.shape.n_states(), self.param_count())
    }
}

/// Train on the configured ground-truth datasets.
///
/// `config` is an optional flat TOML run configuration. Returns the model and
/// a summary dict.
#[pyfunction]
#[pyo3(signature = (config = None, budget = None, seed = None))]
fn train<'py>(py: Python<'py>, config: Option<&str>, budget: Option<usize>, seed: Option<u64>) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let mut cfg = match config {
        Some(text) => RunConfig::from_toml(text).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(b) = budget {
        cfg.budget = b;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let tcfg: TrainingConfig = cfg.training();
    let data = generate_training_data(&cfg.initial_states(), &cfg.ground_truth(), &cfg.integration(false)).map_err(err)?;
    let shape: ModelShape = cfg.model_shape(&GroundTruth::state_names()).map_err(err)?;
    let result = py.detach(|| training::train(&tcfg, &data, &shape, &[])).map_err(err)?;
    let summary = PyDict::new(py);
    summary.set_item("payoff", result.payoff)?;
    summary.set_item("per_state_rmse", result.per_state_rmse.clone())?;
    summary.set_item("evaluations_used", result.evaluations_used)?;
    summary.set_item("converged", result.converged)?;
    let model = GeneratedModel::from_training(shape, &result).map_err(err)?;
    Ok((PyModel { inner: model }, summary))
}

/// Ground-truth training datasets as a list of `(initialization, times, rows)`.
#[pyfunction]
fn training_data() -> PyResult<Vec<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)>> {
    let cfg = RunConfig::default();
    let data = generate_training_data(&cfg.initial_states(), &GroundTruthParams::default(), &cfg.integration(false)).map_err(err)?;
    Ok(data
        .iter()
        .map(|d| {
            let (t, r) = rows(&d.trajectory);
            (d.initialization.0.clone(), t, r)
        })
        .collect())
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth_edges, m)?)?;
    m.add_function(wrap_pyfunction!(training_data, m)?)?;
    m.add_function(wrap_pyfunction!(sobol, m)?)?;
    m.add_function(wrap_pyfunction!(sample_initializations, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}

#[pymodule]
fn fsnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
