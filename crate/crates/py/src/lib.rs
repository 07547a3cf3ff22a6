//! Python bindings: grid models, simulation, networks, training and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pikan_core::experiment::{run_dynamics, ExperimentConfig, NetworkConfig, Preset};
use pikan_core::metrics;
use pikan_core::network::Network;
use pikan_core::simulator::{self, PmSampling};
use pikan_core::trainer::{predict_trajectory, LossConfig, TrainConfig, Variant};
use pikan_core::GridModel;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "GridModel", module = "pikan", frozen)]
struct PyGridModel {
    inner: GridModel,
}

#[pymethods]
impl PyGridModel {
    #[staticmethod]
    fn smib() -> Self {
        Self { inner: GridModel::smib() }
    }

    #[staticmethod]
    fn four_bus() -> Self {
        Self { inner: GridModel::four_bus() }
    }

    /// Reads a grid JSON file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: GridModel::load(&path).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn n_bus(&self) -> usize {
        self.inner.n_bus()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn inertia(&self) -> Vec<f64> {
        self.inner.inertia()
    }

    #[getter]
    fn damping(&self) -> Vec<f64> {
        self.inner.damping()
    }

    #[getter]
    fn dynamic_buses(&self) -> Vec<usize> {
        self.inner.dynamic_buses().to_vec()
    }

    #[getter]
    fn generator_buses(&self) -> Vec<usize> {
        self.inner.generator_buses().to_vec()
    }

    fn susceptance(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.n_bus();
        if i >= n || j >= n {
            return Err(PyIndexError::new_err(format!("bus index out of range for {n} buses")));
        }
        Ok(self.inner.susceptance(i, j))
    }

    fn ode_rhs(&self, state: Vec<f64>, pm: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.ode_rhs(&state, &pm).map_err(err)
    }

    fn electrical_power(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.electrical_power(&theta).map_err(err)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Integrates from `state0` under constant `pm`; returns a dict with
    /// `t`, `theta`, `omega` and `blown_up`.
    #[pyo3(signature = (state0, pm, horizon=None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        state0: Vec<f64>,
        pm: Vec<f64>,
        horizon: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let h = horizon.unwrap_or(self.inner.horizon());
        let tr = py.detach(|| simulator::integrate(&self.inner, &state0, &pm, h)).map_err(err)?;
        trajectory_dict(py, &tr)
    }

    fn __repr__(&self) -> String {
        format!("GridModel(name={:?}, n_bus={})", self.inner.name(), self.inner.n_bus())
    }
}

fn trajectory_dict<'py>(py: Python<'py>, tr: &simulator::Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", tr.times.clone())?;
    d.set_item("theta", tr.theta.clone())?;
    d.set_item("omega", tr.omega.clone())?;
    d.set_item("pm", tr.pm.clone())?;
    d.set_item("blown_up", tr.blown_up)?;
    Ok(d)
}

#[pyclass(name = "Dataset", module = "pikan", frozen)]
struct PyDataset {
    inner: simulator::Dataset,
}

#[pymethods]
impl PyDataset {
    /// The preset's trajectory set (`"smib"` or `"fourbus"`).
    #[staticmethod]
    #[pyo3(signature = (preset, seed=0, random_pm=false))]
    fn generate(py: Python<'_>, preset: &str, seed: u64, random_pm: bool) -> PyResult<Self> {
        let p: Preset = preset.parse().map_err(PyValueError::new_err)?;
        let sampling = if random_pm { PmSampling::Random } else { PmSampling::Grid };
        let inner = py.detach(|| p.dataset(&p.model(), seed, sampling)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: simulator::Dataset::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.trajectories.len()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_test(&self) -> usize {
        self.inner.n_test()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn trajectory<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let tr = self
            .inner
            .trajectories
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("trajectory {index} out of range")))?;
        trajectory_dict(py, tr)
    }
}

#[pyclass(name = "Network", module = "pikan", frozen)]
struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    /// KAN with input scaling taken from `model`.
    #[staticmethod]
    #[pyo3(signature = (model, shape, grid_size=5, k_b=3, seed=0))]
    fn kan(model: &PyGridModel, shape: Vec<usize>, grid_size: usize, k_b: usize, seed: u64) -> PyResult<Self> {
        let cfg = NetworkConfig { k_b, ..NetworkConfig::kan(shape, grid_size) };
        Ok(Self { inner: cfg.build(&model.inner, seed).map_err(err)? })
    }

    /// MLP with input scaling taken from `model`.
    #[staticmethod]
    #[pyo3(signature = (model, widths, seed=0))]
    fn mlp(model: &PyGridModel, widths: Vec<usize>, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: NetworkConfig::mlp(widths).build(&model.inner, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Network::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.reported_param_count()
    }

    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&input).map_err(err)
    }

    /// Predicted dynamic-bus angles at `times` under injections `pm`.
    fn predict(&self, model: &PyGridModel, times: Vec<f64>, pm: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        if pm.len() != model.inner.n_bus() {
            return Err(PyValueError::new_err(format!("expected {} injections", model.inner.n_bus())));
        }
        let tr = simulator::Trajectory {
            times,
            theta: vec![],
            omega: vec![],
            pm,
            meta: Default::default(),
            blown_up: false,
        };
        Ok(match &self.inner {
            Network::Kan(n) => predict_trajectory(n, &model.inner, &tr),
            Network::Mlp(n) => predict_trajectory(n, &model.inner, &tr),
        })
    }

    fn __repr__(&self) -> String {
        format!("Network(kind={:?}, params={})", self.inner.kind(), self.inner.reported_param_count())
    }
}

/// Trains `network` (a copy; the argument is untouched). Returns a dict
/// with the trained `network`, `losses`, `errors`, `median`, `mse_test`.
#[pyfunction]
#[pyo3(signature = (network, model, dataset, variant="I", steps=500, optimizer="lbfgs", seed=0, n_u=None, n_f=None))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    network: &PyNetwork,
    model: &PyGridModel,
    dataset: &PyDataset,
    variant: &str,
    steps: usize,
    optimizer: &str,
    seed: u64,
    n_u: Option<usize>,
    n_f: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let variant: Variant = variant.parse().map_err(PyValueError::new_err)?;
    let defaults = if model.inner.n_bus() == 2 { LossConfig::smib(variant, seed) } else { LossConfig::four_bus(variant, seed) };
    let loss = LossConfig::with_counts(variant, n_u.unwrap_or(defaults.n_u), n_f.unwrap_or(defaults.n_f), seed);
    let train = match optimizer {
        "lbfgs" => TrainConfig::lbfgs(steps, seed),
        "adam" => TrainConfig::adam(steps, seed),
        other => return Err(PyValueError::new_err(format!("unknown optimizer `{other}`"))),
    };
    let net = network.inner.clone();
    let out = py.detach(|| run_dynamics(net, &model.inner, &dataset.inner, &loss, &train)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("losses", out.report.losses())?;
    d.set_item("best_step", out.report.best_step)?;
    d.set_item("errors", out.errors)?;
    d.set_item("median", out.summary.median)?;
    d.set_item("max", out.summary.max)?;
    d.set_item("min", out.summary.min)?;
    d.set_item("mse_test", out.mse_test)?;
    d.set_item("network", Py::new(py, PyNetwork { inner: out.network })?)?;
    Ok(d)
}

/// Validates an experiment config JSON and returns it with defaults filled.
#[pyfunction]
fn experiment_config(json: &str) -> PyResult<String> {
    Ok(ExperimentConfig::from_json(json).map_err(err)?.to_json())
}

#[pyfunction]
fn rel_traj_error(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::rel_traj_error(&pred, &truth).map_err(err)
}

#[pyfunction]
fn mse_test(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::mse_test(&pred, &truth).map_err(err)
}

/// `(max, min, median)` of a list of errors.
#[pyfunction]
fn summarize(errors: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let s = metrics::summarize(&errors).map_err(err)?;
    Ok((s.max, s.min, s.median))
}

#[pymodule]
fn pikan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(experiment_config, m)?)?;
    m.add_function(wrap_pyfunction!(rel_traj_error, m)?)?;
    m.add_function(wrap_pyfunction!(mse_test, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    Ok(())
}
