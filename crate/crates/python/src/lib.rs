//! Python bindings: configs, task generation, models, training, checkpoints
//! and the loss/certainty helpers.

use std::path::PathBuf;

use ctm::autodiff::{DiffArray, Tape};
use ctm::cli::RunConfigFile;
use ctm::losses;
use ctm::network::{check_compatible, ModelConfig, Network as CoreNetwork};
use ctm::tasks::{batch_rng, maze_generate, Dataset, TaskConfig};
use ctm::trainer::{self, CheckpointMeta, TrainConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

fn py_err(e: ctm::Error) -> PyErr {
    match e {
        ctm::Error::Config(_) | ctm::Error::InvalidArgument(_) | ctm::Error::ShapeMismatch { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A task definition, parsed from the TOML of a `[task]` table.
#[pyclass(module = "ctm_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Task {
    inner: TaskConfig,
}

#[pymethods]
impl Task {
    #[new]
    fn new(toml_text: &str) -> PyResult<Self> {
        let inner: TaskConfig = toml::from_str(toml_text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.kind()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape()
    }

    /// `(positions, classes)` of the model output.
    #[getter]
    fn output(&self) -> (usize, usize) {
        let spec = self.inner.output_spec();
        (spec.positions, spec.classes)
    }

    #[getter]
    fn default_loss(&self) -> String {
        loss_name(self.inner.default_loss())
    }

    /// `count` examples `(flat input, targets)` from stream `stream` of `seed`.
    #[pyo3(signature = (seed, count, stream = 0))]
    fn generate(&self, seed: u64, count: usize, stream: u64) -> PyResult<Vec<(Vec<f64>, Vec<usize>)>> {
        let mut rng = batch_rng(seed, stream);
        (0..count)
            .map(|_| self.inner.generate(&mut rng).map(|e| (e.input, e.target)).map_err(py_err))
            .collect()
    }
}

fn loss_name(mode: losses::LossMode) -> String {
    serde_json::to_value(mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// A run configuration with `[task]`, `[model]` and `[train]` tables.
#[pyclass(module = "ctm_py", frozen)]
struct RunConfig {
    inner: RunConfigFile,
}

#[pymethods]
impl RunConfig {
    #[new]
    fn new(toml_text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfigFile::parse(toml_text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::new(&text)
    }

    #[getter]
    fn task(&self) -> Task {
        Task {
            inner: self.inner.task.clone(),
        }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.train.seed
    }

    /// Freshly initialized network for the `[model]` table.
    #[pyo3(signature = (seed = None))]
    fn build(&self, seed: Option<u64>) -> PyResult<Network> {
        Network::from_config(&self.inner.model, seed.unwrap_or(self.inner.train.seed))
    }

    /// Trains a fresh network, overriding the iteration count if given.
    /// Returns `(network, report)`.
    #[pyo3(signature = (iterations = None, out_dir = None))]
    fn train<'py>(&self, py: Python<'py>, iterations: Option<usize>, out_dir: Option<PathBuf>) -> PyResult<(Network, Bound<'py, PyAny>)> {
        let mut config: TrainConfig = self.inner.train.clone();
        if let Some(n) = iterations {
            config.iterations = n;
            config.warmup = config.warmup.min(n.saturating_sub(1));
        }
        let mut net = CoreNetwork::new(&self.inner.model, config.seed).map_err(py_err)?;
        let task = self.inner.task.clone();
        let report = py
            .detach(|| trainer::train(&mut net, &task, &config, out_dir.as_deref()))
            .map_err(py_err)?;
        let json = serde_json::json!({
            "loss_mode": report.loss_mode,
            "iterations": report.iterations,
            "best": report.best,
            "final_eval": report.final_eval,
            "stopped_early": report.stopped_early,
            "records": report.records,
        });
        Ok((Network { inner: net, seed: config.seed }, to_py(py, &json)?))
    }
}

/// A CTM, LSTM or feed-forward network with its parameters.
#[pyclass(module = "ctm_py")]
struct Network {
    inner: CoreNetwork,
    seed: u64,
}

impl Network {
    fn from_config(config: &ModelConfig, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreNetwork::new(config, seed).map_err(py_err)?,
            seed,
        })
    }
}

#[pymethods]
impl Network {
    /// Builds from the JSON or TOML text of a `[model]` table.
    #[staticmethod]
    #[pyo3(signature = (text, seed = 0))]
    fn from_model(text: &str, seed: u64) -> PyResult<Self> {
        let config: ModelConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(_) => toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        };
        config.validate().map_err(py_err)?;
        Self::from_config(&config, seed)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, meta) = trainer::load_checkpoint(&path).map_err(py_err)?;
        Ok(Self { inner, seed: meta.seed })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let meta = CheckpointMeta::for_network(&self.inner, self.seed);
        trainer::save_checkpoint(&path, &self.inner, &meta).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.config().kind()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn ticks(&self) -> usize {
        self.inner.config().ticks()
    }

    /// Model config as a JSON string.
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Raises `ValueError` when the network cannot run `task`.
    fn check_task(&self, task: &Task) -> PyResult<()> {
        check_compatible(&self.inner.config(), &task.inner).map_err(py_err)
    }

    /// Per-tick logits `[tick][example][positions·classes]` for flat inputs of
    /// shape `input_shape`.
    fn forward(&self, py: Python<'_>, inputs: Vec<Vec<f64>>, input_shape: Vec<usize>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let batch = inputs.len();
        let width: usize = input_shape.iter().product();
        if batch == 0 || inputs.iter().any(|x| x.len() != width) {
            return Err(PyValueError::new_err(format!("need ≥ 1 input, each of {width} values")));
        }
        let mut shape = vec![batch];
        shape.extend(&input_shape);
        let x = DiffArray::new(shape, inputs.concat()).map_err(py_err)?;
        let out = py
            .detach(|| self.inner.forward(&mut Tape::new(), self.inner.params(), &x, None))
            .map_err(py_err)?;
        Ok(out
            .logits
            .iter()
            .map(|l| l.data().chunks(l.len() / batch).map(<[f64]>::to_vec).collect())
            .collect())
    }

    /// Evaluates on `count` held-out examples; returns a dict with `loss`,
    /// `accuracy` and `tick_accuracy`.
    #[pyo3(signature = (task, count = 256, seed = 0))]
    fn evaluate<'py>(&self, py: Python<'py>, task: &Task, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let mode = trainer::resolve_loss(None, &self.inner.config(), &task.inner);
        let summary = py
            .detach(|| {
                let data = Dataset::generate(&task.inner, seed, count)?;
                trainer::evaluate(&self.inner, &data, mode, 64)
            })
            .map_err(py_err)?;
        to_py(py, &serde_json::to_value(summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
    }
}

/// `1 − H(p)/ln C`.
#[pyfunction]
fn certainty(p: Vec<f64>) -> PyResult<f64> {
    losses::certainty(&p).map_err(py_err)
}

/// `(t1, t2, loss)` of the two-tick selection (ticks are 1-based).
#[pyfunction]
fn ctm_loss(tick_losses: Vec<f64>, certainties: Vec<f64>) -> PyResult<(usize, usize, f64)> {
    let p = losses::ctm_loss(&tick_losses, &certainties).map_err(py_err)?;
    Ok((p.t1, p.t2, p.loss))
}

/// CTC negative log-likelihood of `labels` under `T×V` logits (blank last).
#[pyfunction]
fn ctc_loss(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    losses::ctc_loss(&logits, &labels).map_err(py_err)
}

#[pyfunction]
fn adaptive_halt(certainties: Vec<f64>, threshold: f64) -> PyResult<usize> {
    losses::adaptive_halt(&certainties, threshold).map_err(py_err)
}

/// Expected calibration error of `(confidence, correct)` pairs.
#[pyfunction]
#[pyo3(signature = (points, n_bins = 10))]
fn ece(points: Vec<(f64, bool)>, n_bins: usize) -> PyResult<f64> {
    Ok(losses::reliability(&points, n_bins).map_err(py_err)?.ece)
}

/// Decay-weighted synchronization of `history[t][neuron]` over `pairs`.
#[pyfunction]
fn sync_direct(history: Vec<Vec<f64>>, pairs: Vec<(usize, usize)>, decays: Vec<f64>) -> PyResult<Vec<f64>> {
    ctm::model::sync_direct(&history, &pairs, &decays).map_err(py_err)
}

/// A maze as a dict with `size`, `pixels` (row-major booleans), `start`,
/// `goal`, `path` and `route` (class ids).
#[pyfunction]
fn maze<'py>(py: Python<'py>, size: usize, route_len: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let m = maze_generate(size, route_len, &mut batch_rng(seed, 0)).map_err(py_err)?;
    let json = serde_json::json!({
        "size": m.size,
        "pixels": m.pixels(),
        "start": m.start,
        "goal": m.goal,
        "path": m.path,
        "route": m.labels(),
    });
    to_py(py, &json)
}

#[pymodule]
fn ctm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Task>()?;
    m.add_class::<RunConfig>()?;
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(certainty, m)?)?;
    m.add_function(wrap_pyfunction!(ctm_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_halt, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(sync_direct, m)?)?;
    m.add_function(wrap_pyfunction!(maze, m)?)?;
    Ok(())
}
