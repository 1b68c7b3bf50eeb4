//! Python bindings. Structured results (suggestions, reports, corpora)
//! are returned as plain dicts and lists.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyAny, PyDict};
use serde::Serialize;

use simsr_core::encoder::{self, TrainConfig, DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_HASH_SEED};
use simsr_core::evalharness::{self, compose_message, SyntheticConfig};
use simsr_core::simulation::{self, SearchParams, SearchStrategy, SimilarityMatrix};
use simsr_core::{textmetrics, Error, SuggestConfig, System};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { path, source } => PyOSError::new_err(format!("cannot access {}: {source}", path.display())),
        Error::NonFinite => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(c: Vec<Vec<f64>>) -> PyResult<SimilarityMatrix> {
    SimilarityMatrix::from_rows(&c).map_err(to_py_err)
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

/// Lowercased alphanumeric tokens.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    textmetrics::tokenize(text).into_inner()
}

#[pyfunction]
fn term_f1(a: &str, b: &str) -> f64 {
    textmetrics::term_f1(&textmetrics::tokenize(a), &textmetrics::tokenize(b))
}

#[pyfunction]
fn weighted_rouge(pred: &str, reference: &str) -> f64 {
    textmetrics::weighted_rouge(&textmetrics::tokenize(pred), &textmetrics::tokenize(reference))
}

#[pyfunction]
fn self_rouge(replies: Vec<String>) -> PyResult<f64> {
    let tokens: Vec<_> = replies.iter().map(|r| textmetrics::tokenize(r)).collect();
    textmetrics::self_rouge(&tokens).map_err(to_py_err)
}

/// Sparse `(bucket, weight)` features of `text`.
#[pyfunction]
#[pyo3(signature = (text, buckets = DEFAULT_BUCKETS, hash_seed = DEFAULT_HASH_SEED))]
fn featurize(text: &str, buckets: usize, hash_seed: u64) -> Vec<(usize, f32)> {
    encoder::featurize(text, buckets, hash_seed).entries().to_vec()
}

#[pyfunction]
#[pyo3(signature = (scores, temperature = 10.0))]
fn softmax(scores: Vec<f64>, temperature: f64) -> Vec<f64> {
    simsr_core::pool::softmax_with_temperature(&scores, temperature)
}

/// Expected best-reply similarity of the rows `indices` of `c` under `p`.
#[pyfunction]
fn expected_score(c: Vec<Vec<f64>>, p: Vec<f64>, indices: Vec<usize>) -> PyResult<f64> {
    simulation::expected_score(&matrix(c)?, &p, &indices).map_err(to_py_err)
}

/// Run one search strategy over a similarity matrix. Returns
/// `(indices, expected_score, tuples_evaluated)`.
#[pyfunction]
#[pyo3(signature = (c, p, k, strategy = "ablative", samples = simulation::DEFAULT_SAMPLES, seed = 0))]
fn search(
    c: Vec<Vec<f64>>,
    p: Vec<f64>,
    k: usize,
    strategy: &str,
    samples: usize,
    seed: u64,
) -> PyResult<(Vec<usize>, f64, u64)> {
    let strategy: SearchStrategy = parse(strategy)?;
    let set = simulation::search(strategy, &matrix(c)?, &p, &SearchParams { k, samples, seed }).map_err(to_py_err)?;
    Ok((set.indices, set.expected_score, set.tuples_evaluated))
}

/// Seeded synthetic corpus as `{"train", "test", "replies"}`; pairs are
/// `(message, reply)` tuples.
#[pyfunction]
#[pyo3(signature = (seed = 0, bimodal_fraction = 0.6, intents = 30, messages = 90))]
fn make_synthetic<'py>(
    py: Python<'py>,
    seed: u64,
    bimodal_fraction: f64,
    intents: usize,
    messages: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let corpus = evalharness::make_synthetic(&SyntheticConfig {
        seed,
        bimodal_fraction,
        intents,
        messages,
        ..SyntheticConfig::default()
    })
    .map_err(to_py_err)?;
    let pairs = |v: &[evalharness::DialoguePair]| -> Vec<(String, String)> {
        v.iter().map(|p| (p.message.clone(), p.reply.clone())).collect()
    };
    let out = PyDict::new(py);
    out.set_item("train", pairs(&corpus.train))?;
    out.set_item("test", pairs(&corpus.test))?;
    out.set_item("replies", corpus.replies())?;
    Ok(out)
}

#[pyclass(name = "EncoderModel", module = "simsr")]
struct PyEncoderModel {
    inner: simsr_core::EncoderModel,
}

#[pymethods]
impl PyEncoderModel {
    #[staticmethod]
    #[pyo3(signature = (buckets = DEFAULT_BUCKETS, dim = DEFAULT_DIM, seed = 0, scale = 0.1, hash_seed = DEFAULT_HASH_SEED))]
    fn random(buckets: usize, dim: usize, seed: u64, scale: f32, hash_seed: u64) -> PyResult<Self> {
        let inner = simsr_core::EncoderModel::random(buckets, dim, hash_seed, seed, scale).map_err(to_py_err)?;
        Ok(PyEncoderModel { inner })
    }

    /// Train on `(message, reply)` pairs. Returns `(model, epoch_losses)`.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (pairs, epochs = 3, batch_size = 8, learning_rate = 0.05, buckets = DEFAULT_BUCKETS, dim = DEFAULT_DIM, seed = 0))]
    fn train(
        py: Python<'_>,
        pairs: Vec<(String, String)>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        buckets: usize,
        dim: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let config = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            buckets,
            dim,
            seed,
            ..TrainConfig::default()
        };
        let outcome = py
            .detach(|| encoder::train_with_history(&pairs, &config))
            .map_err(to_py_err)?;
        Ok((PyEncoderModel { inner: outcome.model }, outcome.epoch_losses))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = simsr_core::EncoderModel::load(path).map_err(to_py_err)?;
        Ok(PyEncoderModel { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py_err)
    }

    fn encode(&self, text: &str) -> Vec<f32> {
        self.inner.encode(text).0
    }

    fn score(&self, message: &str, reply: &str) -> f64 {
        self.inner.score(message, reply)
    }

    /// Mean symmetric in-batch loss of `(message, reply)` pairs.
    fn symmetric_loss(&self, pairs: Vec<(String, String)>) -> PyResult<f64> {
        encoder::symmetric_loss(&self.inner, &pairs)
            .map(|(loss, _)| loss)
            .map_err(to_py_err)
    }

    #[getter]
    fn buckets(&self) -> usize {
        self.inner.buckets()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        format!("{:016x}", self.inner.fingerprint())
    }

    fn __repr__(&self) -> String {
        format!(
            "EncoderModel(buckets={}, dim={})",
            self.inner.buckets(),
            self.inner.dim()
        )
    }
}

#[pyclass(name = "CandidatePool", module = "simsr")]
struct PyCandidatePool {
    inner: simsr_core::CandidatePool,
}

#[pymethods]
impl PyCandidatePool {
    #[staticmethod]
    fn build(py: Python<'_>, replies: Vec<String>, model: &PyEncoderModel) -> PyResult<Self> {
        let inner = py
            .detach(|| simsr_core::CandidatePool::build(&replies, &model.inner))
            .map_err(to_py_err)?;
        Ok(PyCandidatePool { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = simsr_core::CandidatePool::load(path).map_err(to_py_err)?;
        Ok(PyCandidatePool { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py_err)
    }

    fn text(&self, id: usize) -> PyResult<String> {
        if id >= self.inner.len() {
            return Err(PyValueError::new_err(format!("id {id} out of range")));
        }
        Ok(self.inner.text(id).to_owned())
    }

    fn texts(&self) -> Vec<String> {
        self.inner.candidates().iter().map(|c| c.text.clone()).collect()
    }

    /// Top-`k` `(id, score)` pairs for `message`.
    fn top_k(&self, model: &PyEncoderModel, message: &str, k: usize) -> PyResult<Vec<(usize, f64)>> {
        let hits = self.inner.top_k(&model.inner.encode(message), k).map_err(to_py_err)?;
        Ok(hits.into_iter().map(|s| (s.id, s.score)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("CandidatePool(rows={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

#[pyclass(name = "Engine", module = "simsr")]
struct PyEngine {
    inner: simsr_core::Engine,
}

fn suggest_config(
    k: usize,
    n: usize,
    m: usize,
    tau: f64,
    strategy: &str,
    seed: u64,
    samples: usize,
) -> PyResult<SuggestConfig> {
    Ok(SuggestConfig {
        k,
        n,
        m,
        temperature: tau,
        system: parse::<System>(strategy)?,
        samples,
        seed,
        ..SuggestConfig::default()
    })
}

#[pymethods]
impl PyEngine {
    #[new]
    fn new(model: &PyEncoderModel, pool: &PyCandidatePool) -> PyResult<Self> {
        let inner = simsr_core::Engine::new(model.inner.clone(), pool.inner.clone()).map_err(to_py_err)?;
        Ok(PyEngine { inner })
    }

    /// Suggest replies; returns the full suggestion as a dict.
    #[pyo3(signature = (message, k = 3, n = 15, m = 25, tau = 10.0, strategy = "simsr", seed = 0, samples = 25, persona = None))]
    #[allow(clippy::too_many_arguments)]
    fn suggest<'py>(
        &self,
        py: Python<'py>,
        message: &str,
        k: usize,
        n: usize,
        m: usize,
        tau: f64,
        strategy: &str,
        seed: u64,
        samples: usize,
        persona: Option<Vec<String>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let config = suggest_config(k, n, m, tau, strategy, seed, samples)?;
        let message = compose_message(&persona.unwrap_or_default(), message);
        let s = py.detach(|| self.inner.suggest(&message, &config)).map_err(to_py_err)?;
        to_py(py, &s)
    }

    /// Evaluate systems on `(message, reply)` pairs; returns the report
    /// as a dict.
    #[pyo3(signature = (pairs, systems = None, k = 3, n = 15, m = 25, tau = 10.0))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        pairs: Vec<(String, String)>,
        systems: Option<Vec<String>>,
        k: usize,
        n: usize,
        m: usize,
        tau: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let names = systems.unwrap_or_else(|| System::REGISTRY.iter().map(|s| s.to_string()).collect());
        let systems = names.iter().map(|s| parse::<System>(s)).collect::<PyResult<Vec<_>>>()?;
        let data: Vec<evalharness::DialoguePair> = pairs
            .into_iter()
            .map(|(message, reply)| evalharness::DialoguePair { message, reply })
            .collect();
        let config = suggest_config(k, n, m, tau, "simsr", 0, simulation::DEFAULT_SAMPLES)?;
        let report = py.detach(|| evalharness::evaluate(&self.inner, &systems, &data, &config));
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Engine(pool={})", self.inner.pool().len())
    }
}

#[pymodule]
fn simsr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(term_f1, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_rouge, m)?)?;
    m.add_function(wrap_pyfunction!(self_rouge, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(expected_score, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_class::<PyEncoderModel>()?;
    m.add_class::<PyCandidatePool>()?;
    m.add_class::<PyEngine>()?;
    m.add("SYSTEMS", System::REGISTRY.to_vec())?;
    Ok(())
}
