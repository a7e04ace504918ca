//! Python module `xfdreid`: fixtures, training, pooling, retrieval and
//! evaluation over the core engine.

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::Value;
use xfdreid::datamodel::FrameFeatureSequence;
use xfdreid::evaluation::{self, embed_dataset, Protocol, ProtocolResult};
use xfdreid::gradcheck::{run_gradcheck, GradcheckOptions};
use xfdreid::retrieval::{self, EmbeddingSet, RerankParams};
use xfdreid::training::{self, ScheduleConfig, Stage, TrainConfig};
use xfdreid::{pooling, synthfix, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py(obj: Option<&Bound<'_, PyAny>>) -> PyResult<Value> {
    let Some(obj) = obj else { return Ok(Value::Null) };
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, c), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn embedding_set(m: Vec<Vec<f64>>) -> PyResult<EmbeddingSet> {
    let m = matrix(m)?;
    let n = m.nrows();
    EmbeddingSet::new(m, (0..n).collect()).map_err(py_err)
}

/// Tracklet records plus their frame embeddings.
#[pyclass(module = "xfdreid")]
struct Dataset {
    inner: xfdreid::datamodel::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (features, manifest, flip_features=None))]
    fn load(features: PathBuf, manifest: PathBuf, flip_features: Option<PathBuf>) -> PyResult<Self> {
        let inner = xfdreid::datamodel::Dataset::load(features, manifest, flip_features.as_deref()).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Synthetic fixture. `config` holds fixture fields; `out_dir` also
    /// writes it to disk.
    #[staticmethod]
    #[pyo3(signature = (config=None, out_dir=None))]
    fn synthetic(config: Option<&Bound<'_, PyAny>>, out_dir: Option<PathBuf>) -> PyResult<Self> {
        let config: synthfix::FixtureConfig = match from_py(config)? {
            Value::Null => synthfix::FixtureConfig::default(),
            v => serde_json::from_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?,
        };
        let fixture = synthfix::generate(&config).map_err(py_err)?;
        if let Some(dir) = out_dir {
            synthfix::write_fixture(&fixture, dir).map_err(py_err)?;
        }
        Ok(Self { inner: fixture.dataset })
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    #[getter]
    fn seq_len(&self) -> usize {
        self.inner.seq_len
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.records)
    }

    fn frames(&self, tracklet_index: usize) -> PyResult<Vec<Vec<f64>>> {
        if tracklet_index >= self.inner.features.len() {
            return Err(PyValueError::new_err(format!("no tracklet {tracklet_index}")));
        }
        Ok(rows(&self.inner.sequence(tracklet_index).frames))
    }
}

/// Trained pooling head: attention vector, neck, classifier and memory.
#[pyclass(module = "xfdreid")]
struct PoolingHead {
    inner: training::PoolingHead,
}

#[pymethods]
impl PoolingHead {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: training::PoolingHead::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path, Value::Null).map_err(py_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[getter]
    fn attention_w(&self) -> Vec<f64> {
        self.inner.attention.w.to_vec()
    }

    /// Embeddings of every evaluation tracklet, keyed by tracklet index.
    fn embed(&self, dataset: &Dataset) -> PyResult<Vec<(usize, Vec<f64>)>> {
        let e = embed_dataset(&dataset.inner, &self.inner).map_err(py_err)?;
        Ok(e.vectors.iter().map(|(k, v)| (*k, v.to_vec())).collect())
    }
}

/// Resolved training configuration for `stage` with JSON-style overrides.
#[pyfunction]
#[pyo3(signature = (stage=1, overrides=None))]
fn train_config<'py>(py: Python<'py>, stage: u8, overrides: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &resolve_config(stage, overrides)?)
}

fn resolve_config(stage: u8, overrides: Option<&Bound<'_, PyAny>>) -> PyResult<TrainConfig> {
    let stage = match stage {
        1 => Stage::Stage1,
        2 => Stage::Stage2,
        _ => return Err(PyValueError::new_err("stage must be 1 or 2")),
    };
    TrainConfig::from_json_overrides(stage, &from_py(overrides)?).map_err(py_err)
}

/// Train a head; returns it with the per-epoch loss history.
#[pyfunction]
#[pyo3(signature = (dataset, stage=1, overrides=None, init=None))]
fn train<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    stage: u8,
    overrides: Option<&Bound<'py, PyAny>>,
    init: Option<&PoolingHead>,
) -> PyResult<(PoolingHead, Bound<'py, PyAny>)> {
    let cfg = resolve_config(stage, overrides)?;
    let out = training::train(&dataset.inner, &cfg, init.map(|h| h.inner.clone())).map_err(py_err)?;
    Ok((PoolingHead { inner: out.head }, to_py(py, &out.history)?))
}

/// Per-protocol metrics and overall mAP. Without a head, mean pooling
/// with no neck. `rerank` is `(k1, k2, lambda)`.
#[pyfunction]
#[pyo3(signature = (dataset, head=None, rerank=None))]
fn evaluate<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    head: Option<&PoolingHead>,
    rerank: Option<(usize, usize, f64)>,
) -> PyResult<Bound<'py, PyAny>> {
    let embeddings = match head {
        Some(h) => embed_dataset(&dataset.inner, &h.inner),
        None => evaluation::embed_dataset_with(
            &dataset.inner,
            pooling::PoolingMode::Mean,
            &pooling::AttentionPoolParams::zeros(dataset.inner.feature_dim),
            &pooling::NeckParams::disabled(),
        ),
    }
    .map_err(py_err)?;
    let params = rerank.map(|(k1, k2, l)| RerankParams::new(k1, k2, l));
    let report = evaluation::evaluate(&dataset.inner, &embeddings, params.as_ref()).map_err(py_err)?;
    to_py(py, &report)
}

fn sequence(frames: Vec<Vec<f64>>) -> PyResult<FrameFeatureSequence> {
    FrameFeatureSequence::new(matrix(frames)?, 0).map_err(py_err)
}

#[pyfunction]
fn mean_pool(frames: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(pooling::mean_pool(&sequence(frames)?).z.to_vec())
}

/// Softmax-attention pooled vector and the frame weights.
#[pyfunction]
fn attention_pool(frames: Vec<Vec<f64>>, w: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let params = pooling::AttentionPoolParams {
        w: Array1::from(w),
        trainable: false,
    };
    let p = pooling::attention_pool(&sequence(frames)?, &params).map_err(py_err)?;
    Ok((p.z.to_vec(), p.alphas.to_vec()))
}

#[pyfunction]
fn cosine_distance_matrix(queries: Vec<Vec<f64>>, gallery: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let d = retrieval::cosine_distance_matrix(&embedding_set(queries)?, &embedding_set(gallery)?).map_err(py_err)?;
    Ok(rows(&d.values))
}

#[pyfunction]
#[pyo3(signature = (queries, gallery, k1=28, k2=6, lam=0.28))]
fn k_reciprocal_rerank(
    queries: Vec<Vec<f64>>,
    gallery: Vec<Vec<f64>>,
    k1: usize,
    k2: usize,
    lam: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let d = retrieval::k_reciprocal_rerank(
        &embedding_set(queries)?,
        &embedding_set(gallery)?,
        &RerankParams::new(k1, k2, lam),
    )
    .map_err(py_err)?;
    Ok(rows(&d.values))
}

#[pyfunction]
#[pyo3(signature = (ranked_ids, query_id, valid=None))]
fn average_precision(ranked_ids: Vec<u32>, query_id: u32, valid: Option<Vec<bool>>) -> PyResult<f64> {
    let valid = valid.unwrap_or_else(|| vec![true; ranked_ids.len()]);
    evaluation::average_precision(&ranked_ids, query_id, &valid).map_err(py_err)
}

/// Query-weighted mean of `(map, num_queries)` pairs, at most one per protocol.
#[pyfunction]
fn overall_map(results: Vec<(f64, usize)>) -> PyResult<f64> {
    if results.len() > Protocol::ALL.len() {
        return Err(PyValueError::new_err("at most one entry per protocol"));
    }
    let results: Vec<ProtocolResult> = results
        .into_iter()
        .zip(Protocol::ALL)
        .map(|((map, n), protocol)| ProtocolResult {
            protocol,
            num_queries: n,
            excluded: 0,
            gallery_size: 0,
            map,
            r1: 0.0,
            r5: 0.0,
            r10: 0.0,
            ap: Vec::new(),
        })
        .collect();
    evaluation::overall_map(&results).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (epoch, base_lr=2e-4, min_lr=2e-6, max_epochs=50, warmup_epochs=0, warmup_start_factor=0.1))]
fn lr_at(
    epoch: usize,
    base_lr: f64,
    min_lr: f64,
    max_epochs: usize,
    warmup_epochs: usize,
    warmup_start_factor: f64,
) -> PyResult<f64> {
    let cfg = ScheduleConfig {
        base_lr,
        min_lr,
        warmup_epochs,
        warmup_start_factor,
        max_epochs,
        stage: Stage::Stage1,
        policy: training::LrPolicy::Cosine,
    };
    cfg.validate().map_err(py_err)?;
    training::lr_at(epoch, &cfg).map_err(py_err)
}

/// Finite-difference check of the analytic gradients.
#[pyfunction]
#[pyo3(signature = (configs=100, seed=0))]
fn gradcheck<'py>(py: Python<'py>, configs: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = run_gradcheck(&GradcheckOptions {
        configs,
        seed,
        ..Default::default()
    })
    .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("passed", report.passed)?;
    out.set_item("checks", to_py(py, &report.checks)?)?;
    Ok(out.into_any())
}

#[pymodule]
#[pyo3(name = "xfdreid")]
fn xfdreid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<PoolingHead>()?;
    m.add_function(wrap_pyfunction!(train_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mean_pool, m)?)?;
    m.add_function(wrap_pyfunction!(attention_pool, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_distance_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(k_reciprocal_rerank, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(overall_map, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
