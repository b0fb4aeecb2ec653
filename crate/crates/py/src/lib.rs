//! Python bindings: dataset generation and I/O, training, scoring,
//! retrieval metrics, and the density-peak and contrastive primitives.
//! Structured values cross the boundary as plain dicts and lists.

use hvp_core::eval::evaluate;
use hvp_core::features::{
    generate_splits, generate_synthetic, load_dataset, save_dataset, validate_dataset, FeatureBundle,
    SyntheticConfig,
};
use hvp_core::mpp::{density_peaks, dpc_select};
use hvp_core::tensor::Tensor;
use hvp_core::training::{info_nce_terms, load_checkpoint, save_checkpoint, train_with, TrainConfig};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: hvp_core::Error) -> PyErr {
    use hvp_core::Error as E;
    match e {
        E::Io(io) => PyIOError::new_err(io.to_string()),
        E::NonFinite { .. } | E::NonFiniteLoss { .. } | E::Internal(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Reads a dict (or None for defaults) into a serde config.
fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj else { return Ok(T::default()) };
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.dim(0)).map(|i| t.row(i).to_vec()).collect()
}

#[pyclass(name = "Dataset", module = "hvpnet")]
pub struct PyDataset {
    inner: hvp_core::features::Dataset,
}

impl PyDataset {
    fn refs(&self) -> Vec<&FeatureBundle> {
        self.inner.bundles.iter().collect()
    }
}

#[pymethods]
impl PyDataset {
    /// Generates one synthetic split; `config` holds generator fields.
    #[staticmethod]
    #[pyo3(signature = (config=None))]
    fn synthetic(config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg: SyntheticConfig = from_py(config)?;
        Ok(Self { inner: generate_synthetic(&cfg).map_err(err)? })
    }

    /// Generates `(train, val, test)` from one seeded generator.
    #[staticmethod]
    #[pyo3(signature = (config=None, val_pairs=64, test_pairs=64))]
    fn splits(config: Option<&Bound<'_, PyAny>>, val_pairs: usize, test_pairs: usize) -> PyResult<(Self, Self, Self)> {
        let cfg: SyntheticConfig = from_py(config)?;
        let [a, b, c] = generate_splits(&cfg, val_pairs, test_pairs).map_err(err)?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_dataset(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_dataset(&self.inner, path).map_err(err)
    }

    #[getter]
    fn header(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.header)
    }

    /// Validation messages; empty when the dataset is well formed.
    fn validate(&self) -> Vec<String> {
        validate_dataset(&self.inner).violations.iter().map(|v| v.to_string()).collect()
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("index {bad} out of range for {} pairs", self.inner.len())));
        }
        Ok(Self { inner: self.inner.subset(&indices) })
    }

    /// `[N][D]` frame features of one pair at one layer position.
    fn frames(&self, pair: usize, layer: usize) -> PyResult<Vec<Vec<f64>>> {
        let b = self.bundle(pair)?;
        let t = b.frames.get(layer).ok_or_else(|| PyValueError::new_err("layer out of range"))?;
        Ok(rows(t))
    }

    fn sentence(&self, pair: usize) -> PyResult<Vec<f64>> {
        Ok(self.bundle(pair)?.sentence.data().to_vec())
    }

    /// The pair's real word rows, padding excluded.
    fn words(&self, pair: usize) -> PyResult<Vec<Vec<f64>>> {
        let b = self.bundle(pair)?;
        Ok(rows(&b.words)[..b.word_count].to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let h = &self.inner.header;
        format!(
            "Dataset(split={}, pairs={}, N={}, M={}, D={}, layers={:?})",
            h.split.as_str(),
            h.num_pairs,
            h.frames,
            h.patches,
            h.dim,
            h.layers
        )
    }
}

impl PyDataset {
    fn bundle(&self, pair: usize) -> PyResult<&FeatureBundle> {
        self.inner
            .bundles
            .get(pair)
            .ok_or_else(|| PyValueError::new_err(format!("pair {pair} out of range")))
    }
}

#[pyclass(name = "Model", module = "hvpnet")]
pub struct PyModel {
    inner: hvp_core::HvpModel,
}

#[pymethods]
impl PyModel {
    /// An untrained model configured for `dataset`.
    #[new]
    #[pyo3(signature = (dataset, config=None))]
    fn new(dataset: &PyDataset, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg: TrainConfig = from_py(config)?;
        cfg.validate().map_err(err)?;
        let model_cfg = cfg.model_config(&dataset.inner).map_err(err)?;
        Ok(Self { inner: hvp_core::HvpModel::new(model_cfg, cfg.seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_checkpoint(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(err)
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Scores every text of `texts` against every video of `videos`
    /// (default: the same dataset). Returns `{"total": ..., "components": [...]}`.
    #[pyo3(signature = (texts, videos=None))]
    fn similarities(&self, py: Python<'_>, texts: &PyDataset, videos: Option<&PyDataset>) -> PyResult<Py<PyAny>> {
        let videos = videos.unwrap_or(texts);
        for ds in [texts, videos] {
            self.inner.config.check_compatible(&ds.inner.header).map_err(err)?;
        }
        let sims = py.detach(|| self.inner.similarities(&texts.refs(), &videos.refs())).map_err(err)?;
        let components: Vec<serde_json::Value> = sims
            .components
            .iter()
            .map(|c| {
                serde_json::json!({
                    "layer": c.layer,
                    "granularity": c.granularity,
                    "scores": rows(&c.scores),
                })
            })
            .collect();
        to_py(py, &serde_json::json!({ "total": rows(&sims.total), "components": components }))
    }

    /// Retrieval reports on `dataset`, one dict per direction.
    fn evaluate(&self, py: Python<'_>, dataset: &PyDataset) -> PyResult<Py<PyAny>> {
        self.inner.config.check_compatible(&dataset.inner.header).map_err(err)?;
        let refs = dataset.refs();
        let sims = py.detach(|| self.inner.similarities(&refs, &refs)).map_err(err)?;
        to_py(py, &evaluate(&sims.total).map_err(err)?)
    }
}

/// Trains on `train`, validating on `val` after each epoch. Returns
/// `(model, history)`.
#[pyfunction]
#[pyo3(signature = (train, val, config=None))]
fn train(py: Python<'_>, train: &PyDataset, val: &PyDataset, config: Option<&Bound<'_, PyAny>>) -> PyResult<(PyModel, Py<PyAny>)> {
    let cfg: TrainConfig = from_py(config)?;
    let outcome = py.detach(|| train_with(&train.inner, &val.inner, &cfg, |_| true)).map_err(err)?;
    let history = to_py(py, &outcome.history)?;
    Ok((PyModel { inner: outcome.model }, history))
}

/// Retrieval reports for a square text-by-video score matrix.
#[pyfunction]
fn retrieval_metrics(py: Python<'_>, scores: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    to_py(py, &evaluate(&matrix(scores)?).map_err(err)?)
}

/// `(centers, assignment)` for `[M][D]` tokens.
#[pyfunction]
#[pyo3(signature = (tokens, k, quantile=0.1))]
fn dpc(tokens: Vec<Vec<f64>>, k: usize, quantile: f64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let s = dpc_select(&matrix(tokens)?, k, quantile).map_err(err)?;
    Ok((s.centers, s.assignment))
}

type DensityOut = (Vec<f64>, Vec<f64>, Vec<f64>, f64);

/// Per-token `(rho, delta, gamma)` and the distance cutoff.
#[pyfunction]
#[pyo3(signature = (tokens, quantile=0.1))]
fn density(tokens: Vec<Vec<f64>>, quantile: f64) -> PyResult<DensityOut> {
    let p = density_peaks(&matrix(tokens)?, quantile).map_err(err)?;
    Ok((p.rho, p.delta, p.gamma, p.cutoff))
}

/// `(text_to_video, video_to_text)` contrastive loss terms.
#[pyfunction]
fn info_nce(scores: Vec<Vec<f64>>, scale: f64) -> PyResult<(f64, f64)> {
    info_nce_terms(&matrix(scores)?, scale).map_err(err)
}

#[pymodule]
mod hvpnet {
    #[pymodule_export]
    use super::{density, dpc, info_nce, retrieval_metrics, train, PyDataset, PyModel};
}
