//! Python bindings: datasets, metrics, ranking losses, RFF features and the
//! experiment runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::semirank::dataset::{parse_svmlight, parse_svmlight_str, synth_generate};
use ::semirank::harness::{format_ndcg as fmt_ndcg, run_experiment, ExperimentConfig};
use ::semirank::losses::{LossConfig, LossKind};
use ::semirank::numerics::Tensor;
use ::semirank::rff_ranker::build_rff;

fn py_err(e: ::semirank::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged rows"));
    }
    Tensor::matrix(rows.len(), cols, rows.concat()).map_err(py_err)
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.cols().max(1)).map(<[f64]>::to_vec).collect()
}

#[pyclass(name = "Dataset", module = "semirank")]
struct PyDataset {
    inner: ::semirank::dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn synthetic(queries: usize, docs: usize, features: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: synth_generate(queries, docs, features, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_svmlight(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_svmlight(path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_svmlight_str(text).map_err(py_err)?,
        })
    }

    fn to_svmlight(&self) -> PyResult<String> {
        self.inner.to_svmlight_string().map_err(py_err)
    }

    fn normalize(&self) -> Self {
        Self {
            inner: self.inner.normalize(),
        }
    }

    fn qids(&self) -> Vec<String> {
        self.inner.qids()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    #[getter]
    fn num_docs(&self) -> usize {
        self.inner.num_docs()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(features, labels)` of one query; labels are None when unlabeled.
    fn group(&self, qid: &str) -> PyResult<(Vec<Vec<f64>>, Option<Vec<u8>>)> {
        let g = self
            .inner
            .groups()
            .iter()
            .find(|g| g.qid == qid)
            .ok_or_else(|| PyValueError::new_err(format!("unknown query {qid}")))?;
        Ok((rows_of(&g.features), g.labels.clone()))
    }
}

/// NDCG@k of one query, or None when the query has no relevant document.
#[pyfunction]
fn ndcg_at_k(labels: Vec<f64>, scores: Vec<f64>, k: usize) -> PyResult<Option<f64>> {
    let q = ::semirank::metrics::ndcg_at_k(&labels, &scores, k).map_err(py_err)?;
    Ok((!q.excluded).then_some(q.value))
}

/// `(value, gradient)` of a ranking loss on one query.
#[pyfunction]
#[pyo3(signature = (kind, scores, labels, tau=1.0, sigma=1.0, k=10))]
fn ranking_loss(
    kind: &str,
    scores: Vec<f64>,
    labels: Vec<f64>,
    tau: f64,
    sigma: f64,
    k: usize,
) -> PyResult<(f64, Vec<f64>)> {
    let kind: LossKind = kind.parse().map_err(py_err)?;
    let cfg = LossConfig { kind, tau, sigma, k };
    cfg.validate().map_err(py_err)?;
    let out = cfg.evaluate(&scores, &labels).map_err(py_err)?;
    Ok((out.value, out.grad))
}

/// Random Fourier features of each row, width `output_dim`.
#[pyfunction]
fn rff_features(rows: Vec<Vec<f64>>, output_dim: usize, sigma: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let z = matrix(&rows)?;
    let map = build_rff(z.cols(), output_dim, sigma, seed).map_err(py_err)?;
    Ok(rows_of(&map.apply(&z).map_err(py_err)?))
}

#[pyfunction]
fn format_ndcg(value_x100: f64) -> String {
    fmt_ndcg(value_x100)
}

/// Runs a sweep from `key=value` config text plus overrides; returns one
/// dict per report row.
#[pyfunction]
#[pyo3(signature = (config="", overrides=None))]
fn run<'py>(
    py: Python<'py>,
    config: &str,
    overrides: Option<Vec<(String, String)>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = ExperimentConfig::from_kv_str(config).map_err(py_err)?;
    for (k, v) in overrides.unwrap_or_default() {
        cfg.set(&k, &v).map_err(py_err)?;
    }
    let rows = py.detach(|| run_experiment(&cfg)).map_err(py_err)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("method", &r.method)?;
            d.set_item("ratio", r.ratio)?;
            d.set_item("loss", r.loss.as_str())?;
            d.set_item("seed", r.seed)?;
            d.set_item("status", &r.status)?;
            d.set_item("error", r.error.clone())?;
            d.set_item("wall_seconds", r.wall_seconds)?;
            let ndcg = PyDict::new(py);
            for n in &r.ndcg {
                ndcg.set_item(n.k, n.value)?;
            }
            d.set_item("ndcg", ndcg)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "semirank")]
fn semirank(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ranking_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rff_features, m)?)?;
    m.add_function(wrap_pyfunction!(format_ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
