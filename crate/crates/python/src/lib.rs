//! Python bindings: datasets, training, metrics and the counterfactual audit.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use counterfair::counterfactual::{self, SelectionConfig};
use counterfair::dataset::{self, InteractionMatrix, MovieLensFormat};
use counterfair::graph::{build_adjacency, predict_scores};
use counterfair::imputer::{self, ImputerConfig, ImputerKind};
use counterfair::metrics::{self, Metric, RankingContext};
use counterfair::trainer::{self, ModelState, Optimizer, TrainConfig};
use counterfair::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::InvalidArgument(_)
        | Error::ShapeMismatch(_)
        | Error::OutOfRange { .. }
        | Error::DuplicateEdge { .. }
        | Error::ZeroDegree(_)
        | Error::Format { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_metric(name: &str) -> PyResult<Metric> {
    match name {
        "ndcg" => Ok(Metric::Ndcg),
        "f1" => Ok(Metric::F1),
        other => Err(PyValueError::new_err(format!("unknown metric `{other}`"))),
    }
}

/// Binary user-item interaction matrix.
#[pyclass(
    name = "Interactions",
    module = "counterfair_py",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
pub struct PyInteractions {
    inner: InteractionMatrix,
}

#[pymethods]
impl PyInteractions {
    #[new]
    fn new(n_users: usize, n_items: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        InteractionMatrix::from_edges(n_users, n_items, edges)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    fn user_items(&self, user: usize) -> PyResult<Vec<u32>> {
        if user >= self.inner.n_users() {
            return Err(to_py(Error::OutOfRange {
                index: user,
                len: self.inner.n_users(),
            }));
        }
        Ok(self.inner.user_items(user).to_vec())
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n_edges()
    }

    fn __repr__(&self) -> String {
        format!(
            "Interactions(n_users={}, n_items={}, n_edges={})",
            self.inner.n_users(),
            self.inner.n_items(),
            self.inner.n_edges()
        )
    }
}

/// Raw rating log.
#[pyclass(name = "RatingLog", module = "counterfair_py", frozen)]
pub struct PyRatingLog {
    inner: dataset::InteractionLog,
}

#[pymethods]
impl PyRatingLog {
    /// `(users, items, ratings)`.
    fn stats(&self) -> (usize, usize, usize) {
        let s = self.inner.stats();
        (s.users, s.items, s.ratings)
    }

    #[getter]
    fn skipped_rows(&self) -> usize {
        self.inner.skipped_rows
    }

    fn kcore(&self, min_degree: usize) -> PyResult<PyRatingLog> {
        dataset::kcore_filter(&self.inner, min_degree)
            .map(|inner| PyRatingLog { inner })
            .map_err(to_py)
    }

    /// Chronological split. With `drop_cold`, items that only occur on the
    /// test side are removed so the training graph has no isolated nodes.
    #[pyo3(signature = (train_fraction = 0.8, drop_cold = true))]
    fn split(&self, train_fraction: f64, drop_cold: bool) -> PyResult<PySplit> {
        let mut ds = dataset::temporal_split(&self.inner, train_fraction).map_err(to_py)?;
        if drop_cold {
            dataset::drop_cold_items(&mut ds).map_err(to_py)?;
        }
        Ok(PySplit {
            user_ids: ds.user_ids,
            item_ids: ds.item_ids,
            train: PyInteractions { inner: ds.train },
            test: PyInteractions { inner: ds.test },
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Indexed chronological train/test split.
#[pyclass(name = "Split", module = "counterfair_py", frozen, get_all)]
pub struct PySplit {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    train: PyInteractions,
    test: PyInteractions,
}

#[pyfunction]
#[pyo3(signature = (path, double_colon = false))]
fn load_movielens(path: PathBuf, double_colon: bool) -> PyResult<PyRatingLog> {
    let format = if double_colon {
        MovieLensFormat::DoubleColon
    } else {
        MovieLensFormat::Tab
    };
    dataset::load_movielens(path, format)
        .map(|inner| PyRatingLog { inner })
        .map_err(to_py)
}

#[pyfunction]
fn load_amazon_csv(path: PathBuf) -> PyResult<PyRatingLog> {
    dataset::load_amazon_csv(path)
        .map(|inner| PyRatingLog { inner })
        .map_err(to_py)
}

/// A trained graph model.
#[pyclass(name = "Model", module = "counterfair_py")]
pub struct PyModel {
    inner: ModelState,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn epochs_done(&self) -> usize {
        self.inner.epochs_done
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.e0.dim()
    }

    /// Predicted scores of `user` over every item.
    fn scores(&self, user: usize) -> PyResult<Vec<f64>> {
        let emb = self
            .inner
            .aggregated()
            .ok_or_else(|| PyRuntimeError::new_err("model is stale"))?;
        if user >= emb.n_users() {
            return Err(to_py(Error::OutOfRange {
                index: user,
                len: emb.n_users(),
            }));
        }
        Ok(predict_scores(emb, user))
    }

    /// Top `k` items for `user` that are not in `exclude`.
    #[pyo3(signature = (user, k, exclude = None))]
    fn recommend(
        &self,
        user: usize,
        k: usize,
        exclude: Option<Vec<usize>>,
    ) -> PyResult<Vec<usize>> {
        let scores = self.scores(user)?;
        Ok(metrics::topk(&scores, k, &exclude.unwrap_or_default()).items)
    }

    /// Mean held-out metric over all users, ranking only items outside `train`.
    #[pyo3(signature = (train, test, k = 10, metric = "ndcg"))]
    fn evaluate(
        &self,
        train: &PyInteractions,
        test: &PyInteractions,
        k: usize,
        metric: &str,
    ) -> PyResult<f64> {
        let ctx = RankingContext::held_out(&train.inner, &test.inner).map_err(to_py)?;
        let g = metrics::gain_vector(&self.inner, &ctx, k, parse_metric(metric)?).map_err(to_py)?;
        Ok(g.values.iter().sum::<f64>() / g.len().max(1) as f64)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::save_checkpoint(&self.inner, path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf, train: &PyInteractions) -> PyResult<PyModel> {
        let r = &train.inner;
        let mut inner = trainer::load_checkpoint(path, r.n_users(), r.n_items()).map_err(to_py)?;
        inner
            .refresh(&build_adjacency(r).map_err(to_py)?)
            .map_err(to_py)?;
        Ok(PyModel { inner })
    }

    fn fingerprint(&self) -> String {
        counterfactual::model_fingerprint(&self.inner)
    }
}

#[pyfunction]
#[pyo3(signature = (
    train, epochs = 20, batch_size = 2048, learning_rate = 0.05, lambda_reg = 0.03,
    layers = 3, dim = 64, seed = 0, optimizer = "sgd"
))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    train: &PyInteractions,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    lambda_reg: f64,
    layers: usize,
    dim: usize,
    seed: u64,
    optimizer: &str,
) -> PyResult<PyModel> {
    let optimizer = match optimizer {
        "sgd" => Optimizer::Sgd,
        "adam" => Optimizer::Adam,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown optimizer `{other}`"
            )))
        }
    };
    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        lambda_reg,
        layers,
        dim,
        seed,
        optimizer,
        ..TrainConfig::default()
    };
    let r = train.inner.clone();
    py.detach(move || trainer::train(&r, &cfg, None))
        .map(|inner| PyModel { inner })
        .map_err(to_py)
}

#[pyfunction]
fn ndcg_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> f64 {
    metrics::ndcg_at_k(&ranked, &relevant.into_iter().collect(), k)
}

#[pyfunction]
fn f1_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> f64 {
    metrics::f1_at_k(&ranked, &relevant.into_iter().collect(), k)
}

#[pyfunction]
#[pyo3(signature = (scores, k, exclude = None))]
fn topk(scores: Vec<f64>, k: usize, exclude: Option<Vec<usize>>) -> Vec<usize> {
    metrics::topk(&scores, k, &exclude.unwrap_or_default()).items
}

#[pyfunction]
#[pyo3(signature = (degree, n_edges, n_users, alpha = 10.0, beta = 0.5))]
fn imputation_count(degree: usize, n_edges: usize, n_users: usize, alpha: f64, beta: f64) -> usize {
    counterfactual::imputation_count_for(degree, n_edges, n_users, alpha, beta)
}

/// Stage one of the method. Returns one dict per probable candidate.
#[pyfunction]
#[pyo3(signature = (
    model, train, alpha = 10.0, beta = 0.5, k = 20, fine_tune_epochs = 1,
    gain_quantile = 0.25, degree_quantile = 0.25, seed = 0, imputer = "mf_bpr"
))]
#[allow(clippy::too_many_arguments)]
fn audit<'py>(
    py: Python<'py>,
    model: &PyModel,
    train: &PyInteractions,
    alpha: f64,
    beta: f64,
    k: usize,
    fine_tune_epochs: usize,
    gain_quantile: f64,
    degree_quantile: f64,
    seed: u64,
    imputer: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kind = match imputer {
        "mf_bpr" => ImputerKind::MfBpr,
        "popularity" => ImputerKind::Popularity,
        other => {
            return Err(PyValueError::new_err(format!(
                "unsupported imputer `{other}`"
            )))
        }
    };
    let cfg = SelectionConfig {
        alpha,
        beta,
        k,
        fine_tune_epochs,
        gain_quantile,
        degree_quantile,
        seed,
        ..SelectionConfig::default()
    };
    let mut icfg = ImputerConfig {
        kind,
        ..ImputerConfig::default()
    };
    icfg.train.seed = seed;
    let r = train.inner.clone();
    let base = &model.inner;
    let result = py
        .detach(|| -> counterfair::Result<_> {
            let adj = build_adjacency(&r)?;
            let handle = imputer::fit(&r, &icfg)?;
            counterfactual::audit(base, &r, &adj, &handle, &cfg)
        })
        .map_err(to_py)?;
    result
        .reports
        .into_iter()
        .map(|rep| {
            let d = PyDict::new(py);
            d.set_item("user", rep.user)?;
            d.set_item("degree", rep.degree)?;
            d.set_item("prior_gain", rep.prior_gain)?;
            d.set_item("post_gain", rep.post_gain)?;
            d.set_item("pgain", rep.pgain)?;
            d.set_item("pgain_global", rep.pgain_global)?;
            d.set_item("selected", rep.selected)?;
            d.set_item("imputed_items", rep.imputed_items)?;
            d.set_item("updated_items", rep.updated_items)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn counterfair_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInteractions>()?;
    m.add_class::<PyRatingLog>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(load_movielens, m)?)?;
    m.add_function(wrap_pyfunction!(load_amazon_csv, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(f1_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(topk, m)?)?;
    m.add_function(wrap_pyfunction!(imputation_count, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    Ok(())
}
