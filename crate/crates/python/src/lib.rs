//! Python bindings: datasets, fitting, selection, prediction and the
//! simulation generators. Results that are plain records come back as dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use mlcwm::data::{self, Dataset, Role, RoleManifest};
use mlcwm::dgp;
use mlcwm::dists::{Domain, IsingModel};
use mlcwm::em;
use mlcwm::inference::{self, BMode};
use mlcwm::model::{FitConfig, InitStrategy, ModelFit, Variant};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parses a value the way the JSON documents spell it (`"01"`, `"kmeans"`, ...).
fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| err(format!("unknown {what} `{s}`")))
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_bound_py_any(py),
            (None, Some(f)) => f.into_bound_py_any(py),
            _ => Err(err(format!("unrepresentable number {n}"))),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            Ok(PyList::new(py, items)?.into_any())
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            Ok(d.into_any())
        }
    }
}

fn records<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(err)?)
}

#[pyclass(name = "Dataset", module = "mlcwm_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a CSV under `roles`, a mapping of column name to one of
    /// response, group, continuous, categorical, dichotomous, fixed-only, ignore.
    #[staticmethod]
    #[pyo3(signature = (path, roles, domain = "01"))]
    fn from_csv(path: &str, roles: std::collections::BTreeMap<String, String>, domain: &str) -> PyResult<Self> {
        let mut manifest = RoleManifest::default().with_domain(parse::<Domain>("domain", domain)?);
        for (col, role) in roles {
            manifest.roles.insert(col, parse::<Role>("role", &role)?);
        }
        let inner = data::load_dataset(path, &manifest).map_err(err)?;
        if let Some(v) = data::validate(&inner).first() {
            return Err(err(v));
        }
        Ok(Self { inner })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        self.inner.save_csv(path).map_err(err)
    }

    fn subset(&self, rows: Vec<usize>) -> PyResult<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.inner.n_obs()) {
            return Err(err(format!("row {bad} out of range for {} rows", self.inner.n_obs())));
        }
        Ok(Self {
            inner: self.inner.subset(&rows),
        })
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    #[getter]
    fn n_groups(&self) -> usize {
        self.inner.n_groups()
    }

    #[getter]
    fn y(&self) -> Vec<u8> {
        self.inner.y.clone()
    }

    #[getter]
    fn groups(&self) -> Vec<String> {
        self.inner.groups.iter().map(|&g| self.inner.group_labels[g].clone()).collect()
    }

    /// Column names by role.
    fn schema<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        records(py, &self.inner.schema())
    }

    fn __len__(&self) -> usize {
        self.inner.n_obs()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_obs={}, n_groups={}, continuous={}, categorical={}, dichotomous={})",
            self.inner.n_obs(),
            self.inner.n_groups(),
            self.inner.n_continuous(),
            self.inner.categorical.len(),
            self.inner.n_binary()
        )
    }
}

#[pyclass(name = "ModelFit", module = "mlcwm_py", frozen)]
pub struct PyModelFit {
    inner: ModelFit,
}

#[pymethods]
impl PyModelFit {
    #[getter]
    fn c(&self) -> usize {
        self.inner.c
    }

    #[getter]
    fn loglik(&self) -> f64 {
        self.inner.loglik
    }

    #[getter]
    fn bic(&self) -> f64 {
        self.inner.bic
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.inner.trace.clone()
    }

    #[getter]
    fn z(&self) -> Vec<usize> {
        self.inner.z.clone()
    }

    #[getter]
    fn tau(&self) -> Vec<Vec<f64>> {
        self.inner.tau.clone()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.components.iter().map(|c| c.w).collect()
    }

    #[getter]
    fn betas(&self) -> Vec<Vec<f64>> {
        self.inner.components.iter().map(|c| c.beta().to_vec()).collect()
    }

    #[getter]
    fn sigma_b(&self) -> Vec<f64> {
        self.inner.components.iter().map(|c| c.sigma_b()).collect()
    }

    #[getter]
    fn design_names(&self) -> Vec<String> {
        self.inner.design_names.clone()
    }

    #[getter]
    fn train_accuracy(&self) -> Option<f64> {
        self.inner.train_accuracy
    }

    #[getter]
    fn train_cutoff(&self) -> Option<f64> {
        self.inner.train_cutoff
    }

    /// Returns `{"p": [...], "posteriors": [[...]], "conditional": [[...]]}`.
    #[pyo3(signature = (data, b_mode = "group-blup"))]
    fn predict<'py>(&self, py: Python<'py>, data: &PyDataset, b_mode: &str) -> PyResult<Bound<'py, PyDict>> {
        let mode: BMode = b_mode.parse().map_err(err)?;
        let preds = py.detach(|| inference::predict(&self.inner, &data.inner, mode)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("p", preds.iter().map(|p| p.p).collect::<Vec<_>>())?;
        d.set_item("posteriors", preds.iter().map(|p| p.posteriors.clone()).collect::<Vec<_>>())?;
        d.set_item("conditional", preds.iter().map(|p| p.conditional.clone()).collect::<Vec<_>>())?;
        Ok(d)
    }

    /// One dict per row with predictions at b = -sigma, 0, +sigma.
    fn scenario<'py>(&self, py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
        records(py, &inference::scenario(&self.inner, &data.inner).map_err(err)?)
    }

    fn group_effects<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        records(py, &inference::group_effects(&self.inner))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        ModelFit::from_json(s).map(|inner| Self { inner }).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ModelFit::load(path).map(|inner| Self { inner }).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("ModelFit(c={}, loglik={:.4}, bic={:.4})", self.inner.c, self.inner.loglik, self.inner.bic)
    }
}

#[pyclass(name = "IsingModel", module = "mlcwm_py", frozen)]
pub struct PyIsingModel {
    inner: IsingModel,
}

#[pymethods]
impl PyIsingModel {
    /// `pairs` lists the upper-triangle interactions row by row
    /// (g12, g13, ..., g23, ...).
    #[new]
    #[pyo3(signature = (nu, pairs, domain = "01"))]
    fn new(nu: Vec<f64>, pairs: Vec<f64>, domain: &str) -> PyResult<Self> {
        let inner = IsingModel::from_pairs(nu, &pairs, parse("domain", domain)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn h(&self) -> usize {
        self.inner.h()
    }

    fn logpmf(&self, state: Vec<i8>) -> PyResult<f64> {
        if state.len() != self.inner.h() {
            return Err(err(format!("state has {} entries, model has {}", state.len(), self.inner.h())));
        }
        self.inner.logpmf(&state).map_err(err)
    }

    /// Every state with its probability.
    fn probabilities(&self) -> PyResult<Vec<(Vec<i8>, f64)>> {
        self.inner.state_probabilities().map_err(err)
    }

    fn convert(&self, domain: &str) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.convert_domain(parse("domain", domain)?),
        })
    }

    /// (nu, gamma pairs) in the model's domain.
    fn params(&self) -> Vec<f64> {
        self.inner.params()
    }
}

fn config(formula: Vec<String>, c_grid: Vec<usize>, n_starts: usize, seed: u64, max_iter: usize, tol: f64, init: &str) -> PyResult<FitConfig> {
    let cfg = FitConfig {
        c_grid,
        n_starts,
        seed,
        max_iter,
        tol,
        init: init.parse::<InitStrategy>().map_err(err)?,
        formula,
        ..Default::default()
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Best of `n_starts` runs with `c` clusters.
#[pyfunction]
#[pyo3(signature = (data, c, formula, n_starts = 10, seed = 1, max_iter = 100, tol = 1e-5, init = "random", variant = "full"))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    c: usize,
    formula: Vec<String>,
    n_starts: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    init: &str,
    variant: &str,
) -> PyResult<PyModelFit> {
    let cfg = config(formula, vec![c], n_starts, seed, max_iter, tol, init)?;
    let variant: Variant = parse("variant", variant)?;
    let ds = &data.inner;
    let mut best = py
        .detach(|| em::fit_best(ds, c, &cfg, variant))
        .map_err(err)?
        .0
        .ok_or_else(|| err(format!("every start failed at C={c}")))?;
    inference::attach_train_scores(&mut best, ds).map_err(err)?;
    Ok(PyModelFit { inner: best })
}

/// Lowest-BIC fit over `c_grid` plus the per-C table.
#[pyfunction]
#[pyo3(signature = (data, formula, c_grid = vec![1, 2, 3, 4], n_starts = 10, seed = 1, max_iter = 100, tol = 1e-5, init = "random"))]
#[allow(clippy::too_many_arguments)]
fn select<'py>(
    py: Python<'py>,
    data: &PyDataset,
    formula: Vec<String>,
    c_grid: Vec<usize>,
    n_starts: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    init: &str,
) -> PyResult<(PyModelFit, Bound<'py, PyAny>)> {
    let cfg = config(formula, c_grid, n_starts, seed, max_iter, tol, init)?;
    let ds = &data.inner;
    let sel = py.detach(|| em::fit_select(ds, &cfg)).map_err(err)?;
    let mut best = sel.best;
    inference::attach_train_scores(&mut best, ds).map_err(err)?;
    Ok((PyModelFit { inner: best }, records(py, &sel.table)?))
}

/// Draws a train/test pair from a built-in model ("table1" or "analogue").
#[pyfunction]
#[pyo3(signature = (dgp = "table1", seed = 1, n_test = 200))]
fn simulate<'py>(py: Python<'py>, dgp: &str, seed: u64, n_test: usize) -> PyResult<Bound<'py, PyDict>> {
    let gt = match dgp {
        "table1" => dgp::builtin_table1(),
        "analogue" => dgp::builtin_application_analogue(),
        other => return Err(err(format!("unknown dgp `{other}` (table1 or analogue)"))),
    };
    let (train, test) = dgp::simulate_pair(&gt, n_test, seed).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("train", PyDataset { inner: train.dataset().clone() })?;
    d.set_item("test", PyDataset { inner: test.dataset().clone() })?;
    d.set_item("train_labels", train.labels)?;
    d.set_item("test_labels", test.labels)?;
    d.set_item("formula", gt.formula)?;
    Ok(d)
}

/// The fit next to pooled GLM and random-intercept GLM baselines.
#[pyfunction]
#[pyo3(signature = (fit, train, test = None, truth = None))]
fn evaluate<'py>(
    py: Python<'py>,
    fit: &PyModelFit,
    train: &PyDataset,
    test: Option<&PyDataset>,
    truth: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyAny>> {
    let test = test.map(|t| &t.inner);
    let formula = &fit.inner.config.formula;
    let rows = vec![
        inference::evaluate_fit(&fit.inner, &train.inner, test, truth.as_deref()).map_err(err)?,
        inference::evaluate_glm(&train.inner, test, formula).map_err(err)?,
        inference::evaluate_glmer(&train.inner, test, formula).map_err(err)?,
    ];
    records(py, &rows)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    inference::adjusted_rand_index(&a, &b).map_err(err)
}

/// `{"auc", "cutoff", "youden", "accuracy"}`; positive when score >= cutoff.
#[pyfunction]
fn roc_cutoff<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
    records(py, &inference::roc_cutoff(&scores, &labels).map_err(err)?)
}

#[pymodule]
fn mlcwm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModelFit>()?;
    m.add_class::<PyIsingModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(roc_cutoff, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_document_spellings() {
        assert_eq!(parse::<Domain>("domain", "pm1").unwrap(), Domain::PlusMinusOne);
        assert_eq!(parse::<Role>("role", "fixed-only").unwrap(), Role::FixedOnly);
        assert_eq!(parse::<Variant>("variant", "no-d").unwrap(), Variant::NoD);
    }
}
