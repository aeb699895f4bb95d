//! Python bindings. Structured results cross the boundary as plain
//! dicts and lists (serialized through the `json` module).

use std::path::Path;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use postcond_core::frontend::{extract_methods as extract, find_method, parse_unit, SourceUnit, FIXTURE_ADAPTER};
use postcond_core::harness::{self, PostconditionSet, RunnerSpec};
use postcond_core::metrics::{self, AblationSpec, SampleStats};
use postcond_core::mutgen::{generate_operator_mutants, Catalog, Scheme};
use postcond_core::pipeline::{self, TrigramHashProvider};
use postcond_core::validate;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn unit(source: &str, path: &str) -> PyResult<SourceUnit> {
    parse_unit("unit", path, source, FIXTURE_ADAPTER).map_err(value_err)
}

/// 1 - C(n-c, k) / C(n, k).
#[pyfunction]
fn pass_at_k(n: usize, c: usize, k: usize) -> PyResult<f64> {
    if c > n {
        return Err(PyValueError::new_err(format!("c = {c} exceeds n = {n}")));
    }
    metrics::pass_at_k(n, c, k).map_err(value_err)
}

/// (delta, rho); rho is None when corr is zero.
#[pyfunction]
fn gap_metrics(corr: f64, comp: f64) -> (f64, Option<f64>) {
    metrics::gap_metrics(corr, comp)
}

/// Aggregate metrics over per-task (task_id, n, c_corr, c_comp) tuples.
#[pyfunction]
#[pyo3(signature = (tasks, k_values = vec![1, 3, 5]))]
fn metric_report(py: Python<'_>, tasks: Vec<(String, usize, usize, usize)>, k_values: Vec<usize>) -> PyResult<Py<PyAny>> {
    let mut stats = Vec::new();
    for (task, n, corr, comp) in tasks {
        if !(comp <= corr && corr <= n) {
            return Err(PyValueError::new_err(format!("{task}: need c_comp <= c_corr <= n")));
        }
        stats.push(SampleStats::from_counts(task, n, corr, comp));
    }
    to_py(py, &metrics::metric_report(&stats, &k_values))
}

#[pyfunction]
fn trigram_embed(headers: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
    pipeline::embed_headers(&headers, &TrigramHashProvider).map_err(value_err)
}

#[pyfunction]
fn farthest_first_select(vectors: Vec<Vec<f64>>, count: usize) -> PyResult<Vec<usize>> {
    pipeline::farthest_first_select(&vectors, count).map_err(value_err)
}

/// Method records of a fixture-language source unit.
#[pyfunction]
#[pyo3(signature = (source, path = "unit.fx"))]
fn extract_methods(py: Python<'_>, source: &str, path: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &extract(&unit(source, path)?))
}

/// Operator mutants of `method`, each with its unified diff.
#[pyfunction]
#[pyo3(signature = (source, method, catalog = "fixture"))]
fn operator_mutants(py: Python<'_>, source: &str, method: &str, catalog: &str) -> PyResult<Py<PyAny>> {
    let u = unit(source, "unit.fx")?;
    let m = find_method(&u, method).ok_or_else(|| PyKeyError::new_err(method.to_string()))?;
    let cat = Catalog::bundled(catalog).ok_or_else(|| PyKeyError::new_err(catalog.to_string()))?;
    let out: Vec<serde_json::Value> = generate_operator_mutants(&u, &m, &cat)
        .into_iter()
        .map(|mu| {
            serde_json::json!({
                "mutant_id": mu.mutant_id,
                "operator": mu.operator_name,
                "diff": mu.diff(&u),
                "source": mu.rendered_text,
            })
        })
        .collect();
    to_py(py, &out)
}

/// Weaves `postconditions` into `method` and runs the test files found in
/// `tests_dir`. Returns the outcome with its value in {-1, 0, 1}.
#[pyfunction]
#[pyo3(signature = (source, method, postconditions, tests_dir, timeout_ms = 2000))]
fn evaluate(
    py: Python<'_>,
    source: &str,
    method: &str,
    postconditions: &Bound<'_, PyAny>,
    tests_dir: &str,
    timeout_ms: u64,
) -> PyResult<Py<PyAny>> {
    let u = unit(source, "unit.fx")?;
    let m = find_method(&u, method).ok_or_else(|| PyKeyError::new_err(method.to_string()))?;
    let pset: PostconditionSet = from_py(py, postconditions)?;
    let spec = RunnerSpec::builtin(Path::new(tests_dir), timeout_ms);
    let outcome = py
        .detach(|| harness::evaluate(&u, &m, &pset, &spec))
        .map_err(value_err)?;
    to_py(py, &outcome)
}

fn parse_scheme(s: &str) -> PyResult<Scheme> {
    match s.to_ascii_uppercase().as_str() {
        "OPERATOR" => Ok(Scheme::Operator),
        "LLM" => Ok(Scheme::Llm),
        _ => Err(PyValueError::new_err(format!("unknown scheme `{s}`"))),
    }
}

/// A (postcondition set x variant) kill matrix.
#[pyclass(frozen)]
struct KillMatrix {
    inner: validate::KillMatrix,
}

#[pymethods]
impl KillMatrix {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(KillMatrix {
            inner: serde_json::from_str(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn task_id(&self) -> String {
        self.inner.task_id.clone()
    }

    #[getter]
    fn set_ids(&self) -> Vec<String> {
        self.inner.set_ids.clone()
    }

    #[getter]
    fn variant_ids(&self) -> Vec<String> {
        self.inner.variant_ids()
    }

    fn values(&self) -> Vec<Vec<i8>> {
        (0..self.inner.set_ids.len()).map(|r| self.inner.row_values(r)).collect()
    }

    fn verdicts(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.verdicts())
    }

    fn comp_at_1(&self) -> f64 {
        metrics::comp_at_1(std::slice::from_ref(&self.inner))
    }

    /// Cross-scheme false discovery rate for sets complete under `scheme`.
    fn fdr(&self, scheme: &str) -> PyResult<Option<f64>> {
        Ok(metrics::cross_scheme_fdr(std::slice::from_ref(&self.inner), parse_scheme(scheme)?))
    }

    /// `spec` is an ablation dict such as {"variant": "BUDGET", "fraction": 0.5, "trials": 20}.
    #[pyo3(signature = (spec, seed = 0))]
    fn ablate(&self, py: Python<'_>, spec: &Bound<'_, PyAny>, seed: u64) -> PyResult<Py<PyAny>> {
        let spec: AblationSpec = from_py(py, spec)?;
        let row = metrics::run_ablation(std::slice::from_ref(&self.inner), &spec, seed).map_err(value_err)?;
        to_py(py, &row)
    }

    fn __repr__(&self) -> String {
        format!(
            "KillMatrix(task_id={:?}, sets={}, variants={})",
            self.inner.task_id,
            self.inner.set_ids.len(),
            self.inner.variants.len()
        )
    }
}

#[pymodule]
fn postcond(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pass_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(gap_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(metric_report, m)?)?;
    m.add_function(wrap_pyfunction!(trigram_embed, m)?)?;
    m.add_function(wrap_pyfunction!(farthest_first_select, m)?)?;
    m.add_function(wrap_pyfunction!(extract_methods, m)?)?;
    m.add_function(wrap_pyfunction!(operator_mutants, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<KillMatrix>()?;
    Ok(())
}
