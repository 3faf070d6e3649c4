//! Python bindings. Results cross the boundary as JSON text so Python sees
//! plain dicts and lists after `json.loads`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::json;

use semflow_core::engine;
use semflow_core::plan::json::plan_document;
use semflow_core::plan::{parse_plan, serialize_plan};

/// An engine opened from a configuration file.
#[pyclass(unsendable)]
struct Engine {
    inner: engine::Engine,
}

#[pymethods]
impl Engine {
    #[new]
    fn new(config: PathBuf) -> PyResult<Self> {
        let inner = engine::Engine::from_path(&config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Engine { inner })
    }

    /// Profiles all datasets; returns their names.
    fn profile(&self) -> PyResult<Vec<String>> {
        let outcomes = self.inner.profile().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(outcomes
            .iter()
            .flat_map(|o| std::iter::once(o.profile.name.clone()).chain(o.derived.iter().map(|d| d.name.clone())))
            .collect())
    }

    /// Answers a question. Returns JSON with `task_id`, `iterations`,
    /// `plan` and `result`; a failed task raises RuntimeError carrying the
    /// failure report.
    #[pyo3(signature = (query, max_iterations=None))]
    fn ask(&self, query: &str, max_iterations: Option<u32>) -> PyResult<String> {
        self.inner.ensure_profiled().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        match self.inner.ask(query, max_iterations) {
            Ok(a) => Ok(json!({
                "task_id": a.task_id,
                "iterations": a.iterations,
                "plan": plan_document(&a.physical.plan),
                "result": a.table.to_json(),
                "cost": a.execution.total_cost,
            })
            .to_string()),
            Err(report) => Err(PyRuntimeError::new_err(report.to_json().to_string())),
        }
    }

    /// Validates, optimizes (unless disabled) and executes a plan document.
    #[pyo3(signature = (plan, optimize=true))]
    fn run_plan(&self, plan: &str, optimize: bool) -> PyResult<String> {
        let plan = parse_plan(plan).map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.inner.ensure_profiled().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let run = self.inner.run_plan(&plan, optimize).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(json!({"plan": plan_document(&run.physical.plan), "result": run.table.to_json()}).to_string())
    }
}

/// Canonical compact form of a plan document.
#[pyfunction]
fn normalize_plan(text: &str) -> PyResult<String> {
    parse_plan(text).map(|p| serialize_plan(&p)).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn semflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(normalize_plan, m)?)?;
    Ok(())
}
