//! Python bindings. Structured values (specs, properties, verdicts) cross
//! the boundary as plain dicts and lists through their JSON form.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};
use serde::de::DeserializeOwned;
use serde::Serialize;
use summar_guard_core::dsl::{self, RunOptions};
use summar_guard_core::engine::QuerySpec;
use summar_guard_core::graph::Hierarchy;
use summar_guard_core::model::{read_csv, read_csv_path, AttrSet, Category, RawCsv};
use summar_guard_core::property::{AggFn, PropagationMode, PropertyOverride};
use summar_guard_core::session::{self, Binding};

create_exception!(summar_guard_py, SummarGuardError, PyException);

fn err(e: impl ToString) -> PyErr {
    SummarGuardError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(err)
}

fn parse_mode(mode: &str) -> PyResult<PropagationMode> {
    let m = match mode.to_ascii_lowercase().as_str() {
        "gsummarizable" => "gsum".to_string(),
        "summarizable" => "sum".to_string(),
        other => other.to_string(),
    };
    serde_json::from_value(serde_json::Value::String(m)).map_err(|_| err(format!("unknown mode `{mode}`")))
}

fn parse_func(func: &str) -> PyResult<AggFn> {
    serde_json::from_value(serde_json::Value::String(func.to_ascii_uppercase())).map_err(|_| err(format!("unknown function `{func}`")))
}

fn parse_category(c: &str) -> PyResult<Category> {
    serde_json::from_value(serde_json::Value::String(c.to_ascii_uppercase())).map_err(|_| err(format!("unknown category `{c}`")))
}

/// CSV from a path, or inline text when `text=True`.
fn load(source: &str, text: bool) -> PyResult<RawCsv> {
    if text {
        read_csv(source.as_bytes()).map_err(err)
    } else {
        read_csv_path(&PathBuf::from(source)).map_err(err)
    }
}

#[pyclass(name = "Session", module = "summar_guard_py")]
struct PySession {
    inner: session::Session,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (mode = "sum"))]
    fn new(mode: &str) -> PyResult<Self> {
        Ok(PySession { inner: session::Session::new(parse_mode(mode)?) })
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.mode = parse_mode(mode)?;
        Ok(())
    }

    #[getter]
    fn focus(&self) -> Option<String> {
        self.inner.focus.clone()
    }

    #[getter]
    fn nodes(&self) -> Vec<String> {
        self.inner.order.clone()
    }

    /// `hierarchy` is a list of chains, lowest level first.
    #[pyo3(signature = (name, source, hierarchy, text = false))]
    fn load_dimension(&mut self, name: &str, source: &str, hierarchy: Vec<Vec<String>>, text: bool) -> PyResult<usize> {
        let raw = load(source, text)?;
        let d = self.inner.add_dimension(name, &raw, &Hierarchy::from_chains(&hierarchy)).map_err(err)?;
        Ok(d.dropped_duplicates)
    }

    /// `dims` maps dimension names to fact attributes; `measures` maps
    /// measure names to NUM, STAT or DESC; `properties` maps measures to
    /// dicts with optional `x_d` and `x_f` lists.
    #[pyo3(signature = (name, source, dims, measures, properties = None, text = false))]
    fn load_fact(
        &mut self,
        name: &str,
        source: &str,
        dims: Vec<(String, Vec<String>)>,
        measures: Vec<(String, String)>,
        properties: Option<&Bound<'_, PyDict>>,
        text: bool,
    ) -> PyResult<()> {
        let raw = load(source, text)?;
        let dims: Vec<Binding> = dims.into_iter().map(|(dimension, attributes)| Binding { dimension, attributes }).collect();
        let measures = measures.into_iter().map(|(m, c)| Ok((m, parse_category(&c)?))).collect::<PyResult<Vec<_>>>()?;
        let ovs: BTreeMap<String, PropertyOverride> = match properties {
            Some(p) => from_py(p.as_any())?,
            None => BTreeMap::new(),
        };
        self.inner.add_fact(name, &raw, &dims, &measures, &ovs).map_err(err)?;
        Ok(())
    }

    #[pyo3(signature = (table, attribute, x_d = None, x_f = None))]
    fn set_property(&mut self, table: &str, attribute: &str, x_d: Option<Vec<String>>, x_f: Option<Vec<String>>) -> PyResult<()> {
        let ov = PropertyOverride {
            x_d: x_d.map(|v| v.into_iter().collect()),
            x_f: x_f.map(|v| v.into_iter().collect()),
        };
        self.inner.set_property(table, attribute, ov).map_err(err)
    }

    /// Runs a query given as a dict (or JSON text) such as
    /// `{"op": "aggregate", "func": "SUM", "attribute": "Pop", "group_by": ["State"]}`.
    /// Returns `{"node": ..., "verdict": ...}`; `node` is None when rejected.
    #[pyo3(signature = (spec, inputs = None, name = None, force = false))]
    fn query<'py>(
        &mut self,
        py: Python<'py>,
        spec: &Bound<'py, PyAny>,
        inputs: Option<Vec<String>>,
        name: Option<&str>,
        force: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec: QuerySpec = from_py(spec)?;
        let inputs = match inputs {
            Some(v) if !v.is_empty() => v,
            _ => vec![self.inner.focus.clone().ok_or_else(|| err("no inputs and no focus"))?],
        };
        let applied = self.inner.apply(&spec, &inputs, name, force).map_err(err)?;
        to_py(py, &applied)
    }

    #[pyo3(signature = (func, attribute, group_by, input = None, name = None, alias = None, force = false))]
    #[allow(clippy::too_many_arguments)]
    fn aggregate<'py>(
        &mut self,
        py: Python<'py>,
        func: &str,
        attribute: &str,
        group_by: Vec<String>,
        input: Option<String>,
        name: Option<&str>,
        alias: Option<String>,
        force: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = QuerySpec::Aggregate {
            func: parse_func(func)?,
            attribute: attribute.to_string(),
            group_by: group_by.into_iter().collect::<AttrSet>(),
            alias,
        };
        let spec = to_py(py, &spec)?;
        self.query(py, &spec, input.map(|i| vec![i]), name, force)
    }

    /// Column names and rows as strings; nulls are None.
    #[pyo3(signature = (node, offset = 0, limit = None))]
    fn rows(&self, node: &str, offset: usize, limit: Option<usize>) -> PyResult<(Vec<String>, Vec<Vec<Option<String>>>)> {
        let t = self.inner.table(node).map_err(err)?;
        let rows = t
            .rows
            .iter()
            .skip(offset)
            .take(limit.unwrap_or(usize::MAX))
            .map(|r| r.iter().map(|v| if v.is_null() { None } else { Some(v.to_string()) }).collect())
            .collect();
        Ok((t.schema.names(), rows))
    }

    #[pyo3(signature = (node, attribute = None))]
    fn properties<'py>(&self, py: Python<'py>, node: &str, attribute: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let t = self.inner.table(node).map_err(err)?;
        let props: Vec<_> = t.properties.iter().filter(|p| attribute.is_none_or(|a| p.attribute == a)).collect();
        to_py(py, &props)
    }

    fn explain(&self, node: &str, attribute: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.explain(node, attribute).map_err(err)?.lines)
    }

    fn backtrack(&mut self, node: &str) -> PyResult<String> {
        self.inner.backtrack(node).map_err(err)
    }

    fn save_view(&mut self, name: &str, node: &str) -> PyResult<()> {
        self.inner.save_view(name, node).map_err(err)
    }

    #[pyo3(signature = (dimension, format = "json"))]
    fn graph<'py>(&self, py: Python<'py>, dimension: &str, format: &str) -> PyResult<Bound<'py, PyAny>> {
        let g = self.inner.graph(dimension).map_err(err)?;
        match format {
            "json" => to_py(py, &*g),
            "dot" => Ok(PyString::new(py, &g.to_dot()).into_any()),
            other => Err(err(format!("unknown format `{other}`"))),
        }
    }

    fn export(&self, node: &str, path: PathBuf) -> PyResult<()> {
        self.inner.export(node, &path).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySession { inner: serde_json::from_str(text).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Session(mode={}, nodes={}, focus={:?})", self.inner.mode, self.inner.order.len(), self.inner.focus)
    }
}

/// Runs a session script and returns `(transcript, exit_code)`.
#[pyfunction]
#[pyo3(signature = (text, mode = "sum", base_dir = None, allow_reject = false, json = false))]
fn run_script(text: &str, mode: &str, base_dir: Option<PathBuf>, allow_reject: bool, json: bool) -> PyResult<(String, i32)> {
    let opts = RunOptions { mode: parse_mode(mode)?, allow_reject, json, base_dir: base_dir.unwrap_or_else(|| PathBuf::from(".")) };
    Ok(dsl::run_script(text, opts))
}

#[pymodule]
fn summar_guard_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(run_script, m)?)?;
    m.add("SummarGuardError", m.py().get_type::<SummarGuardError>())?;
    Ok(())
}
