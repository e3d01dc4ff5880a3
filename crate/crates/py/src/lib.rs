//! Python bindings: run replays, step live sessions and ingest scans from
//! Python. Rich values cross the boundary as plain dicts and lists.

use std::path::Path;

use limbswap_core::cli::load_trace_or_script;
use limbswap_core::pose::{HandPoseFrame, RawPoseFrame};
use limbswap_core::prosthesis::{catalog_dir_from_env, load_spec_file, validate_spec, Catalog, ProsthesisSpec};
use limbswap_core::scan::{load_ply, scan_to_spec, ScanOptions};
use limbswap_core::session::{digest_hex, frames_to_bytes, run_replay, PoseInput, Session, SessionConfig};
use limbswap_core::tasks::TaskConfig;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn open_catalog() -> PyResult<Catalog> {
    let dir = catalog_dir_from_env();
    Catalog::load_dir(&dir).map_err(|e| PyOSError::new_err(e.to_string()))
}

/// A catalog id, or a path to a `.prosthesis.json` file.
fn resolve_prosthesis(arg: &str) -> PyResult<ProsthesisSpec> {
    if arg.ends_with(".json") {
        return load_spec_file(Path::new(arg)).map_err(value_err);
    }
    open_catalog()?
        .get(arg)
        .cloned()
        .ok_or_else(|| PyValueError::new_err(format!("unknown prosthesis `{arg}`")))
}

fn task_config(py: Python<'_>, task: &str, config: Option<&Bound<'_, PyAny>>) -> PyResult<TaskConfig> {
    match config {
        None => TaskConfig::default_for(task).map_err(value_err),
        Some(obj) => {
            let doc: serde_json::Value = from_py(py, obj)?;
            TaskConfig::from_json(task, &doc).map_err(value_err)
        }
    }
}

/// Summaries of the catalog prostheses.
#[pyfunction]
fn catalog(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &open_catalog()?.summaries())
}

/// Violations found in a spec file; an empty list means valid.
#[pyfunction]
fn validate(path: &str) -> PyResult<Vec<String>> {
    let spec = load_spec_file(Path::new(path)).map_err(value_err)?;
    Ok(validate_spec(&spec).violations.iter().map(|v| v.to_string()).collect())
}

/// Replays a pose trace (or generator script) and returns the task metrics.
/// With `frames_out`, the frame log is written there too.
#[pyfunction]
#[pyo3(signature = (trace, prosthesis, task, task_config=None, frames_out=None))]
fn simulate(
    py: Python<'_>,
    trace: &str,
    prosthesis: &str,
    task: &str,
    task_config: Option<&Bound<'_, PyAny>>,
    frames_out: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let poses = load_trace_or_script(Path::new(trace)).map_err(PyOSError::new_err)?;
    let spec = resolve_prosthesis(prosthesis)?;
    let config = SessionConfig::new(spec.id.clone(), self::task_config(py, task, task_config)?);
    let out = py.detach(|| run_replay(&poses, &config, &spec)).map_err(value_err)?;
    if let Some(path) = frames_out {
        std::fs::write(path, frames_to_bytes(&out.frames)).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
    }
    to_py(py, &out.metrics)
}

/// Turns an ASCII PLY point cloud into a prosthesis spec dict.
#[pyfunction]
#[pyo3(signature = (ply_path, id, voxel=0.02))]
fn ingest_scan(py: Python<'_>, ply_path: &str, id: &str, voxel: f64) -> PyResult<Py<PyAny>> {
    let bytes = std::fs::read(ply_path).map_err(|e| PyOSError::new_err(format!("{ply_path}: {e}")))?;
    let cloud = load_ply(&bytes, ply_path).map_err(value_err)?;
    let options = ScanOptions {
        voxel,
        ..ScanOptions::default()
    };
    to_py(py, &scan_to_spec(&cloud, id, &options).map_err(value_err)?)
}

/// The neutral open hand at time `t`, as a pose dict.
#[pyfunction]
#[pyo3(signature = (t=0.0))]
fn neutral_pose(py: Python<'_>, t: f64) -> PyResult<Py<PyAny>> {
    to_py(py, &HandPoseFrame::neutral().with_timestamp(t).to_raw())
}

/// A live session stepped one engine tick at a time.
#[pyclass(name = "Session", module = "limbswap")]
struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (prosthesis, task, task_config=None))]
    fn new(py: Python<'_>, prosthesis: &str, task: &str, task_config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let spec = resolve_prosthesis(prosthesis)?;
        let config = SessionConfig::new(spec.id.clone(), self::task_config(py, task, task_config)?);
        Ok(Self {
            inner: Session::with_spec(config, spec).map_err(value_err)?,
        })
    }

    /// Advances one tick with an optional pose dict; returns the frame dict
    /// on output ticks, else `None`. Malformed poses become dropped-input
    /// events rather than exceptions.
    #[pyo3(signature = (pose=None))]
    fn step(&mut self, py: Python<'_>, pose: Option<&Bound<'_, PyAny>>) -> PyResult<Option<Py<PyAny>>> {
        let input = pose.map(|p| from_py::<RawPoseFrame>(py, p)).transpose()?;
        match self.inner.step(input.map(PoseInput::Raw)) {
            Some(frame) => to_py(py, &frame).map(Some),
            None => Ok(None),
        }
    }

    #[getter]
    fn tick(&self) -> u64 {
        self.inner.state.tick
    }

    /// Hex digest of the current state.
    #[getter]
    fn digest(&self) -> String {
        digest_hex(self.inner.hash())
    }

    fn metrics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.metrics())
    }

    fn state(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.state)
    }

    fn __repr__(&self) -> String {
        format!(
            "Session(prosthesis={:?}, task={:?}, tick={})",
            self.inner.spec.id,
            self.inner.config.task.id(),
            self.inner.state.tick
        )
    }
}

#[pymodule]
fn limbswap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PROTOCOL_VERSION", limbswap_core::protocol::PROTOCOL_VERSION)?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ingest_scan, m)?)?;
    m.add_function(wrap_pyfunction!(neutral_pose, m)?)?;
    m.add_class::<PySession>()?;
    Ok(())
}
