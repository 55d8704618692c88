//! Python module `orbit5gc`: scenario runs, trace verification, the
//! signaling codec and the latency and handshake models.

use orbit5gc_core::harness::trace::format_hash;
use orbit5gc_core::harness::{self, verify_trace_text};
use orbit5gc_core::nas;
use orbit5gc_core::satlink::{compare_fiber_vs_leo, OrbitGeometry, DEFAULT_FIBER_STRETCH};
use orbit5gc_core::transport::{self, HandshakeScheme, DEFAULT_BUS_BPS};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Turns any serializable value into plain Python objects via JSON.
fn to_py<'py, T: Serialize + ?Sized>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "NasMessage", eq, frozen, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyNasMessage(nas::NasMessage);

#[pymethods]
impl PyNasMessage {
    /// Decodes exactly one encoded message.
    #[staticmethod]
    fn decode(data: &[u8]) -> PyResult<Self> {
        nas::decode(data).map(Self).map_err(value_error)
    }

    /// Parses the canonical text form, e.g. `RegistrationComplete{}`.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        text.parse().map(Self).map_err(value_error)
    }

    fn encode<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.0.encode().map_err(value_error)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[getter]
    fn message_type(&self) -> &'static str {
        self.0.message_type().name()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("NasMessage({})", self.0)
    }
}

#[pyclass(name = "Scenario", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario(harness::Scenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        harness::Scenario::load(path).map(Self).map_err(value_error)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        harness::Scenario::from_toml_str(text)
            .map(Self)
            .map_err(value_error)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn duration_us(&self) -> u64 {
        self.0.duration_us
    }

    #[getter]
    fn metrics_ticks(&self) -> u64 {
        self.0.metrics_ticks()
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self(self.0.clone().with_seed(seed))
    }

    /// Runs the scenario to completion. The GIL is released meanwhile.
    fn run(&self, py: Python<'_>) -> PyRunOutput {
        let scenario = self.0.clone();
        PyRunOutput(py.detach(move || harness::run_scenario(scenario)))
    }
}

#[pyclass(name = "RunOutput", frozen)]
struct PyRunOutput(harness::RunOutput);

#[pymethods]
impl PyRunOutput {
    /// The JSON Lines trace.
    #[getter]
    fn trace(&self) -> String {
        String::from_utf8_lossy(self.0.trace.as_bytes()).into_owned()
    }

    #[getter]
    fn trace_hash(&self) -> String {
        format_hash(self.0.trace.hash())
    }

    #[getter]
    fn metrics_csv(&self) -> String {
        self.0.metrics_csv()
    }

    #[getter]
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.summary)
    }

    fn write_to_dir(&self, dir: &str) -> PyResult<()> {
        self.0
            .write_to_dir(std::path::Path::new(dir))
            .map_err(value_error)
    }

    fn verify<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        verify_trace(py, &self.trace())
    }
}

/// Checks a JSON Lines trace; returns a list of violation dicts.
#[pyfunction]
fn verify_trace<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let violations = verify_trace_text(text).map_err(value_error)?;
    to_py(py, &violations)
}

#[pyfunction]
fn slant_range_km(altitude_km: f64, elevation_deg: f64) -> PyResult<f64> {
    Ok(OrbitGeometry::new(altitude_km, elevation_deg)
        .map_err(value_error)?
        .slant_range_km())
}

#[pyfunction]
#[pyo3(signature = (path_km, altitude_km, elevation_deg, hops = 2, stretch = DEFAULT_FIBER_STRETCH))]
fn compare_latency<'py>(
    py: Python<'py>,
    path_km: f64,
    altitude_km: f64,
    elevation_deg: f64,
    hops: u32,
    stretch: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let geom = OrbitGeometry::new(altitude_km, elevation_deg).map_err(value_error)?;
    let c = compare_fiber_vs_leo(path_km, &geom, hops, stretch).map_err(value_error)?;
    to_py(py, &c)
}

fn scheme(name: &str) -> PyResult<HandshakeScheme> {
    match name {
        "one_rtt" => Ok(HandshakeScheme::one_rtt()),
        "two_rtt" => Ok(HandshakeScheme::two_rtt()),
        other => Err(PyValueError::new_err(format!(
            "unknown scheme {other:?}, expected one_rtt or two_rtt"
        ))),
    }
}

#[pyfunction]
#[pyo3(signature = (scheme_name, delay_us, proc_us, bus_bps = DEFAULT_BUS_BPS))]
fn run_handshake<'py>(
    py: Python<'py>,
    scheme_name: &str,
    delay_us: u64,
    proc_us: f64,
    bus_bps: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let t = transport::run_handshake(
        &scheme(scheme_name)?,
        &transport::bus_profile(delay_us, bus_bps),
        proc_us,
    )
    .map_err(value_error)?;
    to_py(py, &t)
}

#[pyfunction]
#[pyo3(signature = (bus_bps = DEFAULT_BUS_BPS))]
fn calibrate_table1<'py>(py: Python<'py>, bus_bps: u64) -> PyResult<Bound<'py, PyAny>> {
    let cal = transport::calibrate_table1(bus_bps).map_err(value_error)?;
    let one = transport::run_calibrated(&HandshakeScheme::one_rtt(), &cal).map_err(value_error)?;
    let two = transport::run_calibrated(&HandshakeScheme::two_rtt(), &cal).map_err(value_error)?;
    let report = serde_json::json!({
        "calibration": cal,
        "one_rtt": one,
        "two_rtt": two,
        "ratio": two.connection_established_ms / one.connection_established_ms,
    });
    to_py(py, &report)
}

#[pymodule]
fn orbit5gc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNasMessage>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunOutput>()?;
    m.add_function(wrap_pyfunction!(verify_trace, m)?)?;
    m.add_function(wrap_pyfunction!(slant_range_km, m)?)?;
    m.add_function(wrap_pyfunction!(compare_latency, m)?)?;
    m.add_function(wrap_pyfunction!(run_handshake, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_table1, m)?)?;
    Ok(())
}
