//! Python bindings for the profiling pipeline.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fingrav_core::binning::{self, GuidanceEntry};
use fingrav_core::phase::{self, DEFAULT_STABILITY_REL};
use fingrav_core::pipeline::{self, ExperimentConfig, ExperimentReport, PhaseSelection};
use fingrav_core::sync::LoiMode;
use fingrav_core::telemetry::{Component, GpuTimestamp, Nanos, Phase, RunId};

fn py_err(e: fingrav_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_phase(s: &str) -> PyResult<Phase> {
    match s {
        "sse" => Ok(Phase::Sse),
        "ssp" => Ok(Phase::Ssp),
        _ => Err(PyValueError::new_err(format!("unknown phase '{s}' (sse, ssp)"))),
    }
}

fn parse_component(s: &str) -> PyResult<Component> {
    Component::ALL
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| PyValueError::new_err(format!("unknown component '{s}' (total, xcd, iod, hbm)")))
}

/// Guidance row for one execution time.
#[pyclass(frozen, get_all, name = "Guidance")]
struct PyGuidance {
    runs: u32,
    loi_density_ns: Nanos,
    margin_rel: f64,
    extrapolated: bool,
}

impl From<GuidanceEntry> for PyGuidance {
    fn from(g: GuidanceEntry) -> Self {
        PyGuidance {
            runs: g.runs,
            loi_density_ns: g.loi_density,
            margin_rel: g.margin_rel,
            extrapolated: g.extrapolated,
        }
    }
}

#[pymethods]
impl PyGuidance {
    fn __repr__(&self) -> String {
        format!(
            "Guidance(runs={}, loi_density_ns={}, margin_rel={}, extrapolated={})",
            self.runs,
            self.loi_density_ns,
            self.margin_rel,
            if self.extrapolated { "True" } else { "False" }
        )
    }
}

/// Result of one experiment.
#[pyclass(frozen, name = "Report")]
struct PyReport {
    inner: ExperimentReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn kernel_id(&self) -> &str {
        &self.inner.kernel_id
    }

    #[getter]
    fn exec_time_ns(&self) -> Nanos {
        self.inner.timing.exec_time_ns
    }

    #[getter]
    fn runs_executed(&self) -> u32 {
        self.inner.runs.executed
    }

    #[getter]
    fn golden_runs(&self) -> u32 {
        self.inner.runs.golden
    }

    #[getter]
    fn ssp_execs_total(&self) -> u32 {
        self.inner.plan.ssp_execs_total
    }

    /// SSE-vs-SSP mean power difference in percent, by component.
    #[getter]
    fn sse_ssp_error(&self) -> BTreeMap<&'static str, f64> {
        self.inner.sse_ssp_error.iter().map(|(c, v)| (c.as_str(), *v)).collect()
    }

    /// `(toi_ns, watts)` points of a stitched profile.
    #[pyo3(signature = (phase = "ssp", component = "total"))]
    fn profile(&self, phase: &str, component: &str) -> PyResult<Vec<(Nanos, f64)>> {
        let p = self
            .inner
            .profile(parse_phase(phase)?, parse_component(component)?)
            .ok_or_else(|| PyValueError::new_err(format!("no {phase} profile in report")))?;
        Ok(p.points.iter().map(|pt| (pt.toi, pt.power)).collect())
    }

    /// Polynomial coefficients (ascending) of a profile fit over TOI / anchor.
    #[pyo3(signature = (phase = "ssp", component = "total"))]
    fn fit_coefficients(&self, phase: &str, component: &str) -> PyResult<Vec<f64>> {
        self.inner
            .fit(parse_phase(phase)?, parse_component(component)?)
            .map(|f| f.coefficients.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no {phase} {component} fit in report")))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(name={:?}, kernel_id={:?}, runs_executed={})",
            self.inner.name, self.inner.kernel_id, self.inner.runs.executed
        )
    }
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    pipeline::PRESETS.to_vec()
}

#[pyfunction]
fn lookup_guidance(exec_time_ns: Nanos) -> PyResult<PyGuidance> {
    binning::lookup_guidance(exec_time_ns).map(Into::into).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (window_ns, exec_time_ns, sse_execs = 4))]
fn compute_ssp_executions(window_ns: Nanos, exec_time_ns: Nanos, sse_execs: u32) -> PyResult<u32> {
    phase::compute_ssp_executions(window_ns, exec_time_ns, sse_execs).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (exec_times_ns, stability_rel = DEFAULT_STABILITY_REL))]
fn detect_warmup_count(exec_times_ns: Vec<Nanos>, stability_rel: f64) -> PyResult<usize> {
    phase::detect_warmup_count(&exec_times_ns, stability_rel).map_err(py_err)
}

/// Run ids of the largest execution-time bin.
#[pyfunction]
fn select_golden_runs(ssp_exec_times_ns: BTreeMap<RunId, Nanos>, margin_rel: f64) -> PyResult<Vec<RunId>> {
    let bins = binning::bin_runs(&ssp_exec_times_ns, margin_rel).map_err(py_err)?;
    Ok(binning::select_golden_runs(&bins).into_iter().collect())
}

/// CPU nanoseconds of a GPU counter value, given the run's anchor read.
#[pyfunction]
#[pyo3(signature = (ticks, t0_ticks, tc_cpu_ns, read_delay_ns, tick_period_ns = 10))]
fn gpu_to_cpu(ticks: i64, t0_ticks: i64, tc_cpu_ns: Nanos, read_delay_ns: Nanos, tick_period_ns: Nanos) -> PyResult<Nanos> {
    let sync = fingrav_core::sync::SyncModel {
        t0_gpu: GpuTimestamp::new(t0_ticks, tick_period_ns),
        tc_cpu: tc_cpu_ns,
        read_delay_est: read_delay_ns,
    };
    fingrav_core::sync::gpu_to_cpu(&sync, GpuTimestamp::new(ticks, tick_period_ns)).map_err(py_err)
}

/// Runs a simulated experiment from a preset name or a TOML config string.
#[pyfunction]
#[pyo3(signature = (preset = None, config_toml = None, seed = None, runs = None, phase = None, strict_loi = None))]
fn run_experiment(
    py: Python<'_>,
    preset: Option<&str>,
    config_toml: Option<&str>,
    seed: Option<u64>,
    runs: Option<u32>,
    phase: Option<&str>,
    strict_loi: Option<bool>,
) -> PyResult<PyReport> {
    let mut cfg = match (preset, config_toml) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("give preset or config_toml, not both")),
        (Some(name), None) => pipeline::preset(name).map_err(py_err)?,
        (None, Some(text)) => ExperimentConfig::from_toml_str(text).map_err(py_err)?,
        (None, None) => return Err(PyValueError::new_err("give preset or config_toml")),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if runs.is_some() {
        cfg.runs = runs;
    }
    if let Some(p) = phase {
        cfg.phase = p.parse::<PhaseSelection>().map_err(py_err)?;
    }
    if let Some(strict) = strict_loi {
        cfg.loi.mode = if strict { LoiMode::Strict } else { LoiMode::Lenient };
    }
    let exp = py.detach(|| pipeline::run_experiment(&cfg)).map_err(py_err)?;
    Ok(PyReport { inner: exp.report })
}

#[pymodule]
fn fingrav(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGuidance>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(lookup_guidance, m)?)?;
    m.add_function(wrap_pyfunction!(compute_ssp_executions, m)?)?;
    m.add_function(wrap_pyfunction!(detect_warmup_count, m)?)?;
    m.add_function(wrap_pyfunction!(select_golden_runs, m)?)?;
    m.add_function(wrap_pyfunction!(gpu_to_cpu, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("REPORT_VERSION", pipeline::REPORT_VERSION)?;
    Ok(())
}
