//! Python bindings: scenario configuration, step-by-step simulation, whole
//! runs and the convergence studies.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vpic_control::driver::{self, ConvergenceTable, DiagnosticRecord, RunOutput};
use vpic_control::scenarios::{self, InitMode, ScenarioConfig, PRESETS};
use vpic_control::{io, pusher, ControlOutput, ControlVariant, Order};

create_exception!(vpic, VpicError, PyException);

fn err(e: vpic_control::Error) -> PyErr {
    VpicError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = vpic_control::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn order(n: u8) -> PyResult<Order> {
    Order::from_int(n).ok_or_else(|| VpicError::new_err(format!("order must be 1 or 2, got {n}")))
}

/// Scenario configuration. Mutate the exposed fields, then pass it to
/// `Simulation`, `run` or a convergence study.
#[pyclass(name = "Config", module = "vpic", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenarios::preset(name).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ScenarioConfig::from_toml_str(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ScenarioConfig::load(&path).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    fn n_steps(&self) -> usize {
        self.inner.n_steps()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn n_particles(&self) -> usize {
        self.inner.n_particles
    }

    #[setter]
    fn set_n_particles(&mut self, v: usize) {
        self.inner.n_particles = v;
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }

    #[setter]
    fn set_h(&mut self, v: f64) {
        self.inner.h = v;
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.inner.t_final
    }

    #[setter]
    fn set_t_final(&mut self, v: f64) {
        self.inner.t_final = v;
    }

    #[getter]
    fn field_grid(&self) -> (usize, usize) {
        (self.inner.field_grid[0], self.inner.field_grid[1])
    }

    #[setter]
    fn set_field_grid(&mut self, v: (usize, usize)) {
        self.inner.field_grid = [v.0, v.1];
    }

    /// `dto`, `continuous`, `otd`, `constant` or `off`.
    #[getter]
    fn controller(&self) -> String {
        format!("{:?}", self.inner.control.variant).to_lowercase()
    }

    #[setter]
    fn set_controller(&mut self, v: &str) -> PyResult<()> {
        self.inner.control.variant = parse::<ControlVariant>(v)?;
        Ok(())
    }

    #[getter]
    fn order(&self) -> u8 {
        if self.inner.order == Order::First {
            1
        } else {
            2
        }
    }

    #[setter]
    fn set_order(&mut self, v: u8) -> PyResult<()> {
        self.inner.order = order(v)?;
        Ok(())
    }

    #[getter]
    fn init_mode(&self) -> String {
        format!("{:?}", self.inner.init_mode).to_lowercase()
    }

    #[setter]
    fn set_init_mode(&mut self, v: &str) -> PyResult<()> {
        self.inner.init_mode = parse::<InitMode>(v)?;
        Ok(())
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.control.gamma
    }

    #[setter]
    fn set_gamma(&mut self, v: f64) {
        self.inner.control.gamma = v;
    }

    #[getter]
    fn max_b(&self) -> f64 {
        self.inner.control.max_b
    }

    #[setter]
    fn set_max_b(&mut self, v: f64) {
        self.inner.control.max_b = v;
    }

    #[getter]
    fn activation_time(&self) -> f64 {
        self.inner.control.activation_time
    }

    #[setter]
    fn set_activation_time(&mut self, v: f64) {
        self.inner.control.activation_time = v;
    }

    #[getter]
    fn constant_b(&self) -> f64 {
        self.inner.constant_b
    }

    #[setter]
    fn set_constant_b(&mut self, v: f64) {
        self.inner.constant_b = v;
    }

    #[getter]
    fn diagnostics_every(&self) -> usize {
        self.inner.output.diagnostics_every
    }

    #[setter]
    fn set_diagnostics_every(&mut self, v: usize) {
        self.inner.output.diagnostics_every = v;
    }

    #[getter]
    fn snapshot_times(&self) -> Vec<f64> {
        self.inner.output.snapshot_times.clone()
    }

    #[setter]
    fn set_snapshot_times(&mut self, v: Vec<f64>) {
        self.inner.output.snapshot_times = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(name={:?}, n_particles={}, h={}, t_final={}, controller={})",
            self.inner.name,
            self.inner.n_particles,
            self.inner.h,
            self.inner.t_final,
            self.controller()
        )
    }
}

fn record_dict<'py>(py: Python<'py>, r: &DiagnosticRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", r.step)?;
    d.set_item("t", r.t)?;
    d.set_item("boundary_mass", r.boundary_mass)?;
    d.set_item("interior_mass", r.interior_mass)?;
    d.set_item("total_mass", r.total_mass)?;
    d.set_item("thermal_energy", r.thermal_energy)?;
    d.set_item("b", r.b.clone())?;
    d.set_item("cost", r.cost.clone())?;
    Ok(d)
}

fn control_dict<'py>(py: Python<'py>, c: &ControlOutput) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("b", c.b.clone())?;
    d.set_item("raw", c.raw.clone())?;
    d.set_item("clamped", c.clamped.clone())?;
    Ok(d)
}

fn pairs(v: &[[f64; 2]]) -> Vec<(f64, f64)> {
    v.iter().map(|p| (p[0], p[1])).collect()
}

/// A simulation advanced one step at a time.
#[pyclass(name = "Simulation", module = "vpic")]
struct PySimulation {
    inner: driver::Simulation,
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(py: Python<'_>, config: &PyConfig) -> PyResult<Self> {
        let c = config.inner.clone();
        let inner = py.detach(move || driver::Simulation::new(c)).map_err(err)?;
        Ok(Self { inner })
    }

    /// Advances one step; returns the applied control as a dict with keys
    /// `b`, `raw`, `clamped`, plus `cost` when requested.
    #[pyo3(signature = (cost = false))]
    fn step<'py>(&mut self, py: Python<'py>, cost: bool) -> PyResult<Bound<'py, PyDict>> {
        let sim = &mut self.inner;
        let (out, c) = py.detach(|| sim.step(cost)).map_err(err)?;
        let d = control_dict(py, &out)?;
        if let Some(c) = c {
            d.set_item("cost", c)?;
        }
        Ok(d)
    }

    fn advance(&mut self, py: Python<'_>, steps: usize) -> PyResult<()> {
        let sim = &mut self.inner;
        py.detach(|| sim.advance(steps)).map_err(err)
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.inner.step_index()
    }

    #[getter]
    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }

    #[getter]
    fn n_particles(&self) -> usize {
        self.inner.ensemble.len()
    }

    #[getter]
    fn control_b(&self) -> Vec<f64> {
        self.inner.control.b.clone()
    }

    fn positions(&self) -> Vec<(f64, f64)> {
        pairs(&self.inner.ensemble.x)
    }

    fn velocities(&self) -> Vec<(f64, f64)> {
        pairs(&self.inner.ensemble.v)
    }

    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        record_dict(py, &self.inner.diagnostics(Vec::new()))
    }

    /// Node fields `rho`, `phi`, `ex`, `ey`, `ux`, `uy` as flat row-major
    /// lists, with `nx`, `ny` and `t`.
    fn snapshot<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.snapshot().map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("t", s.t)?;
        d.set_item("nx", s.nx)?;
        d.set_item("ny", s.ny)?;
        for (name, values) in s.fields {
            d.set_item(name, values)?;
        }
        Ok(d)
    }
}

fn output_dict<'py>(py: Python<'py>, out: &RunOutput) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let series = out.series.iter().map(|r| record_dict(py, r)).collect::<PyResult<Vec<_>>>()?;
    d.set_item("series", series)?;
    let trace = out
        .control_trace
        .iter()
        .map(|r| {
            let c = control_dict(py, &r.output)?;
            c.set_item("step", r.step)?;
            c.set_item("t", r.t)?;
            Ok(c)
        })
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("control_trace", trace)?;
    let s = &out.summary;
    let summary = PyDict::new(py);
    summary.set_item("steps", s.steps)?;
    summary.set_item("final_time", s.final_time)?;
    summary.set_item("particles", s.particles)?;
    summary.set_item("boundary_mass", s.boundary_mass)?;
    summary.set_item("thermal_energy", s.thermal_energy)?;
    summary.set_item("wall_clock_seconds", s.wall_clock_seconds)?;
    d.set_item("summary", summary)?;
    Ok(d)
}

/// Runs a scenario to its final time. Artifacts are written when `out` is
/// given.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn run<'py>(py: Python<'py>, config: &PyConfig, out: Option<std::path::PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let c = config.inner.clone();
    let output = py
        .detach(|| {
            let o = driver::run(&c)?;
            if let Some(dir) = &out {
                io::write_run(&o, &c, dir)?;
            }
            Ok::<_, vpic_control::Error>(o)
        })
        .map_err(err)?;
    output_dict(py, &output)
}

fn table(t: ConvergenceTable) -> (Vec<usize>, Vec<f64>, f64) {
    (
        t.rows.iter().map(|r| r.size).collect(),
        t.rows.iter().map(|r| r.error).collect(),
        t.slope,
    )
}

/// `(steps, errors, slope)` of the temporal self-convergence study.
#[pyfunction]
#[pyo3(signature = (config, order = 2))]
fn converge_time(py: Python<'_>, config: &PyConfig, order: u8) -> PyResult<(Vec<usize>, Vec<f64>, f64)> {
    let o = self::order(order)?;
    let c = config.inner.clone();
    py.detach(|| driver::convergence_study_time(&c, o)).map(table).map_err(err)
}

/// `(particles, errors, slope)` against the large reference run.
#[pyfunction]
#[pyo3(signature = (config, init = "stochastic"))]
fn converge_particles(py: Python<'_>, config: &PyConfig, init: &str) -> PyResult<(Vec<usize>, Vec<f64>, f64)> {
    let mode = parse::<InitMode>(init)?;
    let c = config.inner.clone();
    py.detach(|| driver::convergence_study_particles(&c, mode)).map(table).map_err(err)
}

/// Closed-form solution of `v' = v + h (v' x B z) + h E`.
#[pyfunction]
fn implicit_velocity_solve(v: (f64, f64), e: (f64, f64), b: f64, h: f64) -> (f64, f64) {
    let r = pusher::implicit_velocity_solve([v.0, v.1], [e.0, e.1], b, h);
    (r[0], r[1])
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESETS.to_vec()
}

#[pymodule]
pub fn vpic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VpicError", m.py().get_type::<VpicError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(converge_time, m)?)?;
    m.add_function(wrap_pyfunction!(converge_particles, m)?)?;
    m.add_function(wrap_pyfunction!(implicit_velocity_solve, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
