//! Python bindings. Structured results come back as plain dicts and lists.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use epi_volterra::abm::simulate_replication;
use epi_volterra::analysis;
use epi_volterra::config::ExperimentConfig;
use epi_volterra::harness;
use epi_volterra::limit_solver::{self, LimitSolution};
use epi_volterra::pde::{density_from_solution, GridSpec};
use epi_volterra::{Continuity, Error, InfectivityLaw, LifetimeDistribution};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::ConfigInvalid(_) | Error::Parse { .. } => PyValueError::new_err(err.to_string()),
        Error::Io { .. } => PyOSError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

/// Round-trip through JSON into Python objects.
fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Distribution of the infectious period.
#[pyclass(name = "Lifetime", frozen)]
struct PyLifetime(LifetimeDistribution);

#[pymethods]
impl PyLifetime {
    #[staticmethod]
    fn exponential(rate: f64) -> PyResult<Self> {
        LifetimeDistribution::exponential(rate).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn deterministic(t_i: f64) -> PyResult<Self> {
        LifetimeDistribution::deterministic(t_i).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn gamma(shape: f64, scale: f64) -> PyResult<Self> {
        LifetimeDistribution::gamma(shape, scale).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        from_json(text).map(Self)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("distribution serializes")
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn cdf(&self, x: f64) -> f64 {
        self.0.cdf(x)
    }

    fn survival(&self, x: f64) -> f64 {
        self.0.survival(x)
    }

    fn conditional_remaining_survival(&self, age: f64, t: f64) -> PyResult<f64> {
        self.0.conditional_remaining_survival(age, t).map_err(to_py)
    }

    fn equilibrium_cdf(&self, x: f64) -> PyResult<f64> {
        self.0.equilibrium_cdf(x).map_err(to_py)
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.0.sample(&mut rng)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Lifetime({})", self.to_json())
    }
}

/// Law of the random infectivity curve.
#[pyclass(name = "Law", frozen)]
struct PyLaw(InfectivityLaw);

#[pymethods]
impl PyLaw {
    #[staticmethod]
    fn constant_rate(rate: f64, period: &PyLifetime) -> PyResult<Self> {
        InfectivityLaw::constant_rate(rate, period.0.clone()).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        from_json(text).map(Self)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("law serializes")
    }

    fn period(&self) -> PyLifetime {
        PyLifetime(self.0.period().clone())
    }

    fn lambda_star(&self) -> f64 {
        self.0.lambda_star()
    }

    fn mean_infectivity(&self, t: f64) -> f64 {
        self.0.mean_infectivity(t)
    }

    fn r0(&self) -> f64 {
        analysis::r0(&self.0)
    }

    /// `I*`, `R0` and the tabulated equilibrium age law and density.
    fn sis_equilibrium<'py>(&self, py: Python<'py>, step: f64) -> PyResult<Bound<'py, PyAny>> {
        let rep = analysis::sis_equilibrium(&self.0, step).map_err(to_py)?;
        to_object(py, &rep)
    }
}

#[pyclass(name = "Config")]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_path(path: std::path::PathBuf) -> PyResult<Self> {
        ExperimentConfig::from_path(&path).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_json(text).map(Self).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.horizon
    }

    #[getter]
    fn law(&self) -> PyLaw {
        PyLaw(self.0.law.clone())
    }

    /// One stochastic replication, scaled by `N`.
    #[pyo3(signature = (population=None, replication=0))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        population: Option<u64>,
        replication: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let sim = self.0.sim_config(population.unwrap_or(self.0.simulation.population));
        sim.validate().map_err(to_py)?;
        let traj = py.detach(|| simulate_replication(&sim, replication)).map_err(to_py)?;
        let out = pyo3::types::PyDict::new(py);
        let col = |f: fn(&epi_volterra::abm::Record) -> f64| traj.records.iter().map(f).collect::<Vec<f64>>();
        out.set_item("t", col(|r| r.t))?;
        out.set_item("S", col(|r| r.s))?;
        out.set_item("I", col(|r| r.i))?;
        out.set_item("R", col(|r| r.r))?;
        out.set_item("curlyI", col(|r| r.curly_i))?;
        out.set_item("A", col(|r| r.a))?;
        out.set_item("Lambda", col(|r| r.lambda))?;
        out.set_item("age_edges", traj.age_edges.clone())?;
        out.set_item("age_profiles", traj.age_profiles.clone())?;
        out.set_item("events", traj.event_count)?;
        out.set_item("conservation_violations", traj.conservation_violations)?;
        Ok(out.into_any())
    }

    fn solve_limit(&self, py: Python<'_>) -> PyResult<PySolution> {
        let cfg = self.0.limit_config();
        py.detach(|| limit_solver::solve(&cfg)).map(PySolution).map_err(to_py)
    }

    #[pyo3(signature = (jobs=None))]
    fn run_checks<'py>(&self, py: Python<'py>, jobs: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| harness::run_checks(&self.0, jobs));
        to_object(py, &report)
    }

    #[pyo3(signature = (jobs=None))]
    fn run_convergence<'py>(&self, py: Python<'py>, jobs: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
        let (table, _) = py.detach(|| harness::run_convergence(&self.0, jobs)).map_err(to_py)?;
        to_object(py, &table)
    }

    #[pyo3(signature = (jobs=None))]
    fn run_martingale<'py>(&self, py: Python<'py>, jobs: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
        let rep = py.detach(|| harness::run_martingale(&self.0, jobs)).map_err(to_py)?;
        to_object(py, &rep)
    }
}

/// Deterministic limit on the lattice `t_n = n dt`.
#[pyclass(name = "LimitSolution", frozen)]
struct PySolution(LimitSolution);

#[pymethods]
impl PySolution {
    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }

    #[getter(S)]
    fn s(&self) -> Vec<f64> {
        self.0.s.clone()
    }

    #[getter(I)]
    fn i(&self) -> Vec<f64> {
        self.0.i.clone()
    }

    #[getter(R)]
    fn r(&self) -> Vec<f64> {
        self.0.r.clone()
    }

    #[getter(curlyI)]
    fn curly_i(&self) -> Vec<f64> {
        self.0.curly_i.clone()
    }

    #[getter]
    fn upsilon(&self) -> Vec<f64> {
        self.0.upsilon.clone()
    }

    fn mass_defect(&self) -> f64 {
        self.0.mass_defect()
    }

    /// Infected at `t_n` with infection age at most each of `ages` (sorted).
    fn cumulative(&self, n: usize, ages: Vec<f64>) -> PyResult<Vec<f64>> {
        if n > self.0.steps() {
            return Err(PyValueError::new_err(format!("time index {n} beyond {}", self.0.steps())));
        }
        Ok(self.0.cumulative_at_edges(n, &ages))
    }

    /// Age density `ī(t_n, j dt)` for `j = 0..=max_age/dt`.
    #[pyo3(signature = (n, max_age=None))]
    fn density(&self, n: usize, max_age: Option<f64>) -> PyResult<Vec<f64>> {
        if n > self.0.steps() {
            return Err(PyValueError::new_err(format!("time index {n} beyond {}", self.0.steps())));
        }
        let spec = GridSpec {
            dt: self.0.dt,
            rows: Some(vec![n]),
            max_age,
        };
        Ok(density_from_solution(&self.0, &spec, Continuity::Right).row(0).to_vec())
    }

    #[pyo3(signature = (cutoff=1e-6))]
    fn final_size(&self, cutoff: f64) -> PyResult<f64> {
        limit_solver::final_size(&self.0, cutoff).map(|f| f.phi).map_err(to_py)
    }
}

#[pymodule]
fn epi_volterra_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLifetime>()?;
    m.add_class::<PyLaw>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySolution>()?;
    Ok(())
}
