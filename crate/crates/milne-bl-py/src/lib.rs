//! Python bindings: the Milne slab solver, its diagnostics, the ball Monte Carlo
//! and the configuration-driven runner.
//!
//! Structured inputs (curvature profiles, data, grids) are plain dicts with the
//! same keys as the TOML configs; structured outputs are dicts.

use std::sync::Arc;

use milne_bl::cli;
use milne_bl::config::RunConfig;
use milne_bl::diagnostics;
use milne_bl::diffusive_limit::{self, BallDatum, BallProblem, NeumannScaling};
use milne_bl::geometry::{CurvatureProfile, MilneConfig};
use milne_bl::milne_solver::{self, BoundaryKind, MilneProblem};
use milne_bl::phase_grid::{self, GridSpec};
use milne_bl::presets::{DatumPreset, SourcePreset};
use milne_bl::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(milne_bl, IncompatibleError, PyValueError, "Boundary data violate the compatibility condition.");
create_exception!(milne_bl, NonConvergenceError, PyRuntimeError, "Source iteration did not converge.");

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Incompatible { .. } => IncompatibleError::new_err(e.to_string()),
        Error::NonConvergence { .. } => NonConvergenceError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn opt_from_py<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    obj.map_or_else(|| Ok(T::default()), |o| from_py(py, o))
}

/// Slab problem: geometry, in-flow datum, optional source and boundary kind.
#[pyclass(name = "MilneProblem", module = "milne_bl", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMilneProblem {
    inner: MilneProblem,
}

#[pymethods]
impl PyMilneProblem {
    /// `profile`, `datum`, `source` and `grid` use the TOML config keys,
    /// e.g. `{"kind": "constant", "r1": 1.0, "r2": 1.0}`.
    #[new]
    #[pyo3(signature = (epsilon, n_exponent, profile, datum, source=None, grid=None, boundary="inflow", tau=[0.0, 0.0]))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        py: Python<'_>,
        epsilon: f64,
        n_exponent: f64,
        profile: &Bound<'_, PyAny>,
        datum: &Bound<'_, PyAny>,
        source: Option<&Bound<'_, PyAny>>,
        grid: Option<&Bound<'_, PyAny>>,
        boundary: &str,
        tau: [f64; 2],
    ) -> PyResult<Self> {
        let prof: CurvatureProfile = from_py(py, profile)?;
        let h: DatumPreset = from_py(py, datum)?;
        let grid: GridSpec = opt_from_py(py, grid)?;
        let boundary = match boundary {
            "inflow" => BoundaryKind::Inflow,
            "diffusive" => BoundaryKind::Diffusive,
            other => return Err(PyValueError::new_err(format!("unknown boundary {other:?}"))),
        };
        let cfg = MilneConfig::new(epsilon, n_exponent).map_err(to_py_err)?.with_grid(grid);
        let mut p = MilneProblem::new(cfg, prof, h).map_err(to_py_err)?.with_boundary(boundary).with_tau(tau);
        if let Some(s) = source {
            let s: SourcePreset = from_py(py, s)?;
            p = p.with_source_arc(Arc::new(s));
        }
        Ok(PyMilneProblem { inner: p })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.cfg.epsilon
    }

    #[getter]
    fn slab_length(&self) -> f64 {
        self.inner.cfg.slab_length
    }

    /// Solves by source iteration; the GIL is released meanwhile.
    fn solve(&self, py: Python<'_>) -> PyResult<PyMilneSolution> {
        let p = self.inner.clone();
        let sol = py
            .detach(move || match p.boundary {
                BoundaryKind::Inflow => milne_solver::solve_inflow(&p),
                BoundaryKind::Diffusive => milne_solver::solve_diffusive(&p),
            })
            .map_err(to_py_err)?;
        Ok(PyMilneSolution { inner: sol })
    }

    /// Compatibility defect of the diffusive problem; zero when solvable.
    fn compatibility_defect(&self) -> PyResult<f64> {
        milne_solver::check_compatibility(&self.inner.clone().with_boundary(BoundaryKind::Diffusive)).map_err(to_py_err)
    }
}

#[pyclass(name = "MilneSolution", module = "milne_bl", frozen)]
struct PyMilneSolution {
    inner: milne_solver::MilneSolution,
}

#[pymethods]
impl PyMilneSolution {
    #[getter]
    fn f_l(&self) -> f64 {
        self.inner.f_l
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn residual_history(&self) -> Vec<f64> {
        self.inner.residual_history.clone()
    }

    #[getter]
    fn eta(&self) -> Vec<f64> {
        self.inner.grid().eta.clone()
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.inner.grid().phi.clone()
    }

    #[getter]
    fn psi(&self) -> Vec<f64> {
        self.inner.grid().psi.clone()
    }

    /// Angular mean at each depth node.
    #[getter]
    fn fbar(&self) -> Vec<f64> {
        self.inner.fbar.clone()
    }

    /// Nodal values, flattened with `psi` fastest, then `phi`, then `eta`.
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.f.values.clone()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let g = self.inner.grid();
        (g.n_eta(), g.n_phi(), g.n_psi())
    }

    fn value(&self, i: usize, j: usize, l: usize) -> PyResult<f64> {
        let g = self.inner.grid();
        if i >= g.n_eta() || j >= g.n_phi() || l >= g.n_psi() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.f.get(i, j, l))
    }

    fn alpha(&self) -> Vec<f64> {
        (0..self.inner.grid().n_eta()).map(|i| diagnostics::alpha(&self.inner, i)).collect()
    }

    fn flux(&self) -> Vec<f64> {
        (0..self.inner.grid().n_eta()).map(|i| diagnostics::flux(&self.inner, i)).collect()
    }

    fn energy_identity_residual(&self) -> f64 {
        diagnostics::energy_identity_residual(&self.inner)
    }

    fn decay_fit(&self, py: Python<'_>, k0: f64) -> PyResult<Py<PyAny>> {
        to_py(py, &diagnostics::decay_fit(&self.inner, k0))
    }

    /// Norms, functionals and the decay fit as a dict.
    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &cli::solve_summary(&self.inner))
    }

    fn norms(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let n = phase_grid::norms(&self.inner.f);
        let d = PyDict::new(py);
        d.set_item("l2_total", n.l2_total)?;
        d.set_item("linf_total", n.linf_total)?;
        Ok(d.into_any().unbind())
    }
}

/// Monte Carlo estimate of the ball transport solution at the tally points.
#[pyfunction]
#[pyo3(signature = (epsilon, n_samples, seed, tally_points=None, neumann="inverse_pi"))]
fn ball_monte_carlo(
    py: Python<'_>,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    tally_points: Option<Vec<[f64; 3]>>,
    neumann: &str,
) -> PyResult<Py<PyAny>> {
    let mut p = BallProblem::new(epsilon, BallDatum::CosTheta, n_samples, seed).map_err(to_py_err)?;
    if let Some(t) = tally_points {
        p.tally_points = t;
    }
    p.neumann = match neumann {
        "inverse_pi" => NeumannScaling::InversePi,
        "flux_balance" => NeumannScaling::FluxBalance,
        other => return Err(PyValueError::new_err(format!("unknown neumann scaling {other:?}"))),
    };
    let r = py.detach(move || diffusive_limit::mc_solve(&p)).map_err(to_py_err)?;
    to_py(py, &r)
}

/// Runs a TOML configuration in memory and returns its summary dict.
#[pyfunction]
fn run_config(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::parse(text).map_err(to_py_err)?;
    let out = py.detach(move || cli::execute(&cfg)).map_err(to_py_err)?;
    to_py(py, &out.summary)
}

/// Built-in consistency checks; returns the report dict.
#[pyfunction]
fn selftest(py: Python<'_>) -> PyResult<Py<PyAny>> {
    let r = py.detach(|| cli::selftest(None));
    to_py(py, &r)
}

/// Maximum energy and zeta drift over `n` random characteristic traces.
#[pyfunction]
fn characteristic_drift(n: usize, seed: u64) -> PyResult<(f64, f64)> {
    cli::characteristic_drift(n, seed).map_err(to_py_err)
}

#[pymodule(name = "milne_bl")]
fn milne_bl_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("IncompatibleError", m.py().get_type::<IncompatibleError>())?;
    m.add("NonConvergenceError", m.py().get_type::<NonConvergenceError>())?;
    m.add_class::<PyMilneProblem>()?;
    m.add_class::<PyMilneSolution>()?;
    m.add_function(wrap_pyfunction!(ball_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    m.add_function(wrap_pyfunction!(characteristic_drift, m)?)?;
    Ok(())
}
