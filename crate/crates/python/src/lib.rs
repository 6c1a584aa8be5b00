//! Python bindings. Matrices cross the boundary as lists of row lists, so
//! nested Python lists and 2-d NumPy arrays are both accepted.

pub mod convert;

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eivreg::commands::{law_inputs, risk_problem, LawInputs};
use eivreg::config::{Config, Overrides};
use eivreg::estimators::{self, Estimator};
use eivreg::matcore::{self, Mat};
use eivreg::model::Restriction;
use eivreg::asymptotics::joint_law;
use eivreg::{montecarlo, verify, Error};

use convert::{mat_from_rows, mat_to_rows};

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn mat(rows: Rows, what: &str) -> PyResult<Mat> {
    mat_from_rows(&rows, what).map_err(py_err)
}

/// A validated run configuration.
#[pyclass(name = "Config", module = "pyeivreg", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    /// Parses TOML text; the bundled desk-scale plan when `toml` is omitted.
    #[new]
    #[pyo3(signature = (toml=None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => Config::from_toml_str(t).map_err(py_err)?,
            None => Config::default_desk(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Config::from_file(&path).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (seed=None, reps=None, n=None))]
    fn with_overrides(&self, seed: Option<u64>, reps: Option<usize>, n: Option<usize>) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner.apply(&Overrides { seed, reps, n }).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.canonical()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    fn restriction(&self) -> PyResult<PyRestriction> {
        Ok(PyRestriction {
            inner: self.inner.restriction().map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(n={}, p={}, q={}, master_seed={})",
            self.inner.n, self.inner.p, self.inner.q, self.inner.master_seed
        )
    }
}

/// The linear restriction `R1 B R2 = theta` with local-alternative direction `theta0`.
#[pyclass(name = "Restriction", module = "pyeivreg", skip_from_py_object)]
#[derive(Clone)]
struct PyRestriction {
    inner: Restriction,
}

#[pymethods]
impl PyRestriction {
    #[new]
    #[pyo3(signature = (r1, r2, theta, theta0=None))]
    fn new(r1: Rows, r2: Rows, theta: Rows, theta0: Option<Rows>) -> PyResult<Self> {
        let theta = mat(theta, "theta")?;
        let theta0 = match theta0 {
            Some(t) => mat(t, "theta0")?,
            None => Mat::zeros(theta.nrows(), theta.ncols()),
        };
        let inner = Restriction::new(mat(r1, "R1")?, mat(r2, "R2")?, theta, theta0).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// `R1 B R2 - theta`.
    fn residual(&self, b: Rows) -> PyResult<Rows> {
        Ok(mat_to_rows(&self.inner.residual(&mat(b, "B")?)))
    }

    #[getter]
    fn r1(&self) -> Rows {
        mat_to_rows(&self.inner.r1)
    }

    #[getter]
    fn r2(&self) -> Rows {
        mat_to_rows(&self.inner.r2)
    }

    #[getter]
    fn theta(&self) -> Rows {
        mat_to_rows(&self.inner.theta)
    }

    #[getter]
    fn theta0(&self) -> Rows {
        mat_to_rows(&self.inner.theta0)
    }
}

/// Population quantities and the estimated `Lambda` for one configuration.
#[pyclass(name = "Analysis", module = "pyeivreg")]
struct PyAnalysis {
    cfg: Config,
    inputs: LawInputs,
}

#[pymethods]
impl PyAnalysis {
    #[new]
    #[pyo3(signature = (config, workers=None))]
    fn new(py: Python<'_>, config: &PyConfig, workers: Option<usize>) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let inputs = py.detach(|| law_inputs(&cfg, workers)).map_err(py_err)?;
        Ok(Self { cfg, inputs })
    }

    #[getter]
    fn truth(&self) -> Rows {
        mat_to_rows(&self.inputs.truth)
    }

    #[getter]
    fn lambda_matrix(&self) -> Rows {
        mat_to_rows(&self.inputs.lambda.lambda)
    }

    /// Joint limit law of the configured estimators: labels, means and covariance.
    fn law<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let restr = self.cfg.restriction().map_err(py_err)?;
        let set: Vec<Estimator> = self
            .cfg
            .sim_estimators()
            .map_err(py_err)?
            .into_iter()
            .filter(|e| *e != Estimator::Lse)
            .collect();
        let law = joint_law(&self.inputs.pm, &self.inputs.lambda.lambda, &restr, &set, &restr.theta0)
            .map_err(py_err)?;
        let out = PyDict::new(py);
        let means = PyDict::new(py);
        for (label, mu) in law.labels.iter().zip(&law.means) {
            means.set_item(label, mat_to_rows(mu))?;
        }
        out.set_item("labels", law.labels.clone())?;
        out.set_item("means", means)?;
        out.set_item("cov", mat_to_rows(&law.full_cov()))?;
        Ok(out)
    }

    /// One ADR report per restricted estimator at the configured `theta0`.
    fn adr<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let prob = risk_problem(&self.cfg, &self.inputs).map_err(py_err)?;
        let theta0 = prob.restr.theta0.clone();
        let mut rows = Vec::new();
        for which in self.cfg.restricted_estimators().map_err(py_err)? {
            let q0 = self.inputs.pm.q0_for(&which).map_err(py_err)?;
            let r = prob.report(&q0, &theta0).map_err(py_err)?;
            let d = PyDict::new(py);
            d.set_item("estimator", which.label())?;
            d.set_item("adr_ue", r.adr_ue)?;
            d.set_item("adr_re", r.adr_re)?;
            d.set_item("f1", r.f1)?;
            d.set_item("quadratic", r.quadratic)?;
            d.set_item("lower_threshold", r.lower_threshold)?;
            d.set_item("upper_threshold", r.upper_threshold)?;
            d.set_item("theta0_norm2", r.theta0_norm2)?;
            d.set_item("verdict", r.verdict.to_string())?;
            d.set_item("relative_efficiency", r.relative_efficiency)?;
            d.set_item("F1", mat_to_rows(&r.f1_matrix))?;
            rows.push(d);
        }
        Ok(rows)
    }

    /// Relative efficiency of the configured estimator at the given scales of the direction.
    #[pyo3(signature = (scales=None))]
    fn efficiency<'py>(&self, py: Python<'py>, scales: Option<Vec<f64>>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let prob = risk_problem(&self.cfg, &self.inputs).map_err(py_err)?;
        let which = self.cfg.efficiency_estimator().map_err(py_err)?;
        let q0 = self.inputs.pm.q0_for(&which).map_err(py_err)?;
        let direction = self.cfg.efficiency_direction().map_err(py_err)?;
        let scales = match scales {
            Some(s) => s,
            None => eivreg::commands::efficiency_scales(&self.cfg, &prob, &q0, &direction).map_err(py_err)?,
        };
        let curve = prob.efficiency_curve(&q0, &direction, &scales).map_err(py_err)?;
        curve
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("scale", r.scale)?;
                d.set_item("theta0_norm2", r.theta0_norm2)?;
                d.set_item("adr_ue", r.adr_ue)?;
                d.set_item("adr_re", r.adr_re)?;
                d.set_item("relative_efficiency", r.relative_efficiency)?;
                d.set_item("verdict", r.verdict.to_string())?;
                Ok(d)
            })
            .collect()
    }
}

#[pyfunction]
fn lse(x: Rows, z: Rows) -> PyResult<Rows> {
    Ok(mat_to_rows(&estimators::lse(&mat(x, "X")?, &mat(z, "Z")?).map_err(py_err)?))
}

/// Attenuation-corrected unrestricted estimator.
#[pyfunction]
fn ue(x: Rows, z: Rows, sigma_delta2: f64) -> PyResult<Rows> {
    Ok(mat_to_rows(
        &estimators::ue(&mat(x, "X")?, &mat(z, "Z")?, sigma_delta2).map_err(py_err)?,
    ))
}

/// Every estimator for one dataset, keyed by label.
#[pyfunction]
fn estimate<'py>(
    py: Python<'py>,
    x: Rows,
    z: Rows,
    sigma_delta2: f64,
    restriction: &PyRestriction,
) -> PyResult<Bound<'py, PyDict>> {
    let set = estimators::named_res(&mat(x, "X")?, &mat(z, "Z")?, sigma_delta2, &restriction.inner)
        .map_err(py_err)?;
    let out = PyDict::new(py);
    for (label, m) in set.named() {
        out.set_item(label, mat_to_rows(m))?;
    }
    Ok(out)
}

#[pyfunction]
fn kron(a: Rows, b: Rows) -> PyResult<Rows> {
    Ok(mat_to_rows(&matcore::kron(&mat(a, "a")?, &mat(b, "b")?)))
}

/// Column-stacking vec.
#[pyfunction]
fn vec(m: Rows) -> PyResult<Vec<f64>> {
    Ok(matcore::vec(&mat(m, "m")?).iter().copied().collect())
}

#[pyfunction]
fn eig_extremes(s: Rows) -> PyResult<(f64, f64)> {
    matcore::eig_extremes(&mat(s, "s")?).map_err(py_err)
}

/// Monte Carlo summary: scaled mean errors, empirical covariance and counts.
#[pyfunction]
#[pyo3(signature = (config, workers=None))]
fn simulate<'py>(py: Python<'py>, config: &PyConfig, workers: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let plan = config.inner.plan().map_err(py_err)?;
    let s = py.detach(|| montecarlo::run(&plan, workers)).map_err(py_err)?;
    let out = PyDict::new(py);
    let means = PyDict::new(py);
    for (label, m) in s.labels.iter().zip(&s.mean_errors) {
        means.set_item(label, mat_to_rows(m))?;
    }
    out.set_item("labels", s.labels.clone())?;
    out.set_item("mean_errors", means)?;
    out.set_item("cov", mat_to_rows(&s.cov_empirical))?;
    out.set_item("reps", s.rep_count)?;
    out.set_item("excluded", s.excluded)?;
    out.set_item("max_constraint_violation", s.max_constraint_violation)?;
    Ok(out)
}

/// Runs the acceptance suite and returns one record per criterion.
#[pyfunction]
#[pyo3(signature = (config=None, workers=None))]
fn run_verify<'py>(
    py: Python<'py>,
    config: Option<&PyConfig>,
    workers: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.map_or_else(Config::default_desk, |c| c.inner.clone());
    let results = py.detach(|| verify::run_all(&cfg, workers));
    results
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("id", r.id)?;
            d.set_item("name", r.name)?;
            d.set_item("pass", r.pass)?;
            d.set_item("detail", &r.detail)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pyeivreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRestriction>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_function(wrap_pyfunction!(lse, m)?)?;
    m.add_function(wrap_pyfunction!(ue, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(kron, m)?)?;
    m.add_function(wrap_pyfunction!(vec, m)?)?;
    m.add_function(wrap_pyfunction!(eig_extremes, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    Ok(())
}
