//! Python bindings. Matrices cross the boundary as lists of rows.

use std::time::Duration;

use l0dict_core::imaging::{add_gaussian_noise as noise, psnr as psnr_db, GrayImage};
use l0dict_core::learn::{self, Coder, CodingOptions, LearnConfig, Updater};
use l0dict_core::miqp::{self, build_problem, MiqpProblem, SolverLimits};
use l0dict_core::model::{self, project_dictionary};
use l0dict_core::{oracle, prox, Error};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if n == 0 || p == 0 {
        return Err(PyValueError::new_err("matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn image(rows_: &[Vec<f64>]) -> PyResult<GrayImage> {
    let m = matrix(rows_)?;
    GrayImage::new(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).map_err(py_err)
}

/// Column-normalized dictionary; atoms have Euclidean norm at most one.
#[pyclass(name = "Dictionary", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDictionary {
    inner: model::Dictionary,
}

#[pymethods]
impl PyDictionary {
    /// Validates that every atom already lies in the unit ball.
    #[new]
    fn new(atoms: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: model::Dictionary::new(matrix(&atoms)?).map_err(py_err)?,
        })
    }

    /// Rescales atoms with norm above one onto the unit sphere.
    #[staticmethod]
    fn project(atoms: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: project_dictionary(matrix(&atoms)?).map_err(py_err)?,
        })
    }

    #[getter]
    fn atoms(&self) -> Vec<Vec<f64>> {
        rows(self.inner.atoms())
    }

    #[getter]
    fn signal_dim(&self) -> usize {
        self.inner.signal_dim()
    }

    #[getter]
    fn atom_count(&self) -> usize {
        self.inner.atom_count()
    }

    fn __repr__(&self) -> String {
        format!("Dictionary({}x{})", self.inner.signal_dim(), self.inner.atom_count())
    }
}

#[pyclass(name = "MiqpSolution", frozen, get_all)]
struct PyMiqpSolution {
    x: Vec<f64>,
    support: Vec<usize>,
    objective: f64,
    lower_bound: f64,
    gap: f64,
    status: String,
    nodes: usize,
    big_m: f64,
}

#[pymethods]
impl PyMiqpSolution {
    fn __repr__(&self) -> String {
        format!(
            "MiqpSolution(objective={}, status={}, support={:?})",
            self.objective, self.status, self.support
        )
    }
}

#[pyfunction]
fn hard_threshold(x: Vec<f64>, budget: usize) -> PyResult<Vec<f64>> {
    Ok(prox::hard_threshold(&DVector::from_vec(x), budget)
        .map_err(py_err)?
        .as_slice()
        .to_vec())
}

/// Returns `(x, objective_trace)`.
#[pyfunction]
#[pyo3(signature = (y, dictionary, budget, max_iterations=200, x0=None))]
fn iht_solve(
    y: Vec<f64>,
    dictionary: &PyDictionary,
    budget: usize,
    max_iterations: usize,
    x0: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let settings = prox::IhtSettings {
        max_iterations,
        ..Default::default()
    };
    let x0 = x0.map(DVector::from_vec);
    let out = prox::iht_solve(&DVector::from_vec(y), &dictionary.inner, budget, &settings, x0.as_ref())
        .map_err(py_err)?;
    Ok((out.x.as_slice().to_vec(), out.objective_trace))
}

#[pyfunction]
fn omp(y: Vec<f64>, dictionary: &PyDictionary, budget: usize) -> PyResult<Vec<f64>> {
    Ok(learn::omp(&DVector::from_vec(y), &dictionary.inner, budget)
        .map_err(py_err)?
        .as_slice()
        .to_vec())
}

/// Exact l0-constrained least squares by branch and bound.
///
/// With `big_m` unset, the bound is `(1 + alpha)` times the largest entry of an
/// IHT warm start.
#[pyfunction]
#[pyo3(signature = (y, dictionary, budget, big_m=None, alpha=1.5, tightening=true, time_limit=50.0, node_limit=1_000_000, gap_tolerance=1e-6))]
#[allow(clippy::too_many_arguments)]
fn solve_miqp(
    y: Vec<f64>,
    dictionary: &PyDictionary,
    budget: usize,
    big_m: Option<f64>,
    alpha: f64,
    tightening: bool,
    time_limit: f64,
    node_limit: usize,
    gap_tolerance: f64,
) -> PyResult<PyMiqpSolution> {
    let y = DVector::from_vec(y);
    let dict = &dictionary.inner;
    let problem = match big_m {
        Some(m) => MiqpProblem::new(y, dict.clone(), budget, m).map_err(py_err)?,
        None => {
            let warm = prox::iht_solve(&y, dict, budget, &prox::IhtSettings::default(), None).map_err(py_err)?;
            build_problem(&y, dict, budget, Some(&warm.x), alpha).map_err(py_err)?
        }
    }
    .with_tightening(tightening);
    let limits = SolverLimits {
        time_limit: Duration::try_from_secs_f64(time_limit).map_err(|e| PyValueError::new_err(e.to_string()))?,
        node_limit,
        gap_tolerance,
        ..Default::default()
    };
    let sol = miqp::solve_miqp(&problem, &limits).map_err(py_err)?;
    Ok(PyMiqpSolution {
        x: sol.x.as_slice().to_vec(),
        support: (0..sol.z.len()).filter(|&i| sol.z[i]).collect(),
        objective: sol.objective,
        lower_bound: sol.lower_bound,
        gap: sol.gap,
        status: sol.status.as_str().to_string(),
        nodes: sol.stats.nodes_explored,
        big_m: problem.big_m(),
    })
}

/// Exhaustive search over supports; returns `(x, objective, support)`.
#[pyfunction]
fn best_subset(y: Vec<f64>, dictionary: &PyDictionary, budget: usize, big_m: f64) -> PyResult<(Vec<f64>, f64, Vec<usize>)> {
    let s = oracle::best_subset(&DVector::from_vec(y), &dictionary.inner, budget, big_m).map_err(py_err)?;
    Ok((s.x.as_slice().to_vec(), s.objective, s.support))
}

#[pyfunction]
#[pyo3(signature = (y, dictionary, budget, big_m, tightening=true))]
fn export_lp(y: Vec<f64>, dictionary: &PyDictionary, budget: usize, big_m: f64, tightening: bool) -> PyResult<String> {
    let problem = MiqpProblem::new(DVector::from_vec(y), dictionary.inner.clone(), budget, big_m).map_err(py_err)?;
    Ok(miqp::export_lp(&problem, tightening))
}

#[pyfunction]
fn psnr(reference: Vec<Vec<f64>>, test: Vec<Vec<f64>>) -> PyResult<f64> {
    psnr_db(&image(&reference)?, &image(&test)?).map_err(py_err)
}

#[pyfunction]
fn add_gaussian_noise(img: Vec<Vec<f64>>, sigma: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let out = noise(&image(&img)?, sigma, seed).map_err(py_err)?;
    Ok(out.pixels().chunks(out.width()).map(<[f64]>::to_vec).collect())
}

/// Alternating dictionary learning on the columns of `signals`.
///
/// Returns `(dictionary, codes, objectives)` with one objective per iteration.
#[pyfunction]
#[pyo3(signature = (signals, atoms, budget, iterations=10, coder="miqp", updater="ls", seed=0, node_limit=1_000_000, time_limit=50.0))]
#[allow(clippy::too_many_arguments)]
fn learn_dictionary(
    signals: Vec<Vec<f64>>,
    atoms: usize,
    budget: usize,
    iterations: usize,
    coder: &str,
    updater: &str,
    seed: u64,
    node_limit: usize,
    time_limit: f64,
) -> PyResult<(PyDictionary, Vec<Vec<f64>>, Vec<f64>)> {
    let batch = model::SignalBatch::new(matrix(&signals)?).map_err(py_err)?;
    let config = LearnConfig {
        atom_count: atoms,
        budget,
        outer_iterations: iterations,
        coder: coder.parse::<Coder>().map_err(py_err)?,
        updater: updater.parse::<Updater>().map_err(py_err)?,
        coding: CodingOptions {
            limits: SolverLimits {
                node_limit,
                time_limit: Duration::try_from_secs_f64(time_limit)
                    .map_err(|e| PyValueError::new_err(e.to_string()))?,
                ..Default::default()
            },
            ..Default::default()
        },
        seed,
        ..Default::default()
    };
    let out = learn::learn(&batch, &config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let objectives = out.trace.entries.iter().map(|e| e.objective).collect();
    Ok((
        PyDictionary { inner: out.dictionary },
        rows(out.codes.codes()),
        objectives,
    ))
}

#[pymodule]
fn l0dict(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDictionary>()?;
    m.add_class::<PyMiqpSolution>()?;
    m.add_function(wrap_pyfunction!(hard_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(iht_solve, m)?)?;
    m.add_function(wrap_pyfunction!(omp, m)?)?;
    m.add_function(wrap_pyfunction!(solve_miqp, m)?)?;
    m.add_function(wrap_pyfunction!(best_subset, m)?)?;
    m.add_function(wrap_pyfunction!(export_lp, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(add_gaussian_noise, m)?)?;
    m.add_function(wrap_pyfunction!(learn_dictionary, m)?)?;
    Ok(())
}
