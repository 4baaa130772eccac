//! Python bindings: build pipelines, integrate windows, solve and simulate.

use std::path::PathBuf;

use privmap::horizon::WindowData;
use privmap::{CondPmf, DistortionBudget, Pmf, WindowCache, WindowResult};
use privmap_cli::LoadedConfig;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: privmap::Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn cli_to_py(e: privmap_cli::CliError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn budgets(epsilons: &[f64]) -> PyResult<Vec<DistortionBudget>> {
    epsilons.iter().map(|&e| DistortionBudget::new(e).map_err(to_py)).collect()
}

fn pmf(q: Vec<f64>) -> PyResult<Pmf> {
    Pmf::new(q).map_err(to_py)
}

/// Solved window program.
#[pyclass(frozen, get_all, from_py_object)]
#[derive(Clone)]
pub struct Solution {
    pub k: usize,
    pub epsilon: f64,
    pub objective: f64,
    pub baseline: f64,
    pub distortion: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub q_star: Vec<f64>,
    pub first_stage: Vec<f64>,
    pub step_distortion: f64,
}

impl From<&WindowResult> for Solution {
    fn from(r: &WindowResult) -> Self {
        Self {
            k: r.k,
            epsilon: r.epsilon.value(),
            objective: r.objective,
            baseline: r.baseline,
            distortion: r.distortion,
            gap: r.gap,
            iterations: r.iterations,
            converged: r.converged,
            q_star: r.q_star.probs().to_vec(),
            first_stage: r.first_stage.clone(),
            step_distortion: r.step_distortion,
        }
    }
}

#[pymethods]
impl Solution {
    fn __repr__(&self) -> String {
        format!(
            "Solution(k={}, epsilon={}, objective={:.6}, converged={})",
            self.k, self.epsilon, self.objective, self.converged
        )
    }
}

/// Integrated window `k`: joint pmf and program data.
#[pyclass(frozen)]
pub struct Window {
    inner: WindowData,
}

#[pymethods]
impl Window {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    /// `p(y, s)` with the `y` block fastest.
    #[getter]
    fn joint(&self) -> Vec<f64> {
        self.inner.joint().probs().to_vec()
    }

    #[getter]
    fn raw_sum(&self) -> f64 {
        self.inner.cells.raw_sum()
    }

    #[getter]
    fn baseline(&self) -> f64 {
        self.inner.cost.baseline()
    }

    #[getter]
    fn n_vars(&self) -> usize {
        self.inner.cost.n_vars()
    }

    /// Distortion coefficient of every noise sequence.
    #[getter]
    fn distortion(&self) -> Vec<f64> {
        self.inner.cost.d().to_vec()
    }

    fn mutual_information(&self, q: Vec<f64>) -> PyResult<f64> {
        privmap::mi_of_noise(&pmf(q)?, &self.inner.cost).map_err(to_py)
    }

    fn gradient(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        privmap::mi_gradient(&pmf(q)?, &self.inner.cost).map_err(to_py)
    }
}

#[pyclass(frozen)]
pub struct Pipeline {
    inner: privmap::Pipeline,
    cache: Option<WindowCache>,
}

#[pymethods]
impl Pipeline {
    /// Loads an experiment config (JSON). `cache_dir` enables the window cache.
    #[new]
    #[pyo3(signature = (config, cache_dir=None))]
    fn new(config: PathBuf, cache_dir: Option<PathBuf>) -> PyResult<Self> {
        let loaded = LoadedConfig::from_path(&config).map_err(cli_to_py)?;
        Ok(Self {
            inner: loaded.pipeline().map_err(cli_to_py)?,
            cache: cache_dir.map(WindowCache::new),
        })
    }

    /// The reactor case study.
    #[staticmethod]
    #[pyo3(signature = (cache_dir=None))]
    fn reactor(cache_dir: Option<PathBuf>) -> PyResult<Self> {
        Ok(Self {
            inner: LoadedConfig::reactor().pipeline().map_err(cli_to_py)?,
            cache: cache_dir.map(WindowCache::new),
        })
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn n_v(&self) -> usize {
        self.inner.n_v()
    }

    /// Mean and covariance (row lists) of the lifted window Gaussian.
    fn lift(&self, k: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let g = self.inner.window_gaussian(k).map_err(to_py)?;
        let m = g.dim();
        let cov = (0..m).map(|i| (0..m).map(|j| g.cov()[(i, j)]).collect()).collect();
        Ok((g.mean().iter().copied().collect(), cov))
    }

    fn window(&self, py: Python<'_>, k: usize) -> PyResult<Window> {
        let inner = py
            .detach(|| self.inner.window(k, self.cache.as_ref()))
            .map_err(to_py)?;
        Ok(Window { inner })
    }

    fn solve(&self, py: Python<'_>, window: &Window, epsilons: Vec<f64>) -> PyResult<Vec<Solution>> {
        let eps = budgets(&epsilons)?;
        let res = py
            .detach(|| self.inner.solve_window_cached(&window.inner, &eps, self.cache.as_ref()))
            .map_err(to_py)?;
        Ok(res.iter().map(Solution::from).collect())
    }

    /// Receding-horizon results ordered by `k`, then budget.
    fn receding(&self, py: Python<'_>, epsilons: Vec<f64>, ks: Vec<usize>) -> PyResult<Vec<Solution>> {
        let eps = budgets(&epsilons)?;
        let res = py
            .detach(|| self.inner.receding_solve(&eps, &ks, self.cache.as_ref()))
            .map_err(to_py)?;
        Ok(res.iter().map(Solution::from).collect())
    }

    /// Simulates `k = 1..=len(solutions)` and returns the `(y_index, v, z_index)` per step.
    fn simulate(&self, solutions: Vec<Solution>, seed: u64) -> PyResult<Vec<(usize, usize, usize)>> {
        let results = solutions
            .iter()
            .map(|s| {
                let q_star = pmf(s.q_star.clone())?;
                Ok(WindowResult {
                    k: s.k,
                    epsilon: DistortionBudget::new(s.epsilon).map_err(to_py)?,
                    q_star,
                    objective: s.objective,
                    baseline: s.baseline,
                    distortion: s.distortion,
                    gap: s.gap,
                    iterations: s.iterations,
                    converged: s.converged,
                    first_stage: s.first_stage.clone(),
                    step_distortion: s.step_distortion,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let traj = self.inner.simulate(&results, seed, results.len()).map_err(to_py)?;
        Ok(traj.steps.iter().map(|s| (s.y_index, s.v, s.z_index)).collect())
    }
}

/// `I(S; Z)` in nats from `p(s)` and the rows of `p(z | s)`.
#[pyfunction]
fn mutual_information(p_s: Vec<f64>, p_z_given_s: Vec<Vec<f64>>) -> PyResult<f64> {
    let rows = p_z_given_s.len();
    let cols = p_z_given_s.first().map_or(0, Vec::len);
    let cond = CondPmf::new(rows, cols, p_z_given_s.concat(), vec![true; rows]).map_err(to_py)?;
    privmap::mutual_information(&pmf(p_s)?, &cond).map_err(to_py)
}

/// Rows of the channel `p(z | y)` induced by the noise pmf `q`.
#[pyfunction]
fn channel_from_noise(q: Vec<f64>, n_y: usize, horizon: usize) -> PyResult<Vec<Vec<f64>>> {
    let ch = privmap::pmf::channel_from_noise(&pmf(q)?, n_y, horizon).map_err(to_py)?;
    Ok((0..ch.rows()).map(|r| ch.row(r).to_vec()).collect())
}

#[pymodule]
fn privmap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pipeline>()?;
    m.add_class::<Window>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(channel_from_noise, m)?)?;
    Ok(())
}
